"""Seen/unseen evaluation metrics and the EvalReport schema."""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import f1_score

from src.core.errors import EmptyInputError

UNKNOWN = -1

_JSON = ConfigDict(ser_json_inf_nan="strings")


class SUCPoint(BaseModel):
    model_config = _JSON

    omega: float
    U: float
    S: float


class OpennessPoint(BaseModel):
    model_config = _JSON

    M: int
    openness: float
    f1_macro: float


class EntangledPair(BaseModel):
    i: int
    j: int
    cov_seen: float
    cov_unseen: float
    gap: float


class EvalReport(BaseModel):
    """Evaluation summary; field order is the JSON order"""

    model_config = _JSON

    mode: str
    stage2: str
    seed: int
    config_hash: str
    U: float
    S: float
    H: float
    S_b: Optional[float] = None
    U_b: Optional[float] = None
    CVb: Optional[float] = None
    AUSUC: Optional[float] = None
    suc_curve: List[SUCPoint] = []
    f1_macro: Optional[float] = None
    openness: Optional[float] = None
    openness_f1: List[OpennessPoint] = []
    consistency_rate: Optional[float] = None
    closed_set_accuracy: Optional[float] = None
    K: Optional[int] = None
    omega_cal: Optional[float] = None
    tau: Optional[float] = None
    attribute_entanglement: List[EntangledPair] = []
    per_split: List[Dict[str, float]] = []
    percent: Dict[str, float] = {}

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def percent_summary(values: Dict[str, Optional[float]]) -> Dict[str, float]:
    """Percentages rounded to one decimal."""
    return {k: round(100.0 * v, 1) for k, v in values.items() if v is not None and math.isfinite(v)}


def per_class_top1(preds: Sequence[int], labels: Sequence[int], class_set: Sequence[int]) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    classes = list(class_set)
    if not classes:
        raise EmptyInputError("per_class_top1 needs at least one class")
    accs = []
    for c in classes:
        mask = labels == c
        if not mask.any():
            raise EmptyInputError(f"class {c} has no samples")
        accs.append(float(np.mean(preds[mask] == c)))
    return float(np.mean(accs))


def harmonic_mean(U: float, S: float) -> float:
    if U < 0 or S < 0:
        raise ValueError(f"accuracies must be non-negative, got U={U}, S={S}")
    if U + S == 0:
        return 0.0
    return 2.0 * S * U / (S + U)


def cvb(S_b: float, U_b: float) -> float:
    """Coefficient of variation of the seen and unseen binary accuracies."""
    mu = (S_b + U_b) / 2.0
    if mu == 0:
        raise ValueError("CVb is undefined when both binary accuracies are zero")
    return math.sqrt(0.5 * (S_b - mu) ** 2 + 0.5 * (U_b - mu) ** 2) / mu


def binary_accuracies(predicted_unseen: Sequence[bool], truly_unseen: Sequence[bool]) -> Tuple[float, float]:
    """(S_b, U_b); NaN for a side with no samples."""
    pred = np.asarray(predicted_unseen, dtype=bool)
    truth = np.asarray(truly_unseen, dtype=bool)
    s_b = float(np.mean(~pred[~truth])) if (~truth).any() else float("nan")
    u_b = float(np.mean(pred[truth])) if truth.any() else float("nan")
    return s_b, u_b


def suc_sweep(
    predict: Callable[[float], np.ndarray],
    labels: Sequence[int],
    seen_ids: Sequence[int],
    unseen_ids: Sequence[int],
    grid: Sequence[float],
) -> List[SUCPoint]:
    """(U, S) per calibration factor, bracketed by the -inf and +inf sentinels.

    ``predict(omega)`` returns final class predictions for the test samples
    under calibration ``omega``.
    """
    grid = list(grid)
    if not grid:
        raise EmptyInputError("calibration grid is empty")
    labels = np.asarray(labels)
    points = []
    for omega in [-math.inf] + sorted(float(w) for w in grid) + [math.inf]:
        preds = np.asarray(predict(omega))
        points.append(
            SUCPoint(
                omega=omega,
                U=per_class_top1(preds, labels, unseen_ids),
                S=per_class_top1(preds, labels, seen_ids),
            )
        )
    return points


def ausuc(curve: Sequence[SUCPoint]) -> float:
    """Trapezoidal area over de-duplicated (U, S) points, U ascending and S descending on ties."""
    if len(curve) < 2:
        raise ValueError("AUSUC needs at least two curve points")
    pts = sorted({(float(p.U), float(p.S)) for p in curve}, key=lambda p: (p[0], -p[1]))
    if len(pts) < 2:
        return 0.0
    area = 0.0
    for (u0, s0), (u1, s1) in zip(pts[:-1], pts[1:]):
        area += (u1 - u0) * (s0 + s1) / 2.0
    return area


def _to_open_labels(values: np.ndarray, seen: set) -> np.ndarray:
    return np.array([v if v in seen else UNKNOWN for v in values.tolist()], dtype=np.int64)


def macro_f1_unknown(preds: Sequence[int], labels: Sequence[int], seen_classes: Sequence[int]) -> float:
    """Macro F1 over the seen classes plus one "unknown" category."""
    seen = [int(c) for c in seen_classes]
    seen_set = set(seen)
    y_pred = _to_open_labels(np.asarray(preds, dtype=np.int64), seen_set)
    y_true = _to_open_labels(np.asarray(labels, dtype=np.int64), seen_set)
    return float(
        f1_score(y_true, y_pred, labels=seen + [UNKNOWN], average="macro", zero_division=0)
    )


def openness(N: int, M: int) -> float:
    if N < 1 or M < 0:
        raise ValueError(f"openness needs N >= 1 and M >= 0, got N={N}, M={M}")
    return 1.0 - math.sqrt(2.0 * N / (N + M))


def openness_f1_series(
    preds: Sequence[int],
    labels: Sequence[int],
    seen_ids: Sequence[int],
    unseen_order: Sequence[int],
) -> List[OpennessPoint]:
    """Macro F1 as unseen classes are admitted one at a time."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    seen = list(seen_ids)
    series = []
    admitted = set(seen)
    for m, cid in enumerate(unseen_order, start=1):
        admitted.add(int(cid))
        mask = np.isin(labels, list(admitted))
        series.append(
            OpennessPoint(
                M=m,
                openness=openness(len(seen), m),
                f1_macro=macro_f1_unknown(preds[mask], labels[mask], seen),
            )
        )
    return series


def closed_set_accuracy(seen_preds: Sequence[int], labels: Sequence[int]) -> float:
    seen_preds = np.asarray(seen_preds)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInputError("closed-set accuracy needs at least one sample")
    return float(np.mean(seen_preds == labels))


def attribute_entanglement(
    attributes: np.ndarray,
    seen_ids: Sequence[int],
    unseen_ids: Sequence[int],
    top: int = 5,
) -> List[EntangledPair]:
    """Attribute pairs whose covariance among seen classes departs most from unseen."""
    if len(seen_ids) < 2 or len(unseen_ids) < 2:
        raise EmptyInputError("attribute covariance needs two classes on each side")
    attributes = np.asarray(attributes, dtype=np.float64)
    cov_s = np.cov(attributes[list(seen_ids)], rowvar=False)
    cov_u = np.cov(attributes[list(unseen_ids)], rowvar=False)
    a = attributes.shape[1]
    pairs = [
        EntangledPair(
            i=i,
            j=j,
            cov_seen=float(cov_s[i, j]),
            cov_unseen=float(cov_u[i, j]),
            gap=float(abs(cov_s[i, j] - cov_u[i, j])),
        )
        for i in range(a)
        for j in range(i + 1, a)
    ]
    pairs.sort(key=lambda p: (-p.gap, p.i, p.j))
    return pairs[:top]
