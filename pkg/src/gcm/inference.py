"""Two-stage seen/unseen inference.

Stage one decides seen vs unseen: top-K probability pooling for ZSL, minimum
counterfactual distance against a threshold for OSR. Stage two is the built-in
joint linear classifier restricted to the chosen side, or rejection to
``UNKNOWN`` for OSR.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from src.core.errors import EmptyInputError, ShapeError
from src.core.logger import get_logger, log_timing
from src.core.seeding import derive_seed, numpy_rng, seeded_torch, torch_generator

from .counterfactual import CounterfactualSet
from .metrics import UNKNOWN, SUCPoint, macro_f1_unknown, suc_sweep

logger = get_logger(__name__)

STAGE2_LABEL = "built-in joint linear classifier"
DEFAULT_K = 10
OMEGA_GRID_POINTS = 41


@dataclass
class BinaryDecision:
    label: Literal["seen", "unseen"]
    score: float
    detail: Dict[str, object] = field(default_factory=dict)


class JointClassifier(nn.Module):
    """One fully-connected layer + softmax over the seen and unseen vocabulary.

    Inputs are standardised with statistics of the training pool.
    """

    def __init__(
        self,
        feature_dim: int,
        vocabulary: Sequence[int],
        seen_ids: Sequence[int],
        mean: Optional[torch.Tensor] = None,
        scale: Optional[torch.Tensor] = None,
    ):
        super().__init__()
        self.vocabulary = [int(c) for c in vocabulary]
        seen = set(int(c) for c in seen_ids)
        self.seen_mask = np.array([c in seen for c in self.vocabulary], dtype=bool)
        self.fc = nn.Linear(feature_dim, len(self.vocabulary))
        self.register_buffer("mean", mean if mean is not None else torch.zeros(feature_dim))
        self.register_buffer("scale", scale if scale is not None else torch.ones(feature_dim))

    @property
    def vocabulary_size(self) -> int:
        return len(self.vocabulary)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc((x - self.mean) / self.scale)

    def logits(self, x: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return self.forward(torch.as_tensor(x, dtype=self.fc.weight.dtype)).numpy().astype(np.float64)

    def probabilities(self, x: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return torch.softmax(self.forward(torch.as_tensor(x, dtype=self.fc.weight.dtype)), dim=-1).numpy()


@log_timing()
def train_joint_classifier(
    seen_x: np.ndarray,
    seen_labels: np.ndarray,
    cf_x: np.ndarray,
    cf_labels: np.ndarray,
    seen_ids: Sequence[int],
    unseen_ids: Sequence[int],
    epochs: int = 100,
    lr: float = 1e-2,
    batch_size: int = 128,
    seed: int = 0,
) -> JointClassifier:
    """Cross-entropy fit on seen data plus unseen counterfactuals, class-balanced."""
    if len(cf_labels) == 0 and len(unseen_ids) > 0:
        raise EmptyInputError("no counterfactual features for the unseen classes")
    seen_x = np.asarray(seen_x, dtype=np.float32).reshape(len(seen_labels), -1)
    cf_x = np.asarray(cf_x, dtype=np.float32).reshape(len(cf_labels), seen_x.shape[1])
    vocabulary = list(seen_ids) + list(unseen_ids)
    column = {c: i for i, c in enumerate(vocabulary)}
    x = np.concatenate([seen_x, cf_x]) if len(cf_labels) else seen_x
    labels = np.concatenate([np.asarray(seen_labels), np.asarray(cf_labels)]).astype(np.int64)
    counts = np.bincount([column[int(c)] for c in labels], minlength=len(vocabulary))
    missing = [vocabulary[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        raise EmptyInputError(f"classes {missing} have no training samples")
    targets = torch.as_tensor([column[int(c)] for c in labels], dtype=torch.long)
    features = torch.as_tensor(x)

    mean = features.mean(dim=0)
    scale = features.std(dim=0, unbiased=False).clamp_min(1e-6)
    weights = torch.as_tensor(counts.sum() / (len(vocabulary) * counts), dtype=torch.float32)

    with seeded_torch(derive_seed(seed, "classifier")):
        clf = JointClassifier(features.shape[1], vocabulary, seen_ids, mean, scale)
    loader = DataLoader(
        TensorDataset(features, targets),
        batch_size=batch_size,
        shuffle=True,
        generator=torch_generator(seed, "classifier"),
    )
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    clf.train()
    for _ in range(epochs):
        for xb, tb in loader:
            opt.zero_grad()
            F.cross_entropy(clf(xb), tb, weight=weights).backward()
            opt.step()
    clf.eval()
    train_acc = float((clf(features).argmax(dim=1) == targets).float().mean())
    logger.info(f"Joint classifier over {len(vocabulary)} classes, train accuracy {train_acc:.3f}")
    return clf


def calibrated_probabilities(logits: np.ndarray, seen_mask: np.ndarray, omega: float) -> np.ndarray:
    """Softmax after subtracting omega from seen logits; +-inf zero out one side."""
    logits = np.asarray(logits, dtype=np.float64)
    seen_mask = np.asarray(seen_mask, dtype=bool)
    if math.isinf(omega):
        keep = ~seen_mask if omega > 0 else seen_mask
        shifted = np.where(keep, logits, -np.inf)
    else:
        shifted = logits - omega * seen_mask
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _clip_k(k: int, seen_mask: np.ndarray) -> int:
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")
    n_seen = int(seen_mask.sum())
    n_unseen = int((~seen_mask).sum())
    if n_seen == 0 or n_unseen == 0:
        raise EmptyInputError("top-K pooling needs both seen and unseen columns")
    return min(k, n_seen, n_unseen)


def pooled_scores(probs: np.ndarray, seen_mask: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """(S^K, U^K): mean of the K largest seen / unseen probabilities per row."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    seen_mask = np.asarray(seen_mask, dtype=bool)
    k = _clip_k(k, seen_mask)
    seen_top = -np.sort(-probs[:, seen_mask], axis=1)[:, :k]
    unseen_top = -np.sort(-probs[:, ~seen_mask], axis=1)[:, :k]
    return seen_top.mean(axis=1), unseen_top.mean(axis=1)


def zsl_binary(probs: np.ndarray, seen_mask: np.ndarray, K: int = DEFAULT_K) -> BinaryDecision:
    probs = np.asarray(probs, dtype=np.float64)
    seen_mask = np.asarray(seen_mask, dtype=bool)
    if probs.ndim != 1 or probs.shape != seen_mask.shape:
        raise ShapeError("probability vector and seen mask must be 1-D of equal length")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, abs_tol=1e-5):
        raise ValueError("malformed probability vector")
    s_k, u_k = pooled_scores(probs, seen_mask, K)
    s_k, u_k = float(s_k[0]), float(u_k[0])
    label = "seen" if u_k < s_k else "unseen"
    return BinaryDecision(label, s_k - u_k, {"S_K": s_k, "U_K": u_k, "K": _clip_k(K, seen_mask)})


def osr_binary(x: torch.Tensor, cf_set: CounterfactualSet, tau: float) -> BinaryDecision:
    if len(cf_set) == 0:
        raise EmptyInputError("counterfactual set is empty")
    d_min = cf_set.min_distance()
    label = "unseen" if d_min > tau else "seen"
    return BinaryDecision(label, d_min, {"distances": cf_set.distance_by_target(), "tau": tau})


@dataclass
class StagePredictions:
    predicted_unseen: np.ndarray
    final: np.ndarray
    score: np.ndarray


def two_stage_zsl(
    logits: np.ndarray, classifier: JointClassifier, K: int = DEFAULT_K, omega_cal: float = 0.0
) -> StagePredictions:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    mask = classifier.seen_mask
    probs = calibrated_probabilities(logits, mask, omega_cal)
    s_k, u_k = pooled_scores(probs, mask, K)
    unseen = ~(u_k < s_k)
    vocab = np.asarray(classifier.vocabulary)
    seen_cols = np.flatnonzero(mask)
    unseen_cols = np.flatnonzero(~mask)
    seen_pick = vocab[seen_cols[np.argmax(probs[:, seen_cols], axis=1)]]
    unseen_pick = vocab[unseen_cols[np.argmax(probs[:, unseen_cols], axis=1)]]
    if math.isinf(omega_cal) and omega_cal > 0:
        seen_pick = vocab[seen_cols[np.argmax(logits[:, seen_cols], axis=1)]]
    if math.isinf(omega_cal) and omega_cal < 0:
        unseen_pick = vocab[unseen_cols[np.argmax(logits[:, unseen_cols], axis=1)]]
    final = np.where(unseen, unseen_pick, seen_pick)
    return StagePredictions(unseen, final.astype(np.int64), s_k - u_k)


def two_stage_osr(
    distances: np.ndarray, seen_probs: np.ndarray, seen_ids: Sequence[int], tau: float
) -> StagePredictions:
    """distances: (N, |S|) counterfactual distances; seen_probs: known-class softmax."""
    distances = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    if distances.shape[1] == 0:
        raise EmptyInputError("no seen counterfactuals to compare against")
    d_min = distances.min(axis=1)
    unseen = d_min > tau
    seen_pick = np.asarray(seen_ids)[np.argmax(np.atleast_2d(seen_probs), axis=1)]
    final = np.where(unseen, UNKNOWN, seen_pick)
    return StagePredictions(unseen, final.astype(np.int64), d_min)


def default_omega_grid(logits: np.ndarray, seen_mask: np.ndarray) -> List[float]:
    """41 points across the 1st-99th percentile of the seen-minus-unseen logit gap, widened by 1."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    gap = logits[:, seen_mask].max(axis=1) - logits[:, ~seen_mask].max(axis=1)
    lo, hi = np.percentile(gap, [1, 99])
    return np.linspace(lo - 1.0, hi + 1.0, OMEGA_GRID_POINTS).tolist()


def suc_curve(
    logits: np.ndarray,
    classifier: JointClassifier,
    labels: Sequence[int],
    seen_ids: Sequence[int],
    unseen_ids: Sequence[int],
    grid: Optional[Sequence[float]] = None,
    K: int = DEFAULT_K,
) -> List[SUCPoint]:
    grid = list(grid) if grid else default_omega_grid(logits, classifier.seen_mask)
    return suc_sweep(
        lambda omega: two_stage_zsl(logits, classifier, K, omega).final,
        labels,
        seen_ids,
        unseen_ids,
        grid,
    )


def default_tau_grid(d_min: np.ndarray, points: int = 101) -> List[float]:
    d_min = np.asarray(d_min, dtype=np.float64)
    return sorted(set(np.percentile(d_min, np.linspace(0, 100, points)).tolist()))


def tune_tau(
    d_min: np.ndarray,
    seen_preds: np.ndarray,
    labels: np.ndarray,
    seen_ids: Sequence[int],
    grid: Optional[Sequence[float]] = None,
) -> Tuple[float, float]:
    """Threshold with the best macro-F1 on a labelled validation split; ties keep the smallest."""
    d_min = np.asarray(d_min, dtype=np.float64)
    if d_min.size == 0:
        raise EmptyInputError("tau tuning needs validation samples")
    candidates = sorted(grid) if grid else default_tau_grid(d_min)
    best_tau, best_f1 = candidates[0], -1.0
    for tau in candidates:
        preds = np.where(d_min > tau, UNKNOWN, seen_preds)
        f1 = macro_f1_unknown(preds, labels, seen_ids)
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1
    logger.info(f"Tuned tau={best_tau:.4f} (validation macro-F1 {best_f1:.4f})")
    return best_tau, best_f1


def validation_halves(test_idx: Sequence[int], labels: np.ndarray, seed: int) -> Tuple[List[int], List[int]]:
    """Stratified half split of the test indices into (validation, evaluation)."""
    rng = numpy_rng(seed, "validation")
    idx = np.asarray(sorted(test_idx), dtype=np.int64)
    val: List[int] = []
    rest: List[int] = []
    for cid in sorted(set(labels[idx].tolist())):
        members = rng.permutation(idx[labels[idx] == cid])
        half = members.size // 2
        val.extend(members[:half].tolist())
        rest.extend(members[half:].tolist())
    return sorted(val), sorted(rest)
