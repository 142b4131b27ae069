"""End-to-end ZSL and OSR evaluation of a trained model on a bundle."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.core.errors import BundleValidationError, EmptyInputError
from src.core.logger import get_logger, log_timing
from src.core.run_config import RunConfig
from src.gcm.counterfactual import CounterfactualGenerator, ZMode
from src.gcm.data import DatasetBundle
from src.gcm.inference import (
    STAGE2_LABEL,
    StagePredictions,
    suc_curve,
    train_joint_classifier,
    tune_tau,
    two_stage_osr,
    two_stage_zsl,
    validation_halves,
)
from src.gcm.metrics import (
    EntangledPair,
    EvalReport,
    SUCPoint,
    attribute_entanglement,
    ausuc,
    binary_accuracies,
    closed_set_accuracy,
    cvb,
    harmonic_mean,
    macro_f1_unknown,
    openness,
    openness_f1_series,
    per_class_top1,
    percent_summary,
)
from src.gcm.model import GenerativeCausalModel

logger = get_logger(__name__)

OSR_STAGE2_LABEL = "regressor known-class softmax with rejection"
PREDICTION_COLUMNS = ("sample_id", "binary_label", "final_label", "score")


@dataclass
class EvalOutcome:
    report: EvalReport
    sample_ids: np.ndarray
    predictions: StagePredictions
    curve: List[SUCPoint] = field(default_factory=list)

    def prediction_rows(self) -> List[list]:
        return [
            [int(sid), "unseen" if unseen else "seen", int(final), float(score)]
            for sid, unseen, final, score in zip(
                self.sample_ids,
                self.predictions.predicted_unseen,
                self.predictions.final,
                self.predictions.score,
            )
        ]


def _tensor(model: GenerativeCausalModel, values: np.ndarray) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(np.asarray(values), dtype=dtype)


def _safe_cvb(s_b: float, u_b: float) -> Optional[float]:
    if not (math.isfinite(s_b) and math.isfinite(u_b)) or s_b + u_b == 0:
        return None
    return cvb(s_b, u_b)


def _entanglement(bundle: DatasetBundle) -> List[EntangledPair]:
    try:
        return attribute_entanglement(bundle.attributes, bundle.seen_ids, bundle.unseen_ids)
    except EmptyInputError as e:
        logger.debug(f"attribute entanglement skipped: {e}")
        return []


def counterfactual_pool(
    generator: CounterfactualGenerator,
    x: torch.Tensor,
    attributes: torch.Tensor,
    class_ids: Sequence[int],
    z_mode: ZMode,
) -> Tuple[np.ndarray, np.ndarray]:
    """Counterfactuals of every sample towards every listed class, flattened with labels."""
    class_ids = list(class_ids)
    if not class_ids:
        return np.zeros((0, x.shape[-1]), dtype=np.float32), np.zeros(0, dtype=np.int64)
    targets = attributes[torch.as_tensor(class_ids, dtype=torch.long)]
    feats = generator.counterfactual_features(x, targets, z_mode)
    draws, n = feats.shape[0], feats.shape[1]
    labels = np.tile(np.asarray(class_ids, dtype=np.int64), draws * n)
    return feats.reshape(-1, feats.shape[-1]).numpy().astype(np.float32), labels


def check_test_coverage(labels: np.ndarray, class_ids: Sequence[int]) -> None:
    """Per-class accuracies need every class in the evaluated split."""
    missing = sorted(set(int(c) for c in class_ids) - set(np.unique(labels).tolist()))
    if missing:
        raise BundleValidationError(
            f"split: test split has no samples of classes {missing}; lower train_fraction"
        )


def _consistency(
    generator: CounterfactualGenerator,
    model: GenerativeCausalModel,
    bundle: DatasetBundle,
    x: np.ndarray,
    labels: np.ndarray,
) -> Optional[float]:
    if labels.size == 0:
        return None
    return generator.consistency_rate(
        _tensor(model, x), labels, bundle.seen_ids, _tensor(model, bundle.attributes)
    )


@log_timing()
def evaluate_zsl(
    model: GenerativeCausalModel,
    bundle: DatasetBundle,
    run: RunConfig,
    seed: Optional[int] = None,
) -> EvalOutcome:
    """Counterfactual classifier training, two-stage prediction and the SUC sweep."""
    seed = run.seed if seed is None else seed
    seen, unseen = bundle.seen_ids, bundle.unseen_ids
    k_used = min(run.K, len(seen), len(unseen))
    if k_used < run.K:
        logger.warning(f"K={run.K} exceeds the smaller class group; clipped to {k_used}")

    generator = CounterfactualGenerator(model)
    attributes = _tensor(model, bundle.attributes)
    x_train, y_train = bundle.train_arrays()
    test_idx = np.asarray(bundle.split.test_idx, dtype=np.int64)
    x_test, y_test = bundle.test_arrays()
    check_test_coverage(y_test, seen + unseen)
    cf_x, cf_labels = counterfactual_pool(
        generator, _tensor(model, x_test), attributes, unseen, run.z_mode_settings()
    )
    classifier = train_joint_classifier(
        x_train,
        y_train,
        cf_x,
        cf_labels,
        seen,
        unseen,
        epochs=run.classifier_epochs,
        lr=run.classifier_lr,
        batch_size=run.classifier_batch_size,
        seed=seed,
    )

    logits = classifier.logits(torch.as_tensor(x_test))
    preds = two_stage_zsl(logits, classifier, run.K, run.omega_cal)

    truly_unseen = np.isin(y_test, unseen)
    seen_test = ~truly_unseen
    U = per_class_top1(preds.final, y_test, unseen)
    S = per_class_top1(preds.final, y_test, seen)
    s_b, u_b = binary_accuracies(preds.predicted_unseen, truly_unseen)
    curve = suc_curve(logits, classifier, y_test, seen, unseen, run.omega_grid or None, run.K)
    closed = closed_set_accuracy(
        two_stage_zsl(logits[seen_test], classifier, run.K, -math.inf).final, y_test[seen_test]
    )

    H = harmonic_mean(U, S)
    area = ausuc(curve)
    report = EvalReport(
        mode="zsl",
        stage2=STAGE2_LABEL,
        seed=seed,
        config_hash=run.config_hash(),
        U=U,
        S=S,
        H=H,
        S_b=s_b,
        U_b=u_b,
        CVb=_safe_cvb(s_b, u_b),
        AUSUC=area,
        suc_curve=curve,
        consistency_rate=_consistency(generator, model, bundle, x_test[seen_test], y_test[seen_test]),
        closed_set_accuracy=closed,
        K=k_used,
        omega_cal=run.omega_cal,
        attribute_entanglement=_entanglement(bundle),
        percent=percent_summary({"U": U, "S": S, "H": H, "S_b": s_b, "U_b": u_b, "AUSUC": area}),
    )
    logger.info(f"ZSL: U={U:.4f} S={S:.4f} H={H:.4f} AUSUC={area:.4f}")
    return EvalOutcome(report=report, sample_ids=test_idx, predictions=preds, curve=curve)


def _osr_scores(
    generator: CounterfactualGenerator,
    model: GenerativeCausalModel,
    bundle: DatasetBundle,
    idx: np.ndarray,
    z_mode: ZMode,
) -> Tuple[np.ndarray, np.ndarray]:
    """(N, |S|) counterfactual distances and the known-class softmax for the samples."""
    x = _tensor(model, bundle.features[idx])
    targets = _tensor(model, bundle.attributes)[torch.as_tensor(bundle.seen_ids, dtype=torch.long)]
    distances = generator.counterfactual_distances(x, targets, z_mode).numpy()
    with generator.frozen():
        probs = model.known_class_probabilities(x, bundle.seen_ids).numpy()
    return distances, probs


@log_timing()
def evaluate_osr(
    model: GenerativeCausalModel,
    bundle: DatasetBundle,
    run: RunConfig,
    tune: bool = False,
    seed: Optional[int] = None,
) -> EvalOutcome:
    """Counterfactual-distance rejection with optional tau tuning on a validation half."""
    if bundle.attribute_kind != "onehot":
        raise BundleValidationError(
            "attribute_kind: open-set evaluation needs one-hot class attributes"
        )
    seed = run.seed if seed is None else seed
    seen, unseen = bundle.seen_ids, bundle.unseen_ids
    generator = CounterfactualGenerator(model)
    z_mode = run.z_mode_settings()

    test_idx = np.asarray(sorted(bundle.split.test_idx), dtype=np.int64)
    check_test_coverage(bundle.labels[test_idx], seen + unseen)
    tau = run.tau
    if tune or run.tune_tau:
        val_idx, eval_idx = validation_halves(test_idx, bundle.labels, seed)
        val_idx, eval_idx = np.asarray(val_idx), np.asarray(eval_idx)
        d_val, p_val = _osr_scores(generator, model, bundle, val_idx, z_mode)
        tau, _ = tune_tau(
            d_val.min(axis=1), np.asarray(seen)[p_val.argmax(axis=1)], bundle.labels[val_idx], seen
        )
    else:
        eval_idx = test_idx

    labels = bundle.labels[eval_idx]
    distances, probs = _osr_scores(generator, model, bundle, eval_idx, z_mode)
    preds = two_stage_osr(distances, probs, seen, tau)

    truly_unseen = np.isin(labels, unseen)
    seen_test = ~truly_unseen
    s_b, u_b = binary_accuracies(preds.predicted_unseen, truly_unseen)
    S = per_class_top1(preds.final, labels, seen)
    U = u_b
    H = harmonic_mean(U, S) if math.isfinite(U) else float("nan")
    f1 = macro_f1_unknown(preds.final, labels, seen)
    seen_pick = np.asarray(seen)[probs.argmax(axis=1)]

    report = EvalReport(
        mode="osr",
        stage2=OSR_STAGE2_LABEL,
        seed=seed,
        config_hash=run.config_hash(),
        U=U,
        S=S,
        H=H,
        S_b=s_b,
        U_b=u_b,
        CVb=_safe_cvb(s_b, u_b),
        f1_macro=f1,
        openness=openness(len(seen), len(unseen)),
        openness_f1=openness_f1_series(preds.final, labels, seen, sorted(unseen)),
        consistency_rate=_consistency(
            generator, model, bundle, bundle.features[eval_idx][seen_test], labels[seen_test]
        ),
        closed_set_accuracy=(
            closed_set_accuracy(seen_pick[seen_test], labels[seen_test]) if seen_test.any() else None
        ),
        tau=tau,
        per_split=[{"seed": float(seed), "f1_macro": f1, "tau": tau}],
        percent=percent_summary({"U": U, "S": S, "H": H, "S_b": s_b, "U_b": u_b, "f1_macro": f1}),
    )
    logger.info(f"OSR: F1={f1:.4f} S_b={s_b:.4f} U_b={u_b:.4f} tau={tau:.4f}")
    return EvalOutcome(report=report, sample_ids=eval_idx, predictions=preds)
