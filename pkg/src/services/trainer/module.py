from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from src.core.artifacts import atomic_write_csv
from src.core.base_service import BaseService, ServiceResult
from src.core.errors import BundleValidationError
from src.core.logger import get_logger
from src.core.run_config import RunConfig
from src.core.seeding import derive_seed
from src.gcm.checkpoint import save_checkpoint
from src.gcm.data import DatasetBundle, load_bundle
from src.gcm.model import GenerativeCausalModel, build_model
from src.gcm.training import LOG_COLUMNS, LossBreakdown, fit
from src.services import sibling_path

logger = get_logger(__name__)


def check_bundle_mode(run: RunConfig, bundle: DatasetBundle) -> None:
    if run.mode == "osr" and bundle.attribute_kind != "onehot":
        raise BundleValidationError(
            "attribute_kind: mode=osr needs a bundle with one-hot class attributes"
        )


def train_model(
    run: RunConfig,
    bundle: DatasetBundle,
    seed: Optional[int] = None,
    **overrides,
) -> Tuple[GenerativeCausalModel, List[LossBreakdown]]:
    """Build and fit a model; ``overrides`` patch the training settings (e.g. nu=0)."""
    seed = run.seed if seed is None else seed
    check_bundle_mode(run, bundle)
    model_cfg = run.model_settings(bundle.feature_dim, bundle.attr_dim)
    train_cfg = run.training_settings(seed=seed, **overrides)
    model = build_model(model_cfg, seed=derive_seed(seed, "init"))
    history = fit(model, bundle, train_cfg)
    return model, history


class Trainer(BaseService):
    """Trains a model and writes checkpoint + training-log CSV"""

    def get_description(self) -> str:
        return "Counterfactual-faithful training on the seen-class split"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        problems = super().validate_input(input_data)
        if problems:
            return problems
        return self.require_path(input_data, "bundle") + self.require_path(input_data, "out")

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run: RunConfig = input_data["config"]
        bundle = load_bundle(run.bundle)
        model, history = train_model(run, bundle)

        checkpoint = Path(run.out)
        save_checkpoint(
            checkpoint,
            model,
            metadata={
                "seed": run.seed,
                "config_hash": run.config_hash(),
                "mode": run.mode,
                "epochs": run.epochs,
                "nu": run.nu,
                "rho": run.effective_rho,
                "seen_class_ids": bundle.seen_ids,
            },
        )
        log_file = (
            Path(run.output_dir) / "training_log.csv"
            if run.output_dir
            else sibling_path(checkpoint, "log.csv")
        )
        atomic_write_csv(
            log_file, LOG_COLUMNS, [b.log_row(epoch) for epoch, b in enumerate(history, start=1)]
        )
        logger.info(f"Training log written to {log_file}")

        final = history[-1]
        return ServiceResult(
            success=True,
            data={
                "checkpoint": str(checkpoint),
                "training_log": str(log_file),
                "epochs": len(history),
                "final": final.model_dump(),
            },
            artifacts=[str(checkpoint), str(log_file)],
        )
