from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.core.artifacts import atomic_write_csv, atomic_write_text
from src.core.base_service import BaseService, ServiceResult
from src.core.logger import get_logger
from src.core.run_config import RunConfig
from src.gcm.data import DatasetBundle, OracleWorld, load_bundle, load_oracle
from src.gcm.model import GenerativeCausalModel
from src.gcm.oracle import AssignAttributes, GCMCounterfactualModel, cyclic_targets, disentanglement_residual
from src.services import oracle_path, output_path, sibling_path
from src.services.evaluator.pipeline import evaluate_osr, evaluate_zsl
from src.services.faithfulness.module import check_oracle_matches
from src.services.trainer.module import train_model

logger = get_logger(__name__)

VARIANTS = {"full": {}, "entangled": {"nu": 0.0, "rho": 0.0}}
ROW_COLUMNS = ("seed", "variant", "U", "S", "H", "CVb", "residual")


class AblationRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    seed: int
    variant: str
    U: float
    S: float
    H: float
    CVb: Optional[float] = None
    residual: Optional[float] = None


class AblationSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    H: float
    CVb: Optional[float] = None
    residual: Optional[float] = None


class AblationReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    mode: str
    seeds: List[int]
    config_hash: str
    rows: List[AblationRow]
    mean: Dict[str, AblationSummary]
    full_lower_cvb: Optional[bool] = None
    full_higher_h: bool

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def _mean(values: List[Optional[float]]) -> Optional[float]:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept and len(kept) == len(values) else None


def _residual(model: GenerativeCausalModel, world: OracleWorld, bundle: DatasetBundle) -> float:
    idx = np.asarray(bundle.split.test_idx, dtype=np.int64)
    targets = cyclic_targets(idx.size, bundle.unseen_ids, world.attributes)
    return disentanglement_residual(GCMCounterfactualModel(model), world, AssignAttributes(targets), idx)


def summarize(mode: str, seeds: List[int], config_hash: str, rows: List[AblationRow]) -> AblationReport:
    mean = {
        variant: AblationSummary(
            H=float(np.mean([r.H for r in rows if r.variant == variant])),
            CVb=_mean([r.CVb for r in rows if r.variant == variant]),
            residual=_mean([r.residual for r in rows if r.variant == variant]),
        )
        for variant in VARIANTS
    }
    full, entangled = mean["full"], mean["entangled"]
    lower_cvb = None
    if full.CVb is not None and entangled.CVb is not None:
        lower_cvb = full.CVb < entangled.CVb
    return AblationReport(
        mode=mode,
        seeds=seeds,
        config_hash=config_hash,
        rows=rows,
        mean=mean,
        full_lower_cvb=lower_cvb,
        full_higher_h=full.H > entangled.H,
    )


class Ablation(BaseService):
    """Full model vs the nu = rho = 0 ablation, averaged over seeds"""

    def get_description(self) -> str:
        return "Compares CVb and H of the full model against the entangled ablation"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        problems = super().validate_input(input_data) or self.require_path(input_data, "bundle")
        run = input_data.get("config")
        if not problems and not run.ablation_seeds:
            problems.append("ablation_seeds: at least one seed is required")
        return problems

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run: RunConfig = input_data["config"]
        bundle = load_bundle(run.bundle)
        sidecar = oracle_path(run)
        world = load_oracle(sidecar) if sidecar.exists() else None
        if world is not None:
            check_oracle_matches(bundle, world)
        else:
            logger.warning(f"No oracle sidecar at {sidecar}; residuals are skipped")

        rows: List[AblationRow] = []
        for seed in run.ablation_seeds:
            for variant, overrides in VARIANTS.items():
                logger.info(f"Ablation seed={seed} variant={variant}")
                model, _ = train_model(run, bundle, seed=seed, **overrides)
                if run.mode == "osr":
                    report = evaluate_osr(model, bundle, run, seed=seed).report
                else:
                    report = evaluate_zsl(model, bundle, run, seed=seed).report
                rows.append(
                    AblationRow(
                        seed=seed,
                        variant=variant,
                        U=report.U,
                        S=report.S,
                        H=report.H,
                        CVb=report.CVb,
                        residual=_residual(model, world, bundle) if world is not None else None,
                    )
                )

        result = summarize(run.mode, list(run.ablation_seeds), run.config_hash(), rows)
        target = atomic_write_text(output_path(run, "ablation.json"), result.to_json())
        table = atomic_write_csv(
            sibling_path(target, "csv"),
            ROW_COLUMNS,
            [[r.seed, r.variant, r.U, r.S, r.H, r.CVb, r.residual] for r in rows],
        )
        logger.info(
            f"Ablation: full H={result.mean['full'].H:.4f} vs entangled H={result.mean['entangled'].H:.4f}"
        )
        return ServiceResult(
            success=True,
            data={"report": result.model_dump()},
            artifacts=[str(target), str(table)],
        )
