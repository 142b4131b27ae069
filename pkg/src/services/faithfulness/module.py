from typing import Any, Dict, List

from pydantic import BaseModel

from src.core.artifacts import atomic_write_text
from src.core.base_service import BaseService, ServiceResult
from src.core.errors import BundleValidationError
from src.core.logger import get_logger
from src.core.run_config import RunConfig
from src.gcm.checkpoint import load_checkpoint
from src.gcm.data import DatasetBundle, OracleWorld, load_bundle, load_oracle
from src.gcm.oracle import InjectivityResult, faithfulness_report, verify_injectivity
from src.services import oracle_path, output_path

logger = get_logger(__name__)


class FaithfulnessOutput(BaseModel):
    residual: float
    mean_manifold_distance_cf: float
    mean_manifold_distance_prior: float
    num_samples: int
    grid_size: int
    injectivity: InjectivityResult
    seed: int
    config_hash: str


def check_oracle_matches(bundle: DatasetBundle, world: OracleWorld) -> None:
    if world.labels.size != bundle.num_samples or world.attributes.shape != bundle.attributes.shape:
        raise BundleValidationError("oracle: sidecar does not describe this bundle")


class Faithfulness(BaseService):
    """Residual and manifold distances of counterfactuals vs prior generations"""

    def get_description(self) -> str:
        return "Checks counterfactual faithfulness against the synthetic oracle"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        problems = super().validate_input(input_data)
        if problems:
            return problems
        return self.require_path(input_data, "checkpoint") + self.require_path(input_data, "bundle")

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run: RunConfig = input_data["config"]
        model, _ = load_checkpoint(run.checkpoint)
        bundle = load_bundle(run.bundle)
        world = load_oracle(oracle_path(run))
        check_oracle_matches(bundle, world)

        report = faithfulness_report(model, world, bundle, run.grid_size, run.seed)
        output = FaithfulnessOutput(
            **report.model_dump(),
            injectivity=verify_injectivity(world, run.num_pairs, run.injectivity_margin, run.seed),
            seed=run.seed,
            config_hash=run.config_hash(),
        )
        target = atomic_write_text(
            output_path(run, "faithfulness.json"), output.model_dump_json(indent=2) + "\n"
        )
        logger.info(f"Faithfulness report written to {target}")
        return ServiceResult(success=True, data=output.model_dump(), artifacts=[str(target)])
