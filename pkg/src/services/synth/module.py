from pathlib import Path
from typing import Any, Dict, List

from src.core.base_service import BaseService, ServiceConfig, ServiceResult
from src.core.logger import get_logger
from src.gcm.data import generate_synthetic_world, save_bundle, save_oracle
from src.gcm.oracle import verify_injectivity
from src.services import oracle_path


class Synth(BaseService):
    """Writes a synthetic bundle and the oracle sidecar next to it"""

    def __init__(self, config: ServiceConfig):
        super().__init__(config)
        self.logger = get_logger(__name__)

    def get_description(self) -> str:
        return "Generates a seeded synthetic world: bundle plus oracle sidecar"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        return super().validate_input(input_data) or self.require_path(input_data, "out")

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run = input_data["config"]
        bundle, world = generate_synthetic_world(run.synth_settings())

        injectivity = verify_injectivity(world, run.num_pairs, run.injectivity_margin, run.seed)
        if not injectivity.passed:
            self.logger.warning(
                f"Generator failed the injectivity check (worst ratio {injectivity.worst_ratio:.3g})"
            )

        bundle_file = save_bundle(bundle, Path(run.out))
        sidecar = save_oracle(world, oracle_path(run))
        self.logger.info(f"Oracle sidecar written to {sidecar}")

        return ServiceResult(
            success=True,
            data={
                "bundle": str(bundle_file),
                "oracle": str(sidecar),
                "num_samples": bundle.num_samples,
                "seen_classes": len(bundle.seen_ids),
                "unseen_classes": len(bundle.unseen_ids),
                "min_singular_value": world.min_singular_value(),
                "injectivity": injectivity.model_dump(),
            },
            artifacts=[str(bundle_file), str(sidecar)],
        )
