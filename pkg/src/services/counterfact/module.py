from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import torch

from src.core.artifacts import atomic_write_csv
from src.core.base_service import BaseService, ServiceResult
from src.core.logger import get_logger
from src.core.run_config import RunConfig
from src.gcm.checkpoint import load_checkpoint, save_tensors
from src.gcm.counterfactual import CounterfactualGenerator
from src.gcm.data import load_bundle
from src.services import output_path

logger = get_logger(__name__)

BATCH_SIZE = 256
DISTANCE_COLUMNS = ("sample_id", "target_class", "distance")


class Counterfact(BaseService):
    """x~ = X_y[z(x)] for every test sample and class"""

    def get_description(self) -> str:
        return "Generates counterfactuals of test samples towards every class"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        problems = super().validate_input(input_data)
        if problems:
            return problems
        return self.require_path(input_data, "checkpoint") + self.require_path(input_data, "bundle")

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run: RunConfig = input_data["config"]
        model, _ = load_checkpoint(run.checkpoint)
        bundle = load_bundle(run.bundle)
        generator = CounterfactualGenerator(model)
        z_mode = run.z_mode_settings()
        dtype = next(model.parameters()).dtype

        sample_ids = np.asarray(bundle.split.test_idx, dtype=np.int64)
        targets = torch.as_tensor(bundle.attributes, dtype=dtype)
        distances, features = [], []
        for start in range(0, sample_ids.size, BATCH_SIZE):
            x = torch.as_tensor(bundle.features[sample_ids[start : start + BATCH_SIZE]], dtype=dtype)
            feats = generator.counterfactual_features(x, targets, z_mode)
            distances.append(
                torch.linalg.vector_norm(feats - x[None, :, None, :], dim=-1).min(dim=0).values.numpy()
            )
            if run.output_dir:
                features.append(feats.numpy())

        table = np.concatenate(distances) if distances else np.zeros((0, bundle.num_classes))
        rows = [
            [int(sid), cid, float(table[i, cid])]
            for i, sid in enumerate(sample_ids)
            for cid in range(bundle.num_classes)
        ]
        target = atomic_write_csv(output_path(run, "counterfactuals.csv"), DISTANCE_COLUMNS, rows)
        artifacts = [str(target)]
        logger.info(f"Counterfactual distances for {sample_ids.size} samples written to {target}")

        if run.output_dir and features:
            dump = save_tensors(
                Path(run.output_dir) / "counterfactuals.gcmt",
                {
                    "x_tilde": np.concatenate(features, axis=1),
                    "sample_ids": sample_ids.astype(np.float64),
                },
                {
                    "kind": "counterfactuals",
                    "z_mode": z_mode.kind,
                    "seed": run.seed,
                    "config_hash": run.config_hash(),
                },
            )
            artifacts.append(str(dump))

        return ServiceResult(
            success=True,
            data={
                "samples": int(sample_ids.size),
                "targets": bundle.num_classes,
                "mean_min_seen_distance": (
                    float(table[:, bundle.seen_ids].min(axis=1).mean()) if sample_ids.size else None
                ),
            },
            artifacts=artifacts,
        )
