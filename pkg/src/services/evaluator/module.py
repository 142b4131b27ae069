import json
from pathlib import Path
from typing import Any, Dict, List

from src.core.artifacts import atomic_write_csv, atomic_write_text
from src.core.base_service import BaseService, ServiceConfig, ServiceResult
from src.core.logger import get_logger
from src.core.run_config import RunConfig
from src.gcm.checkpoint import load_checkpoint
from src.gcm.data import load_bundle
from src.services import output_path, sibling_path

from .pipeline import PREDICTION_COLUMNS, EvalOutcome, evaluate_osr, evaluate_zsl

TASKS = ("zsl", "osr", "suc")
DEFAULT_NAMES = {"zsl": "eval_zsl.json", "osr": "eval_osr.json", "suc": "suc.csv"}


class Evaluator(BaseService):
    """Two-stage inference and metric reporting"""

    def __init__(self, config: ServiceConfig):
        super().__init__(config)
        self.logger = get_logger(__name__)

    def get_description(self) -> str:
        return "Evaluates a checkpoint with the ZSL or OSR two-stage rules"

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        problems = super().validate_input(input_data)
        if input_data.get("task") not in TASKS:
            problems.append(f"task: expected one of {', '.join(TASKS)}")
        if problems:
            return problems
        return self.require_path(input_data, "checkpoint") + self.require_path(input_data, "bundle")

    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        run: RunConfig = input_data["config"]
        task = input_data["task"]
        model, _ = load_checkpoint(run.checkpoint)
        bundle = load_bundle(run.bundle)
        target = output_path(run, DEFAULT_NAMES[task])

        if task == "suc":
            outcome = evaluate_zsl(model, bundle, run)
            self._write_curve(target, outcome)
            return self._result(outcome, [target])

        if task == "zsl":
            outcome = evaluate_zsl(model, bundle, run)
        else:
            outcome = evaluate_osr(model, bundle, run, tune=bool(input_data.get("tune_tau")))

        artifacts = [atomic_write_text(target, outcome.report.to_json())]
        artifacts.append(
            atomic_write_csv(
                sibling_path(target, "predictions.csv"), PREDICTION_COLUMNS, outcome.prediction_rows()
            )
        )
        if task == "zsl":
            artifacts.append(self._write_curve(sibling_path(target, "suc.csv"), outcome))
        else:
            artifacts.append(
                atomic_write_csv(
                    sibling_path(target, "openness.csv"),
                    ("M", "openness", "f1_macro"),
                    [[p.M, p.openness, p.f1_macro] for p in outcome.report.openness_f1],
                )
            )
        for path in artifacts:
            self.logger.info(f"Wrote {path}")
        return self._result(outcome, artifacts)

    @staticmethod
    def _write_curve(path: Path, outcome: EvalOutcome) -> Path:
        return atomic_write_csv(
            path, ("omega", "U", "S"), [[p.omega, p.U, p.S] for p in outcome.curve]
        )

    @staticmethod
    def _result(outcome: EvalOutcome, artifacts: List[Path]) -> ServiceResult:
        return ServiceResult(
            success=True,
            data={"report": json.loads(outcome.report.to_json())},
            artifacts=[str(p) for p in artifacts],
        )
