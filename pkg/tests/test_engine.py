from unittest.mock import MagicMock

import pytest

from src.core.base_service import BaseService, ServiceConfig, ServiceResult
from src.core.engine import SERVICE_PATHS, GCMEngine
from src.core.errors import BundleFormatError, ConfigValidationError, ShapeError
from src.core.run_config import RunConfig
from src.core.service_loader import ServiceLoader


class _Raising(BaseService):
    def __init__(self, error):
        super().__init__(ServiceConfig(name="raising"))
        self.error = error

    def get_description(self):
        return "raises on execute"

    def execute(self, input_data):
        raise self.error


@pytest.fixture
def engine():
    engine = GCMEngine()
    engine.initialize()
    yield engine
    engine.shutdown()


class TestGCMEngine:
    """Tests for service discovery and exit-code mapping"""

    def test_discovers_every_pipeline_service(self, engine):
        names = {info["name"] for info in engine.list_services()}
        assert names == {path.split(".")[-1] for path in SERVICE_PATHS}

    def test_service_info(self, engine):
        info = engine.get_service_info("synth")
        assert info["enabled"] is True
        assert info["description"]
        assert engine.get_service_info("nonexistent") is None

    def test_unknown_service(self, engine):
        result = engine.execute_service("nonexistent", {"config": RunConfig()})
        assert result.success is False
        assert result.exit_code == 2
        assert "not found" in result.error

    def test_missing_config_is_invalid(self, engine):
        result = engine.execute_service("synth", {})
        assert result.exit_code == 1
        assert result.error.startswith("config")

    @pytest.mark.parametrize(
        "error, code, prefix",
        [
            (ConfigValidationError(["beta: must be >= 0", "epochs: too small"]), 1, "beta"),
            (ShapeError("x: wrong width"), 1, "x: wrong width"),
            (BundleFormatError("bad magic"), 1, "bad magic"),
            (RuntimeError("boom"), 2, "RuntimeError: boom"),
        ],
    )
    def test_exception_mapping(self, engine, error, code, prefix):
        engine.services["raising"] = _Raising(error)
        result = engine.execute_service("raising", {"config": RunConfig()})
        assert result.exit_code == code
        assert result.error.startswith(prefix)

    def test_shutdown_tolerates_cleanup_errors(self):
        engine = GCMEngine(service_paths=[])
        broken = MagicMock(spec=BaseService)
        broken.cleanup.side_effect = RuntimeError("cleanup failed")
        engine.services["broken"] = broken
        assert engine.shutdown() is True
        assert engine.services == {}

    def test_no_services_means_failed_initialization(self):
        assert GCMEngine(service_paths=["src.services.does_not_exist"]).initialize() is False


class TestServiceLoader:
    """Tests for ServiceLoader"""

    def test_discovers_only_classes_defined_in_the_module(self):
        loader = ServiceLoader()
        discovered = loader.discover_services(["src.services.evaluator"])
        assert discovered["src.services.evaluator"].__name__ == "Evaluator"
        assert loader.list_available_services() == ["src.services.evaluator"]

    def test_instantiate_failure_returns_none(self):
        class Broken(BaseService):
            def __init__(self, config):
                raise ValueError("nope")

            def get_description(self):
                return ""

            def execute(self, input_data):
                return ServiceResult(success=True)

        assert ServiceLoader().instantiate_service(Broken, ServiceConfig(name="broken")) is None


class TestServiceResult:
    """Tests for ServiceResult helpers"""

    def test_failed_defaults_to_runtime_failure(self):
        result = ServiceResult.failed("bad")
        assert (result.success, result.exit_code, result.artifacts) == (False, 2, [])
