from typing import Any, Dict, List, Optional

from .base_service import (
    EXIT_FAILURE,
    EXIT_INVALID,
    BaseService,
    ServiceConfig,
    ServiceResult,
)
from .container import CoreContainer
from .errors import BundleError, ConfigValidationError, ShapeError

SERVICE_PATHS = [
    "src.services.synth",
    "src.services.trainer",
    "src.services.evaluator",
    "src.services.counterfact",
    "src.services.faithfulness",
    "src.services.ablation",
]

VALIDATION_ERRORS = (ConfigValidationError, BundleError, ShapeError)


class GCMEngine:
    """Discovers the pipeline services and runs them on behalf of the CLI"""

    def __init__(self, service_paths: Optional[List[str]] = None):
        self.container = CoreContainer()
        self.settings = self.container.config()
        self.logger = self.container.logger(__name__)
        self.service_loader = self.container.service_loader()
        self.service_paths = list(service_paths or SERVICE_PATHS)
        self.services: Dict[str, BaseService] = {}

    def _configure_torch(self) -> None:
        import torch

        if self.settings.NUM_THREADS:
            torch.set_num_threads(self.settings.NUM_THREADS)
        if self.settings.DETERMINISTIC:
            torch.use_deterministic_algorithms(True, warn_only=True)

    def initialize(self) -> bool:
        self.logger.debug("Initializing GCM engine")
        self._configure_torch()

        discovered = self.service_loader.discover_services(self.service_paths)
        for service_path, service_class in discovered.items():
            short_name = service_path.split(".")[-1]
            instance = self.service_loader.instantiate_service(
                service_class, ServiceConfig(name=short_name)
            )
            if instance is None:
                continue
            if instance.initialize():
                self.services[short_name] = instance
            else:
                self.logger.warning(f"Failed to initialize service: {short_name}")

        self.logger.debug(f"Engine initialized with {len(self.services)} services")
        return bool(self.services)

    def execute_service(self, service_name: str, input_data: Dict[str, Any]) -> ServiceResult:
        service = self.services.get(service_name)
        if service is None:
            return ServiceResult.failed(
                f"Service '{service_name}' not found or not initialized", EXIT_FAILURE
            )

        problems = service.validate_input(input_data)
        if problems:
            return ServiceResult.failed("; ".join(problems), EXIT_INVALID)

        try:
            return service.execute(input_data)
        except ConfigValidationError as e:
            self.logger.error(f"{service_name}: invalid configuration")
            return ServiceResult.failed("; ".join(e.errors), EXIT_INVALID)
        except VALIDATION_ERRORS as e:
            self.logger.error(f"{service_name}: {e}")
            return ServiceResult.failed(str(e), EXIT_INVALID)
        except Exception as e:
            self.logger.error(f"Error executing service {service_name}: {e}")
            return ServiceResult.failed(f"{type(e).__name__}: {e}", EXIT_FAILURE)

    def list_services(self) -> List[Dict[str, Any]]:
        return [service.get_info() for service in self.services.values()]

    def get_service_info(self, name: str) -> Optional[Dict[str, Any]]:
        service = self.services.get(name)
        return service.get_info() if service else None

    def shutdown(self) -> bool:
        for name, service in self.services.items():
            try:
                service.cleanup()
            except Exception as e:
                self.logger.warning(f"Error cleaning up service {name}: {e}")
        self.services.clear()
        return True
