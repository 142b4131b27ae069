import importlib
import inspect
from typing import Dict, List, Optional, Type

from .base_service import BaseService, ServiceConfig
from .logger import get_logger


class ServiceLoader:
    """Discovers ``<package>.module`` service classes and instantiates them"""

    def __init__(self):
        self.logger = get_logger(__name__)
        self.loaded_services: Dict[str, Type[BaseService]] = {}

    def discover_services(self, service_paths: List[str]) -> Dict[str, Type[BaseService]]:
        discovered = {}

        for service_path in service_paths:
            try:
                module = importlib.import_module(service_path + ".module")
                for name, obj in inspect.getmembers(module, inspect.isclass):
                    if (
                        issubclass(obj, BaseService)
                        and obj is not BaseService
                        and obj.__module__ == module.__name__
                    ):
                        discovered[service_path] = obj
                        self.logger.debug(f"Discovered service: {name} from {service_path}")
            except ImportError as e:
                self.logger.warning(f"Failed to import service from {service_path}: {e}")

        self.logger.debug(f"Discovered {len(discovered)} service classes")
        self.loaded_services.update(discovered)
        return discovered

    def instantiate_service(
        self, service_class: Type[BaseService], config: ServiceConfig
    ) -> Optional[BaseService]:
        try:
            instance = service_class(config)
        except Exception as e:
            self.logger.error(f"Failed to instantiate service {service_class.__name__}: {e}")
            return None
        self.logger.debug(f"Instantiated service: {config.name}")
        return instance

    def list_available_services(self) -> List[str]:
        return list(self.loaded_services.keys())
