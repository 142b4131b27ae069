from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class ServiceConfig(BaseModel):
    """Base configuration for all services"""

    name: str
    enabled: bool = True
    priority: int = 0


class ServiceResult(BaseModel):
    """Standardized result of a service run"""

    success: bool
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    exit_code: int = EXIT_OK
    artifacts: List[str] = []

    @classmethod
    def failed(cls, error: str, exit_code: int = EXIT_FAILURE) -> "ServiceResult":
        return cls(success=False, error=error, exit_code=exit_code)


class BaseService(ABC):
    """Abstract base class for the pipeline services"""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.name = config.name

    @abstractmethod
    def execute(self, input_data: Dict[str, Any]) -> ServiceResult:
        """Run the service; errors propagate to the engine"""

    def validate_input(self, input_data: Dict[str, Any]) -> List[str]:
        """Problems with the input, one string per problem"""
        if "config" not in input_data:
            return ["config: missing run configuration"]
        return []

    @staticmethod
    def require_path(input_data: Dict[str, Any], key: str) -> List[str]:
        config = input_data.get("config")
        if config is None or not getattr(config, key, None):
            return [f"{key}: required for this command"]
        return []

    def get_info(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "enabled": self.config.enabled,
            "priority": self.config.priority,
            "description": self.get_description(),
        }

    @abstractmethod
    def get_description(self) -> str:
        """Human-readable description of the service"""

    def initialize(self) -> bool:
        return True

    def cleanup(self) -> bool:
        return True
