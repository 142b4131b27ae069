from .config import settings
from .logger import get_logger, log_timing
from .base_service import BaseService, ServiceConfig, ServiceResult
from .service_loader import ServiceLoader
from .container import CoreContainer
from .engine import GCMEngine
from .run_config import RunConfig, load_run_config, validate_config

__all__ = [
    "settings",
    "get_logger",
    "log_timing",
    "BaseService",
    "ServiceConfig",
    "ServiceResult",
    "ServiceLoader",
    "CoreContainer",
    "GCMEngine",
    "RunConfig",
    "load_run_config",
    "validate_config",
]
