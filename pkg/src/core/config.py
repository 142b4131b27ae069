import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


class Settings:
    # Logging settings
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE")

    # Environment settings
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development").lower()

    # Torch runtime
    NUM_THREADS: Optional[int] = (
        int(os.environ["GCMCF_NUM_THREADS"])
        if os.getenv("GCMCF_NUM_THREADS")
        else None
    )
    DETERMINISTIC: bool = _env_flag("GCMCF_DETERMINISTIC", True)


settings = Settings()
