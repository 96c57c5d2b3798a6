"""
User settings and logging for the pchm laboratory.
"""

import json
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

DISPLAY_MODES = ["plain", "rich"]
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
DEFAULTS: Dict[str, Any] = {
    "display_mode": "rich",
    "workers": 1,
    "tol": 1e-10,
    "log_level": "INFO",
}


class Config:
    """Manages persisted settings and the log handlers."""

    def __init__(self, home: Optional[Path] = None):
        """
        Initialize configuration.

        Args:
            home: Settings directory; defaults to $PCHM_HOME or ~/.pchm
        """
        env_home = os.environ.get("PCHM_HOME")
        self.config_dir = Path(home or env_home or Path.home() / ".pchm")
        self.config_file = self.config_dir / "config.json"
        self.logs_dir = self.config_dir / "logs"
        self._config: Dict[str, Any] = dict(DEFAULTS)
        self.config_dir.mkdir(parents=True, exist_ok=True)
        self._load_config()
        self._setup_logging()

    def _setup_logging(self):
        """Attach the rotating file handler and the console handler once."""
        self.logs_dir.mkdir(exist_ok=True)
        log_file = self.logs_dir / "pchm.log"
        root_logger = logging.getLogger()
        root_logger.setLevel(self.log_level)

        for handler in root_logger.handlers:
            if getattr(handler, "_pchm_log_file", None) == str(log_file):
                return

        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        file_handler = RotatingFileHandler(
            log_file, maxBytes=1024 * 1024, backupCount=3  # 1MB
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(logging.INFO)
        file_handler._pchm_log_file = str(log_file)

        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        console_handler.setLevel(logging.WARNING)

        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)

    def _load_config(self):
        """Load configuration from file, keeping defaults for missing keys."""
        if self.config_file.exists():
            with open(self.config_file, "r") as f:
                self._config.update(json.load(f))

    def _save_config(self):
        """Save current configuration to file."""
        self.config_dir.mkdir(parents=True, exist_ok=True)
        with open(self.config_file, "w") as f:
            json.dump(self._config, f, indent=2)

    def reset(self) -> None:
        self._config = dict(DEFAULTS)
        self._save_config()

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._config)

    @property
    def display_mode(self) -> str:
        return self._config.get("display_mode", DEFAULTS["display_mode"])

    @display_mode.setter
    def display_mode(self, mode: str) -> None:
        if mode not in DISPLAY_MODES:
            raise ValueError(f"Invalid display mode: {mode}")
        self._config["display_mode"] = mode
        self._save_config()

    @property
    def workers(self) -> int:
        return int(self._config.get("workers", DEFAULTS["workers"]))

    @workers.setter
    def workers(self, value: int) -> None:
        value = int(value)
        if value < 1:
            raise ValueError(f"workers must be at least 1, got {value}")
        self._config["workers"] = value
        self._save_config()

    @property
    def tol(self) -> float:
        return float(self._config.get("tol", DEFAULTS["tol"]))

    @tol.setter
    def tol(self, value: float) -> None:
        value = float(value)
        if not value > 0:
            raise ValueError(f"tol must be positive, got {value}")
        self._config["tol"] = value
        self._save_config()

    @property
    def log_level(self) -> str:
        return self._config.get("log_level", DEFAULTS["log_level"])

    @log_level.setter
    def log_level(self, level: str) -> None:
        level = level.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"Invalid log level: {level}")
        self._config["log_level"] = level
        self._save_config()
        logging.getLogger().setLevel(level)
