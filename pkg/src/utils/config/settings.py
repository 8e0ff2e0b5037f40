# /src/utils/config/settings.py

from typing import Any, Dict, Optional
from pathlib import Path
import yaml
from pydantic_settings import BaseSettings, SettingsConfigDict


class EnvironmentOverrides(BaseSettings):
    """Process-level overrides read from EITCOOL_* variables (or a .env file)."""

    model_config = SettingsConfigDict(env_prefix="EITCOOL_", env_file=".env", extra="ignore")

    workers: Optional[int] = None
    log_level: Optional[str] = None
    fock_dim: Optional[int] = None


class SettingsManager:
    _instance: Optional['SettingsManager'] = None
    _config: Optional[Dict[str, Any]] = None

    def __new__(cls) -> 'SettingsManager':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._load_config()
        return cls._instance

    def _load_config(self) -> None:
        config_path = Path(__file__).parent / "config.yaml"
        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found at {config_path}")

        with open(config_path, 'r') as f:
            self._config = yaml.safe_load(f)
        self._apply_overrides(EnvironmentOverrides())

    def _apply_overrides(self, env: EnvironmentOverrides) -> None:
        assert self._config is not None
        if env.workers is not None:
            self._config["runner"]["workers"] = env.workers
        if env.log_level is not None:
            self._config["logging"]["level"] = env.log_level
        if env.fock_dim is not None:
            self._config["engines"]["fock_dim"] = env.fock_dim

    def get(self, key: str, default: Any = None) -> Any:
        if self._config is None:
            return default

        keys = key.split('.')
        value = self._config
        try:
            for k in keys:
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any) -> None:
        """Process-local override (used by CLI flags such as --fock)."""
        assert self._config is not None
        keys = key.split('.')
        node = self._config
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value

    def get_engine_config(self) -> Dict[str, Any]:
        return self.get("engines", {})

    def get_physics_config(self) -> Dict[str, Any]:
        return self.get("physics", {})

    def get_logging_config(self) -> Dict[str, Any]:
        return self.get("logging", {})

    def default_workers(self) -> int:
        return int(self.get("runner.workers", 1))


# Global instance
settings = SettingsManager()
