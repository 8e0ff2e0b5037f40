# /src/core/experiment_manager.py

from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

from src.utils.resources.logger import logger
from src.utils.config.settings import settings
from .run_manager import RunManager, create_run_manager


class ExperimentConfig:
    def __init__(self, name: str, enabled: bool = True, workers: Optional[int] = None, config: Optional[dict] = None):
        self.name = name
        self.enabled = enabled
        self.workers = workers if workers is not None else settings.default_workers()
        self.config = config or {}


class Experiment(ABC):
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.is_initialized = False

    def initialize(self) -> bool:
        self.is_initialized = True
        return True

    @abstractmethod
    def run(self, scenario: Any, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        """Execute the experiment, register its files with the run and return the summary."""


class ExperimentManager:
    def __init__(self, run_manager: Optional[RunManager] = None):
        self.experiments: Dict[str, Experiment] = {}
        self.run_manager = run_manager or create_run_manager()

    def register_experiment(self, experiment: Experiment) -> None:
        self.experiments[experiment.config.name] = experiment

    def get_experiment(self, name: str) -> Optional[Experiment]:
        return self.experiments.get(name)

    def initialize(self) -> bool:
        logger.info("Initializing registered experiments...")
        for name, experiment in self.experiments.items():
            if experiment.config.enabled and not experiment.is_initialized:
                if not experiment.initialize():
                    logger.error(f"Failed to initialize experiment: {name}")
                    return False
        return True

    def run(self, name: str, scenario: Any) -> Dict[str, Any]:
        experiment = self.get_experiment(name)
        if experiment is None or not experiment.config.enabled:
            raise KeyError(f"Experiment '{name}' is not registered")
        run_id = self.run_manager.create_run(name, {"scenario": getattr(scenario, "name", None)})
        try:
            summary = experiment.run(scenario, self.run_manager, run_id)
        except Exception as e:
            logger.error(f"Experiment {name} failed: {e}", exc_info=True)
            raise
        return self.run_manager.finish_run(run_id, summary)


def create_experiment_manager(run_manager: Optional[RunManager] = None) -> ExperimentManager:
    return ExperimentManager(run_manager)
