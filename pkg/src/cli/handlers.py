# /src/cli/handlers.py

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.cli.models import Scenario
from src.core.errors import ConfigError, EitCoolError
from src.core.experiment_manager import create_experiment_manager
from src.core.run_manager import create_run_manager
from src.services.experiments import register_experiments
from src.utils.config.settings import settings
from src.utils.resources.csv_writer import write_csv
from src.utils.resources.logger import logger


class ScenarioHandler:
    def __init__(self, output_dir: Optional[Path] = None, workers: Optional[int] = None, gnuplot_stub: bool = False):
        self.workers = workers if workers is not None else settings.default_workers()
        if self.workers < 1:
            raise ConfigError("Worker count must be at least 1", {"workers": self.workers})
        self.run_manager = create_run_manager(output_dir)
        self.manager = create_experiment_manager(self.run_manager)
        register_experiments(self.manager, workers=self.workers, gnuplot_stub=gnuplot_stub)
        if not self.manager.initialize():
            raise ConfigError("Experiment initialization failed")

    def load(self, path: Path) -> Scenario:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("Scenario file not found", {"path": str(path)})
        try:
            return Scenario.from_yaml(path.read_text())
        except ConfigError as e:
            e.context["path"] = str(path)
            raise

    def expand(self, scenario: Scenario) -> List[Scenario]:
        """One scenario per sweep value, each with its own output prefix."""
        if scenario.sweep is None:
            return [scenario]
        points = []
        for i, value in enumerate(scenario.sweep.values):
            try:
                point = scenario.with_parameter(scenario.sweep.parameter, value)
            except ValueError as e:
                raise ConfigError("Sweep value rejected", {"parameter": scenario.sweep.parameter, "value": value, "reason": str(e)}) from e
            points.append(point.model_copy(update={"output": f"{scenario.prefix}_{i:03d}"}))
        return points

    def run_scenario(self, scenario: Scenario) -> Dict[str, Any]:
        logger.info(f"Running scenario {scenario.name}", experiment=scenario.experiment.type, prefix=scenario.prefix)
        try:
            return self.manager.run(scenario.experiment.type, scenario)
        except EitCoolError as e:
            e.context.setdefault("scenario", scenario.name)
            e.context.setdefault("prefix", scenario.prefix)
            raise

    def run(self, path: Path) -> List[Dict[str, Any]]:
        scenario = self.load(path)
        points = self.expand(scenario)
        if scenario.sweep is not None:
            index = write_csv(
                self.run_manager.output_path(scenario.prefix, "sweep_index"),
                ["index", "value"],
                [(i, v) for i, v in enumerate(scenario.sweep.values)],
            )
            logger.info(f"Sweep over {scenario.sweep.parameter}", points=len(points), index=str(index))
        if len(points) > 1 and self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self.run_scenario, points))
        return [self.run_scenario(p) for p in points]


def get_scenario_handler(
    output_dir: Optional[Path] = None, workers: Optional[int] = None, gnuplot_stub: bool = False
) -> ScenarioHandler:
    return ScenarioHandler(output_dir, workers, gnuplot_stub)
