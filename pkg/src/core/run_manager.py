# /src/core/run_manager.py

import json
import time
import uuid
from pathlib import Path
from typing import Any, Dict, Optional

from src.utils.resources.logger import logger
from src.utils.config.settings import settings


class RunManager:
    def __init__(self, output_dir: Optional[Path] = None):
        self.output_dir = Path(output_dir or settings.get("runner.output_dir", "runtime/outputs"))
        self.runs: Dict[str, Dict[str, Any]] = {}
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def create_run(self, run_type: str, metadata: dict) -> str:
        run_id = str(uuid.uuid4())
        self.runs[run_id] = {
            "id": run_id,
            "type": run_type,
            "metadata": metadata,
            "started_at": time.perf_counter(),
            "files": [],
        }
        logger.info(f"Created run {run_id} of type {run_type}")
        return run_id

    def output_path(self, prefix: str, observable: str, suffix: str = ".csv") -> Path:
        return self.output_dir / f"{prefix}_{observable}{suffix}"

    def add_file_to_run(self, run_id: str, file_path: Path) -> None:
        if run_id in self.runs:
            self.runs[run_id]["files"].append(str(file_path))

    def finish_run(self, run_id: str, summary: Dict[str, Any]) -> Dict[str, Any]:
        """Attach wall time and file list to the summary; the record is written to <prefix>_summary.json."""
        run = self.runs[run_id]
        record = dict(summary)
        record["experiment"] = run["type"]
        record["wall_time_s"] = time.perf_counter() - run["started_at"]
        record["files"] = list(run["files"])
        prefix = summary.get("prefix")
        if prefix:
            path = self.output_path(prefix, "summary", ".json")
            # wall time excluded from the file so repeated runs give identical outputs
            stored = {k: v for k, v in record.items() if k != "wall_time_s"}
            path.write_text(json.dumps(stored, indent=2, sort_keys=True, default=float) + "\n")
            record["files"].append(str(path))
        logger.info(f"Finished run {run_id}", wall_time_s=record["wall_time_s"])
        return record


def create_run_manager(output_dir: Optional[Path] = None) -> RunManager:
    return RunManager(output_dir)
