# /src/utils/resources/csv_writer.py

import csv
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from src.utils.resources.logger import logger

_write_lock = threading.Lock()


def _format(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return f"{value.real!r}{value.imag:+.17g}j"
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    One observable per file; column names carry their unit ("t_s", "delta_rad_s").
    Floats are written with repr so identical inputs give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _write_lock, open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        count = 0
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"Row has {len(row)} cells, expected {len(columns)}")
            writer.writerow([_format(v) for v in row])
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return path


def read_csv(path: Path) -> Dict[str, List[float]]:
    with open(Path(path), newline="") as f:
        reader = csv.DictReader(f)
        data: Dict[str, List[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, value in row.items():
                data[name].append(float(value))
    return data


def write_gnuplot_stub(csv_path: Path, x_column: str, y_columns: Sequence[str]) -> Path:
    """Companion plot script next to the CSV."""
    csv_path = Path(csv_path)
    script = csv_path.with_suffix(".gp")
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x_column}'",
    ]
    plots = [f"'{csv_path.name}' using '{x_column}':'{y}' with linespoints" for y in y_columns]
    lines.append("plot " + ", \\\n     ".join(plots))
    script.write_text("\n".join(lines) + "\n")
    return script
