# utils/formats.py
"""
Plain-text formats shared by the CLI writers:
- CSV tables (trajectories, densities)
- KEY=VALUE records (config echo, bitstream sidecar, battery records)
- full-precision float rendering
"""

import csv
import os
from typing import Dict, Iterable, List, Optional, Sequence

from dotenv import dotenv_values


def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    ensure_parent(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_kv(values: Dict[str, object], comments: Optional[List[str]] = None) -> str:
    lines = [f"# {c}" for c in (comments or [])]
    for key, value in values.items():
        if isinstance(value, float):
            value = format_float(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_kv(path: str, values: Dict[str, object], comments: Optional[List[str]] = None) -> str:
    ensure_parent(path)
    with open(path, "w") as fh:
        fh.write(render_kv(values, comments))
    return path


def read_kv(path: str) -> Dict[str, str]:
    """Read a KEY=VALUE file; comment lines are ignored."""
    if not os.path.isfile(path):
        raise FileNotFoundError(2, "config file not found", path)
    return {k: v for k, v in dotenv_values(path).items() if v is not None}
