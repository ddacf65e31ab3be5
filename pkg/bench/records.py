"""
Run directories and metric files.

Each command writes into ``<out>/<command>-<hash12>-seed<seed>/``: the
resolved ``config.json``, CSV metric files appended as the run goes, and
``run.json`` with the run record once it finishes.
"""

import csv
import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import django
import numpy as np

from harness.policies import OnlineResult

from . import __version__
from .serializers import ExperimentConfig


logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
RUN_FILE = "run.json"
CURVE_COLUMNS = ("S0", "SN", "sum", "jain")


def slugify(label: str) -> str:
    """File-name safe form of a task label, ``TDMA(2)+q-ALOHA(0.1)`` -> ``TDMA-2_q-ALOHA-0.1``."""
    text = label.replace("(", "-").replace(")", "").replace("+", "_").replace(":", "-")
    return re.sub(r"[^A-Za-z0-9.\-_]", "", text)


def run_directory(root: Union[str, Path], command: str, config: ExperimentConfig) -> Path:
    directory = Path(root) / f"{command}-{config.config_hash()[:12]}-seed{config.seed}"
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_config(directory: Path, config: ExperimentConfig) -> Path:
    path = directory / CONFIG_FILE
    path.write_text(json.dumps(config.dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class RunRecord:
    """What a finished run produced and how to reproduce it."""

    command: str
    config_hash: str
    seed: int
    seeds: List[int]
    directory: str
    metrics: List[str] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    code_version: str = ""
    started_at: float = field(default_factory=time.time)
    wall_clock: float = 0.0

    @classmethod
    def start(cls, command: str, config: ExperimentConfig, directory: Path) -> "RunRecord":
        return cls(
            command=command,
            config_hash=config.config_hash(),
            seed=config.seed,
            seeds=config.seed_list(),
            directory=str(directory),
            code_version=f"gma-bench {__version__} / django {django.get_version()} / numpy {np.__version__}",
        )

    def add_metric(self, path: Path) -> Path:
        self.metrics.append(Path(path).name)
        return path

    def finish(self) -> Path:
        self.wall_clock = time.time() - self.started_at
        path = Path(self.directory) / RUN_FILE
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"{self.command} finished in {self.wall_clock:.1f}s, results in {self.directory}")
        return path

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class CsvAppender:
    """
    CSV file written row by row and flushed after each row, so a long run
    can be inspected while it is still going.
    """

    def __init__(self, path: Union[str, Path], fieldnames: Sequence[str]):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.fieldnames, extrasaction="ignore")
        self._writer.writeheader()
        self._fh.flush()

    def write(self, row: Dict[str, Any]) -> None:
        self._writer.writerow({key: _cell(row.get(key)) for key in self.fieldnames})
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CsvAppender":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "" if np.isnan(value) else repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_rows(path: Union[str, Path], rows: Iterable[Dict[str, Any]], fieldnames: Sequence[str]) -> Path:
    with CsvAppender(path, fieldnames) as out:
        for row in rows:
            out.write(row)
    return Path(path)


def read_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ----- aggregation -----

def _nan_stats(values: np.ndarray) -> tuple:
    """Mean and population std over seeds ignoring undefined entries, per column."""
    valid = ~np.isnan(values)
    counts = valid.sum(axis=0)
    filled = np.where(valid, values, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / counts
        var = np.where(valid, (values - mean) ** 2, 0.0).sum(axis=0) / counts
    return mean, np.sqrt(var)


def curve_rows(runs: Sequence[OnlineResult]) -> List[Dict[str, Any]]:
    """Per-slot mean and std over runs of S0, SN, sum and jain."""
    if not runs:
        return []
    slots = min(len(run) for run in runs)
    stats = {}
    for name in CURVE_COLUMNS:
        stacked = np.stack([run.column(name)[:slots] for run in runs])
        stats[name] = _nan_stats(stacked)
    rows = []
    for i in range(slots):
        row: Dict[str, Any] = {"t": runs[0].records[i]["t"], "task": runs[0].records[i]["task"]}
        for name in CURVE_COLUMNS:
            mean, std = stats[name]
            row[f"{name}_mean"] = mean[i]
            row[f"{name}_std"] = std[i]
        rows.append(row)
    return rows


def curve_fieldnames() -> List[str]:
    names = ["t", "task"]
    for name in CURVE_COLUMNS:
        names.extend([f"{name}_mean", f"{name}_std"])
    return names


def write_curves(path: Union[str, Path], runs: Sequence[OnlineResult]) -> Path:
    return write_rows(path, curve_rows(runs), curve_fieldnames())


ORACLE_FIELDS = ("scenario", "value", "kind", "policy")


def write_oracle_table(path: Union[str, Path], rows: Sequence[Dict[str, Any]]) -> Path:
    return write_rows(path, rows, ORACLE_FIELDS)


def latent_fieldnames(latent_dim: int, num_experts: int) -> List[str]:
    return ["env", "rollout", *(f"z{i}" for i in range(latent_dim)), *(f"w{m}" for m in range(num_experts))]


def latent_row(env: str, rollout: int, z: np.ndarray, weights: np.ndarray) -> Dict[str, Any]:
    row: Dict[str, Any] = {"env": env, "rollout": rollout}
    row.update({f"z{i}": value for i, value in enumerate(z)})
    row.update({f"w{m}": value for m, value in enumerate(weights)})
    return row


def mean_std(values: Sequence[Optional[float]]) -> Dict[str, Optional[float]]:
    """Mean and std of the defined entries, None when there are none."""
    defined = [v for v in values if v is not None]
    if not defined:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(defined)), "std": float(np.std(defined))}
