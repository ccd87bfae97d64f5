"""JSON configuration documents for the command-line runner.

Every document is a single JSON object; unknown keys are rejected so that a
misspelled budget never silently falls back to its default.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .errors import ConfigError, ValidationError
from .mc import OracleParams, PermEstimatorParams

EXPERIMENTS = ("fig1", "remark1", "empirical42", "custom")
METHOD_TAGS = ("analytic", "taylor", "finite_diff", "regression", "perm_mc", "oracle", "gla", "knn")

DEFAULT_GRIDS = {
    "fig1": [2, 4, 8, 16, 32],
    "remark1": [2, 4, 8, 16, 32, 64],
    "empirical42": [100, 1000],
    "custom": [1],
}
DEFAULT_METHODS = {
    "fig1": ["taylor", "finite_diff", "regression", "perm_mc", "oracle"],
    "remark1": ["analytic", "taylor", "oracle", "perm_mc"],
    "empirical42": ["gla", "knn"],
    "custom": ["taylor", "finite_diff", "regression", "perm_mc"],
}


def _strict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True)
class KnnParams:
    k: int = 3
    batch_size: int = 1000
    n_tot: Optional[int] = 1000

    def __post_init__(self):
        if self.k < 2 or self.batch_size < 10 * self.k:
            raise ValidationError("knn needs k >= 2 and batch_size >= 10 k")


@dataclass
class ExperimentConfig:
    experiment: str
    n_grid: Optional[list] = None
    replicates: int = 20
    seed: int = 0
    budget_scale: float = 1.0
    threads: Union[int, str] = 1
    output: Optional[str] = None
    timing: bool = True
    methods: Optional[list] = None
    perm: PermEstimatorParams = field(default_factory=PermEstimatorParams)
    oracle: OracleParams = field(default_factory=lambda: OracleParams(n_outer=2000, n_inner=100))
    regression_n: int = 40
    h_rule: Union[str, float] = "std"
    knn: KnnParams = field(default_factory=KnnParams)
    shared_sample: bool = True
    # custom experiment only
    model: Optional[str] = None
    coeffs: Optional[list] = None
    intercept: float = 0.0
    mean: Optional[list] = None
    cov: Optional[list] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if isinstance(self.perm, dict):
            self.perm = _strict(PermEstimatorParams, self.perm, "perm")
        if isinstance(self.oracle, dict):
            self.oracle = _strict(OracleParams, self.oracle, "oracle")
        if isinstance(self.knn, dict):
            self.knn = _strict(KnnParams, self.knn, "knn")
        if self.n_grid is None:
            self.n_grid = list(DEFAULT_GRIDS[self.experiment])
        if self.methods is None:
            self.methods = list(DEFAULT_METHODS[self.experiment])
        grid = self.n_grid
        if not grid or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in grid):
            raise ConfigError("n_grid must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be strictly ascending")
        bad = [m for m in self.methods if m not in DEFAULT_METHODS[self.experiment]]
        if bad or not self.methods:
            raise ConfigError(
                f"methods for {self.experiment} must be a nonempty subset of "
                f"{DEFAULT_METHODS[self.experiment]}; got {self.methods}"
            )
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.budget_scale > 0:
            raise ConfigError("budget_scale must be > 0")
        if self.regression_n < 2:
            raise ConfigError("regression_n must be >= 2")
        if not (self.h_rule == "std" or (isinstance(self.h_rule, (int, float)) and self.h_rule > 0)):
            raise ConfigError("h_rule must be 'std' or a positive step")
        self.thread_count()
        if self.experiment == "custom":
            if self.model is None or self.mean is None or self.cov is None:
                raise ConfigError("custom experiment needs 'model', 'mean' and 'cov'")

    def thread_count(self) -> int:
        if self.threads == "auto":
            return os.cpu_count() or 1
        if not isinstance(self.threads, int) or isinstance(self.threads, bool) or self.threads < 1:
            raise ConfigError("threads must be a positive integer or 'auto'")
        return self.threads

    @property
    def perm_budget(self) -> PermEstimatorParams:
        return self.perm.scaled(self.budget_scale)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _strict(cls, data, "experiment config")


@dataclass
class ExactConfig:
    """Input of the ``exact`` subcommand."""

    coeffs: list
    cov: list
    blockwise: bool = False
    block_tol: float = 1e-12


@dataclass
class LinearizeConfig:
    """Input of the ``linearize`` subcommand."""

    model: str
    mean: list
    cov: list
    method: str = "finite-diff"
    coeffs: Optional[list] = None
    intercept: float = 0.0
    steps: Optional[Union[float, list]] = None
    regression_n: int = 40
    seed: int = 0


def read_json(path: Union[str, Path]) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def load_experiment_config(path, **overrides) -> ExperimentConfig:
    data = read_json(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def parse_config(cls, data: dict, where: str):
    return _strict(cls, data, where)
