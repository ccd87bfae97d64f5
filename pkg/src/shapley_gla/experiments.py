"""Experiment runners producing plot-ready result tables.

Each table row is computed by an independent work unit whose random stream
is derived from ``(seed, experiment, n, method, replicate)``, so the output
does not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .empirical import (
    estimate_moments,
    gla_shapley_estimate,
    sample_empirical_means,
    section42_sampler,
)
from .exact import ShapleyVector, shapley_linear
from .gaussian import GaussianSpec, SampleBatch, make_stream, tag_key
from .linearize import BlackBoxModel, linearize_pipeline
from .mc import shapley_knn, shapley_perm_mc, shapley_subset_oracle
from .models import fig1_model, get_model, remark1_model, sqnorm_model

log = logging.getLogger(__name__)

FIG1_A = np.array([
    [-2.0, -1.0, 0.0, 1.0],
    [2.0, -2.0, -1.0, 0.0],
    [1.0, 2.0, -2.0, -1.0],
    [0.0, 1.0, 2.0, -2.0],
])
FIG1_SIGMA = FIG1_A.T @ FIG1_A
FIG1_MU = np.array([1.0, 0.0, 2.0, 1.0])

METHOD_KEYS = {m: i for i, m in enumerate(
    ("analytic", "taylor", "finite_diff", "regression", "perm_mc", "oracle", "gla", "knn"))}
# deterministic methods produce a single row (replicate 0)
SINGLE_ROW = {"analytic", "taylor", "finite_diff", "oracle"}


@dataclass
class ResultRow:
    experiment: str
    method: str
    n: int
    replicate: int
    eta: np.ndarray
    se: Optional[np.ndarray] = None
    eval_count: int = 0
    wall_time_ms: Optional[float] = None
    scaled_gap: Optional[float] = None


def fig1_spec(n: int) -> GaussianSpec:
    """Inputs of the trigonometric test case: mean ``mu + 1/n``, covariance ``Sigma / n^2``."""
    return GaussianSpec(FIG1_MU + 1.0 / n, FIG1_SIGMA / n**2)


def remark1_spec(a: float) -> GaussianSpec:
    return GaussianSpec(np.zeros(2), np.eye(2) / a)


def remark1_analytic(a: float) -> np.ndarray:
    return np.array([a / (a + 2.0), 2.0 / (a + 2.0)])


# ---------------------------------------------------------------------------
# work units
# ---------------------------------------------------------------------------

@dataclass
class _Unit:
    method: str
    n: int
    replicate: int
    run: Callable[[np.random.Generator], tuple]


def _execute(cfg: ExperimentConfig, units: Sequence[_Unit]) -> list[ResultRow]:
    exp_key = tag_key(cfg.experiment)

    def work(unit: _Unit) -> ResultRow:
        rng = make_stream(cfg.seed, exp_key, unit.n, METHOD_KEYS[unit.method], unit.replicate)
        start = time.perf_counter()
        eta, se, evals, gap = unit.run(rng)
        elapsed = (time.perf_counter() - start) * 1e3
        eta_values = eta.values if isinstance(eta, ShapleyVector) else np.asarray(eta, dtype=float)
        if unit.method in ("perm_mc", "knn", "oracle") and abs(eta_values.sum() - 1) > 0.1:
            log.warning("%s estimate at n=%d sums to %.3f", unit.method, unit.n, eta_values.sum())
        return ResultRow(
            cfg.experiment, unit.method, unit.n, unit.replicate, eta_values,
            se, evals, elapsed if cfg.timing else None, gap,
        )

    threads = cfg.thread_count()
    if threads == 1:
        return [work(u) for u in units]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, units))


def _replicates(cfg: ExperimentConfig, method: str) -> range:
    return range(1) if method in SINGLE_ROW else range(cfg.replicates)


def _linear_units(cfg, spec_for: Callable[[int], GaussianSpec], model: BlackBoxModel) -> list[_Unit]:
    """Units for the linearization and Monte-Carlo methods shared by fig1 and custom."""
    units = []
    steps = None if cfg.h_rule == "std" else cfg.h_rule

    def linear(method, n):
        def run(rng):
            spec = spec_for(n)
            f = model.fresh()
            lin = linearize_pipeline(
                f, spec, method, steps=steps, n_samples=cfg.regression_n, rng=rng,
            )
            return shapley_linear(lin, spec.cov), None, lin.info["eval_count"], None
        return run

    def perm(n):
        def run(rng):
            f = model.fresh()
            est = shapley_perm_mc(f, spec_for(n), cfg.perm_budget, rng)
            return est, est.std_errors, f.eval_count, None
        return run

    def oracle(n):
        def run(rng):
            f = model.fresh()
            est = shapley_subset_oracle(f, spec_for(n), cfg.oracle, rng)
            return est, est.std_errors, f.eval_count, None
        return run

    pipeline = {"taylor": "exact-gradient", "finite_diff": "finite-diff", "regression": "regression"}
    for n in cfg.n_grid:
        for method in cfg.methods:
            if method in pipeline:
                make = linear(pipeline[method], n)
            elif method == "perm_mc":
                make = perm(n)
            else:
                make = oracle(n)
            units.extend(_Unit(method, n, r, make) for r in _replicates(cfg, method))
    return units


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_fig1(cfg: ExperimentConfig) -> list[ResultRow]:
    """Trigonometric model with shrinking Gaussian inputs.

    Per ``n``: Shapley effects of the Taylor surrogate (analytic gradient),
    of the finite-difference surrogate (steps from ``h_rule``), ``replicates``
    regression surrogates on ``regression_n`` points, ``replicates``
    permutation estimates of the true effects, and one subset-oracle
    reference.
    """
    return _execute(cfg, _linear_units(cfg, fig1_spec, fig1_model()))


def run_custom(cfg: ExperimentConfig) -> list[ResultRow]:
    """Like :func:`run_fig1` for a registry model with ``X ~ N(mean, cov / n)``."""
    p = len(cfg.mean)
    model = get_model(cfg.model, p=p, coeffs=cfg.coeffs, intercept=cfg.intercept)
    base = GaussianSpec(cfg.mean, cfg.cov)
    if "taylor" in cfg.methods and model.gradient is None:
        raise ValueError(f"model {cfg.model!r} has no analytic gradient for the taylor method")

    def spec_for(n):
        return GaussianSpec(base.mean, base.cov.entries / n)

    return _execute(cfg, _linear_units(cfg, spec_for, model))


def run_remark1(cfg: ExperimentConfig) -> list[ResultRow]:
    """``x1 + x2^2`` with ``X ~ N(0, I/a)`` for each ``a`` in ``n_grid``.

    The ``analytic`` row holds the closed-form effects and, in
    ``scaled_gap``, ``a * ||eta(f) - eta(f1)||_inf`` where ``eta(f1)`` is
    computed by the exact Gaussian-linear path.
    """
    units = []

    def analytic(a):
        def run(rng):
            spec = remark1_spec(a)
            lin = linearize_pipeline(remark1_model(), spec, "exact-gradient")
            eta_lin = shapley_linear(lin, spec.cov).values
            eta = remark1_analytic(a)
            return eta, None, 0, float(a * np.max(np.abs(eta - eta_lin)))
        return run

    def taylor(a):
        def run(rng):
            spec = remark1_spec(a)
            f = remark1_model()
            lin = linearize_pipeline(f, spec, "exact-gradient")
            return shapley_linear(lin, spec.cov), None, f.eval_count, None
        return run

    def oracle(a):
        def run(rng):
            f = remark1_model()
            est = shapley_subset_oracle(f, remark1_spec(a), cfg.oracle, rng)
            return est, est.std_errors, f.eval_count, None
        return run

    def perm(a):
        def run(rng):
            f = remark1_model()
            est = shapley_perm_mc(f, remark1_spec(a), cfg.perm_budget, rng)
            return est, est.std_errors, f.eval_count, None
        return run

    makers = {"analytic": analytic, "taylor": taylor, "oracle": oracle, "perm_mc": perm}
    for a in cfg.n_grid:
        for method in cfg.methods:
            units.extend(_Unit(method, a, r, makers[method](a)) for r in _replicates(cfg, method))
    return _execute(cfg, units)


def run_empirical42(cfg: ExperimentConfig) -> list[ResultRow]:
    """Squared norm of an empirical mean of the five-dimensional mixed sampler.

    ``gla`` rows estimate mean and covariance from one sample of ``n``
    summands and evaluate the exact Gaussian-linear effects at the analytic
    gradient ``2 * mean_hat``.  ``knn`` rows draw ``knn.batch_size``
    independent empirical means, evaluate the model on them and aggregate
    nearest-neighbour closed Sobol estimates.  Wall time covers sampling.
    """
    base = section42_sampler()
    p = base.dim

    def gla(n):
        def run(rng):
            f = sqnorm_model(p)
            moments = estimate_moments(base, n, n, rng, shared=cfg.shared_sample)
            est = gla_shapley_estimate(f, moments, n=n)
            return est, None, f.eval_count, None
        return run

    def knn(n):
        def run(rng):
            f = sqnorm_model(p)
            x = sample_empirical_means(base, n, cfg.knn.batch_size, rng)
            est = shapley_knn(SampleBatch(x, f(x)), cfg.knn.k, cfg.knn.n_tot)
            return est, None, f.eval_count, None
        return run

    makers = {"gla": gla, "knn": knn}
    units = [
        _Unit(method, n, r, makers[method](n))
        for n in cfg.n_grid
        for method in cfg.methods
        for r in range(cfg.replicates)
    ]
    return _execute(cfg, units)


RUNNERS = {
    "fig1": run_fig1,
    "remark1": run_remark1,
    "empirical42": run_empirical42,
    "custom": run_custom,
}


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    p = max((len(r.eta) for r in rows), default=0)
    header = (
        ["experiment", "method", "n", "replicate"]
        + [f"eta_{i + 1}" for i in range(p)]
        + [f"se_{i + 1}" for i in range(p)]
        + ["eval_count", "wall_time_ms", "scaled_gap"]
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        se = list(r.se) if r.se is not None else [None] * p
        writer.writerow(
            [r.experiment, r.method, r.n, r.replicate]
            + [_fmt(v) for v in r.eta]
            + [_fmt(v) for v in se]
            + [_fmt(r.eval_count), _fmt(r.wall_time_ms), _fmt(r.scaled_gap)]
        )
    return buf.getvalue()


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_results(rows: Sequence[ResultRow], cfg: ExperimentConfig, path) -> Path:
    """Write the CSV table and a sidecar ``<path>.config.json`` with the resolved config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows), encoding="utf-8")
    sidecar = path.with_name(path.name + ".config.json")
    sidecar.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def eta_matrix(rows: Sequence[ResultRow], method: str, n: int) -> np.ndarray:
    """Stack the Shapley vectors of all rows with the given method and ``n``."""
    sel = [r.eta for r in rows if r.method == method and r.n == n]
    return np.array(sel)
