"""Acceptance suite A1-A8.

Each criterion is a function returning a :class:`CriterionResult`.  Size
knobs (case counts, replicates) default to the full criterion; the tests
and the CLI run them at those defaults.
"""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .exact import LinearModel, shapley_linear, shapley_linear_blockwise
from .experiments import eta_matrix, remark1_analytic, rows_to_csv, run_empirical42, run_fig1, run_remark1
from .gaussian import SampleBatch, make_stream
from .errors import RankDeficient
from .linearize import BlackBoxModel, finite_diff_gradient, fit_linear_regression
from .mc import OracleParams

TIME_LIMITS = {"A1": 60.0, "A2": 120.0, "A3": 600.0, "A6": 900.0}


@dataclass
class CriterionResult:
    id: str
    passed: bool
    detail: str
    runtime_s: float = 0.0
    checks: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.id} {'PASS' if self.passed else 'FAIL'} ({self.runtime_s:.1f}s) {self.detail}"


def _summarize(cid: str, checks: dict, extra: str = "") -> CriterionResult:
    failed = [k for k, v in checks.items() if not v]
    detail = "all checks passed" if not failed else "failed: " + ", ".join(failed)
    return CriterionResult(cid, not failed, detail + (f"; {extra}" if extra else ""), checks=checks)


def _random_cov(rng, p, extra=2, ridge=0.1):
    w = rng.standard_normal((p, p + extra))
    return w @ w.T / p + ridge * np.eye(p)


# ---------------------------------------------------------------------------

def criterion_a1(n_outer: int = 2000, n_inner: int = 100, seed: int = 11) -> CriterionResult:
    grid = [4, 16, 64]
    cfg = ExperimentConfig(
        "remark1", n_grid=grid, methods=["analytic", "oracle"], seed=seed, timing=False,
        oracle=OracleParams(n_outer, n_inner, 50),
    )
    rows = run_remark1(cfg)
    gap_ok, hits, parts = True, 0, []
    for a in grid:
        gap = next(r.scaled_gap for r in rows if r.method == "analytic" and r.n == a)
        gap_ok &= abs(gap - 2 * a / (a + 2)) <= 1e-12
        oracle = eta_matrix(rows, "oracle", a)[0]
        err = float(np.max(np.abs(oracle - remark1_analytic(a))))
        hits += err <= 0.03
        parts.append(f"a={a} oracle err {err:.4f}")
    return _summarize("A1", {"gap": gap_ok, "oracle_2_of_3": hits >= 2}, "; ".join(parts))


def criterion_a2(n_cases: int = 1000, n_block_cases: int = 50, seed: int = 12) -> CriterionResult:
    rng = make_stream(seed)
    worst = {"sum": 0.0, "neg": 0.0, "scale": 0.0, "perm": 0.0, "block": 0.0}
    for _ in range(n_cases):
        p = int(rng.integers(2, 13))
        beta = rng.standard_normal(p)
        cov = _random_cov(rng, p)
        eta = shapley_linear(LinearModel(0.0, beta), cov).values
        worst["sum"] = max(worst["sum"], abs(eta.sum() - 1.0))
        worst["neg"] = max(worst["neg"], -eta.min())
        c = float(np.exp(rng.uniform(-3, 3)))
        scaled = [
            shapley_linear(LinearModel(0.0, beta), c * cov).values,
            shapley_linear(LinearModel(0.0, c * beta), cov).values,
        ]
        worst["scale"] = max(worst["scale"], *(np.max(np.abs(s - eta)) for s in scaled))
        pi = rng.permutation(p)
        permuted = shapley_linear(LinearModel(0.0, beta[pi]), cov[np.ix_(pi, pi)]).values
        worst["perm"] = max(worst["perm"], np.max(np.abs(permuted - eta[pi])))
    for _ in range(n_block_cases):
        cov = np.zeros((12, 12))
        for b in range(3):
            sl = slice(4 * b, 4 * b + 4)
            cov[sl, sl] = _random_cov(rng, 4)
        model = LinearModel(0.0, rng.standard_normal(12))
        full = shapley_linear(model, cov).values
        block = shapley_linear_blockwise(model, cov).values
        worst["block"] = max(worst["block"], np.max(np.abs(full - block)))
    checks = {
        "sum_to_one": worst["sum"] <= 1e-10,
        "nonnegative": worst["neg"] <= 1e-10,
        "scale_invariance": worst["scale"] <= 1e-12,
        "permutation_equivariance": worst["perm"] <= 1e-12,
        "blockwise_equals_full": worst["block"] <= 1e-10,
    }
    return _summarize("A2", checks, ", ".join(f"max {k} {v:.1e}" for k, v in worst.items()))


def criterion_a3(
    replicates: int = 20,
    budget_scale: float = 0.1,
    oracle: OracleParams = OracleParams(4000, 200, 50),
    seed: int = 13,
    threads: int = 1,
) -> CriterionResult:
    grid = [2, 4, 8, 16]
    if isinstance(oracle, dict):
        oracle = OracleParams(**oracle)
    cfg = ExperimentConfig(
        "fig1", n_grid=grid, replicates=replicates, budget_scale=budget_scale, seed=seed,
        oracle=oracle, regression_n=40, threads=threads, timing=False,
    )
    rows = run_fig1(cfg)

    def one(method, n):
        return eta_matrix(rows, method, n)[0]

    fd_gap = [float(np.max(np.abs(one("finite_diff", n) - one("taylor", n)))) for n in grid]
    mc_gap = [
        float(np.max(np.abs(np.median(eta_matrix(rows, "perm_mc", n), axis=0) - one("taylor", n))))
        for n in grid
    ]
    # deviation from the true effects, with the subset oracle as reference
    ref = one("oracle", 2)
    taylor_dev = np.max(np.abs(one("taylor", 2) - ref))
    reg_dev = np.max(np.abs(eta_matrix(rows, "regression", 2) - ref), axis=1)
    worse = int(np.sum(reg_dev > taylor_dev))
    checks = {
        "i_fd_gap_nonincreasing": all(b <= a for a, b in zip(fd_gap, fd_gap[1:])),
        "i_fd_gap_below_0.01_at_16": fd_gap[-1] < 0.01,
        "ii_mc_median_gap_shrinks": mc_gap[-1] < mc_gap[0],
        "iii_regression_worse_than_taylor_15_of_20": worse >= int(np.ceil(0.75 * replicates)),
    }
    extra = (
        f"fd gap {[round(g, 5) for g in fd_gap]}; mc median gap {[round(g, 4) for g in mc_gap]}; "
        f"n=2 taylor dev {taylor_dev:.3f}, regression worse in {worse}/{replicates}"
    )
    return _summarize("A3", checks, extra)


def _ratio_test(fn, dfn, centers, hs=(0.1, 0.05, 0.025)):
    """Error ratios of central differences under step halving."""
    ratios = []
    model = BlackBoxModel(lambda x: fn(x[:, 0]), 1, "slice")
    for c in centers:
        errs = [abs(finite_diff_gradient(model, [c], h)[0] - dfn(c)) for h in hs]
        ratios.extend(errs[i] / errs[i + 1] for i in range(len(errs) - 1))
    return ratios


def criterion_a4(n_centers: int = 10, seed: int = 14) -> CriterionResult:
    rng = make_stream(seed)
    centers = rng.uniform(-1.0, 1.0, n_centers)
    ratios = _ratio_test(np.exp, np.exp, centers)
    ratios += _ratio_test(np.sin, np.cos, centers)
    worst_rel = 0.0
    for _ in range(n_centers):
        p = int(rng.integers(1, 7))
        q = rng.standard_normal((p, p))
        q = (q + q.T) / 2
        b = rng.standard_normal(p)
        model = BlackBoxModel(lambda x, q=q, b=b: np.einsum("ij,jk,ik->i", x, q, x) + x @ b + 1.0, p, "quad")
        x0 = rng.standard_normal(p)
        grad = 2 * q @ x0 + b
        est = finite_diff_gradient(model, x0, rng.uniform(0.1, 1.0, p))
        worst_rel = max(worst_rel, np.max(np.abs(est - grad)) / max(1.0, np.max(np.abs(grad))))
    checks = {
        "ratio_in_[3.5,4.5]": bool(all(3.5 <= r <= 4.5 for r in ratios)),
        "quadratic_exact": worst_rel <= 1e-9,
    }
    return _summarize("A4", checks, f"ratios in [{min(ratios):.3f}, {max(ratios):.3f}], quad rel err {worst_rel:.1e}")


def criterion_a5(n_cases: int = 20, seed: int = 15) -> CriterionResult:
    rng = make_stream(seed)
    worst = 0.0
    for _ in range(n_cases):
        p = int(rng.integers(1, 11))
        x = rng.standard_normal((p + 1, p))
        beta0, beta = rng.standard_normal(), rng.standard_normal(p)
        fit = fit_linear_regression(SampleBatch(x, beta0 + x @ beta))
        err = max(abs(fit.model.intercept - beta0), np.max(np.abs(fit.model.coeffs - beta)))
        worst = max(worst, err)
    x = rng.standard_normal((20, 3))
    x[:, 2] = 2 * x[:, 0] - x[:, 1]
    try:
        fit_linear_regression(SampleBatch(x, x.sum(axis=1)))
        rejected = False
    except RankDeficient:
        rejected = True
    return _summarize("A5", {"recovery": worst <= 1e-8, "rank_deficient_rejected": rejected},
                      f"max coefficient error {worst:.1e}")


def criterion_a6(replicates: int = 200, seed: int = 16, threads: int = 1) -> CriterionResult:
    grid = [100, 1000]
    cfg = ExperimentConfig("empirical42", n_grid=grid, replicates=replicates, seed=seed, threads=threads)
    rows = run_empirical42(cfg)
    sd = {(m, n): eta_matrix(rows, m, n).std(axis=0, ddof=1) for m in ("gla", "knn") for n in grid}
    times_ok = True
    for n in grid:
        gla_t = [r.wall_time_ms for r in rows if r.method == "gla" and r.n == n]
        knn_t = [r.wall_time_ms for r in rows if r.method == "knn" and r.n == n]
        times_ok &= all(g < k for g, k in zip(gla_t, knn_t))
    checks = {
        "gla_sd_decreases": bool(np.all(sd["gla", 1000] < sd["gla", 100])),
        "gla_sd_below_knn_sd_n100": bool(np.all(sd["gla", 100] < sd["knn", 100])),
        "gla_faster_every_row": bool(times_ok),
    }
    extra = (
        f"gla sd n=100 {np.round(sd['gla', 100], 4).tolist()}, n=1000 {np.round(sd['gla', 1000], 4).tolist()}; "
        f"knn sd n=100 {np.round(sd['knn', 100], 4).tolist()}"
    )
    return _summarize("A6", checks, extra)


def criterion_a7(seed: int = 17) -> CriterionResult:
    rng = make_stream(seed)
    cov15 = _random_cov(rng, 15)
    start = time.perf_counter()
    shapley_linear(LinearModel(0.0, rng.standard_normal(15)), cov15)
    t15 = time.perf_counter() - start
    cov24 = np.zeros((24, 24))
    for b in range(4):
        sl = slice(6 * b, 6 * b + 6)
        cov24[sl, sl] = _random_cov(rng, 6)
    start = time.perf_counter()
    shapley_linear_blockwise(LinearModel(0.0, rng.standard_normal(24)), cov24)
    t24 = time.perf_counter() - start
    return _summarize("A7", {"p15_under_5s": t15 < 5.0, "p24_blockwise_under_5s": t24 < 5.0},
                      f"p=15 {t15:.3f}s, p=24 blockwise {t24:.3f}s")


def criterion_a8(seed: int = 18) -> CriterionResult:
    fig1 = dict(
        experiment="fig1", n_grid=[2, 8], replicates=4, budget_scale=0.01, seed=seed, timing=False,
        oracle={"n_outer": 200, "n_inner": 20, "n_boot": 20},
    )
    emp = dict(experiment="empirical42", n_grid=[100], replicates=4, seed=seed, timing=False)
    checks = {}
    for name, base in (("fig1", fig1), ("empirical42", emp)):
        outputs = [
            rows_to_csv(run_fig1(cfg) if name == "fig1" else run_empirical42(cfg))
            for cfg in (ExperimentConfig(**base, threads=t) for t in (1, 8))
        ]
        checks[f"{name}_identical_1_vs_8_threads"] = outputs[0] == outputs[1]
    return _summarize("A8", checks)


CRITERIA: dict[str, Callable[..., CriterionResult]] = {
    "A1": criterion_a1,
    "A2": criterion_a2,
    "A3": criterion_a3,
    "A4": criterion_a4,
    "A5": criterion_a5,
    "A6": criterion_a6,
    "A7": criterion_a7,
    "A8": criterion_a8,
}


def run_criterion(cid: str, **kwargs) -> CriterionResult:
    """Run one criterion, timing it and turning exceptions into failures."""
    start = time.perf_counter()
    try:
        result = CRITERIA[cid](**kwargs)
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        result = CriterionResult(cid, False, f"raised {type(exc).__name__}: {exc}",
                                 checks={"traceback": traceback.format_exc()})
    result.runtime_s = time.perf_counter() - start
    limit = TIME_LIMITS.get(cid)
    if limit is not None and result.runtime_s >= limit:
        result.passed = False
        result.detail += f"; runtime {result.runtime_s:.1f}s exceeds {limit:.0f}s"
    return result


def run_acceptance(only: Optional[list] = None, echo: Optional[Callable[[str], None]] = print,
                   options: Optional[dict] = None) -> list[CriterionResult]:
    options = options or {}
    results = []
    for cid in only or list(CRITERIA):
        if cid not in CRITERIA:
            raise KeyError(f"unknown criterion {cid!r}")
        res = run_criterion(cid, **options.get(cid, {}))
        if echo:
            echo(res.line())
        results.append(res)
    return results


def report_json(results: list[CriterionResult]) -> str:
    return json.dumps(
        {"passed": all(r.passed for r in results), "criteria": [asdict(r) for r in results]},
        indent=2,
        default=lambda o: bool(o) if isinstance(o, np.bool_) else str(o),
    )
