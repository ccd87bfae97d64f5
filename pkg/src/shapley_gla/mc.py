"""Monte-Carlo reference estimators of Shapley effects for non-linear models.

* :func:`double_mc_closed_sobol` / :func:`shapley_subset_oracle` -- nested
  sampling of every closed Sobol index, aggregated over the full subset
  lattice.  Brute force, but independent of any linearization.
* :func:`shapley_perm_mc` -- random-permutation estimator built on the cost
  ``c(u) = E[V(Y | X_u)]`` with a few conditional draws per prefix.
* :func:`knn_closed_sobol` / :func:`shapley_knn` -- given-data estimator for
  inputs we cannot sample conditionally; conditional means are replaced by
  nearest-neighbour averages.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateCoordinates,
    DimensionTooLarge,
    NonFiniteEvaluation,
    ValidationError,
    ZeroVarianceModel,
)
from .exact import ShapleyVector, aggregate_subset_table
from .gaussian import (
    ConditionalLaw,
    GaussianSpec,
    SampleBatch,
    check_mask,
    full_mask,
    mask_indices,
    sample_marginal,
)
from .linearize import BlackBoxModel

ORACLE_MAX_DIM = 12


@dataclass(frozen=True)
class PermEstimatorParams:
    n_var: int = 100_000
    n_perms: int = 1000
    n_inner: int = 3
    n_outer_per_prefix: int = 1

    def __post_init__(self):
        for name in ("n_var", "n_perms", "n_outer_per_prefix"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if int(self.n_inner) < 2:
            raise ValidationError("n_inner must be >= 2 (inner sample variance)")

    def scaled(self, budget_scale: float) -> "PermEstimatorParams":
        """Scale the outer-variance and permutation budgets, keeping at least 2 of each."""
        return replace(
            self,
            n_var=max(2, int(round(self.n_var * budget_scale))),
            n_perms=max(2, int(round(self.n_perms * budget_scale))),
        )


@dataclass(frozen=True)
class OracleParams:
    n_outer: int = 2000
    n_inner: int = 100
    n_boot: int = 200

    def __post_init__(self):
        if int(self.n_outer) < 2 or int(self.n_inner) < 2:
            raise ValidationError("n_outer and n_inner must both be >= 2")
        if int(self.n_boot) < 2:
            raise ValidationError("n_boot must be >= 2")


def _evaluate(f: BlackBoxModel, x: np.ndarray) -> np.ndarray:
    y = f(x)
    if not np.all(np.isfinite(y)):
        raise NonFiniteEvaluation(f"{f.name} returned non-finite values")
    return y


def _conditional_outputs(f, spec, law: ConditionalLaw, n_outer, n_inner, rng) -> np.ndarray:
    """Outputs of shape ``(n_outer, n_inner)``: outer draws of ``X_u``, inner draws of ``X_{-u} | X_u``."""
    x_u = sample_marginal(spec.marginal(law.u), n_outer, rng).inputs
    rest = law.sample_rest(x_u, n_inner, rng)
    return _evaluate(f, law.assemble(x_u[:, None, :], rest))


def _ratio_from_loops(means: np.ndarray, inner_var: np.ndarray, n_inner: int) -> np.ndarray:
    # means, inner_var: (..., n_outer)
    explained = means.var(axis=-1, ddof=1) - inner_var.mean(axis=-1) / n_inner
    total = explained + inner_var.mean(axis=-1)
    return explained / total


def _closed_sobol_loops(f, spec, u, params: OracleParams, rng):
    law = ConditionalLaw(spec, u)
    y = _conditional_outputs(f, spec, law, params.n_outer, params.n_inner, rng)
    means = y.mean(axis=1)
    inner_var = y.var(axis=1, ddof=1)
    total = means.var(ddof=1) + inner_var.mean() * (1 - 1 / params.n_inner)
    if not total > 0:
        raise ZeroVarianceModel("output variance estimate is not positive")
    return means, inner_var


def _bootstrap_ratio(means, inner_var, n_inner, n_boot, rng) -> np.ndarray:
    idx = rng.integers(0, means.shape[0], size=(n_boot, means.shape[0]))
    return _ratio_from_loops(means[idx], inner_var[idx], n_inner)


def double_mc_closed_sobol(
    f: BlackBoxModel,
    spec: GaussianSpec,
    u: int,
    params: OracleParams,
    rng: np.random.Generator,
    with_se: bool = False,
):
    """Double-loop estimate of ``V(E(Y | X_u)) / V(Y)``.

    The variance of the inner means is corrected for inner-sampling noise
    (``- mean(inner var) / n_inner``), and ``V(Y)`` is estimated from the
    same draws through the law of total variance.  The empty and the full
    subsets return 0 and 1 without sampling.  With ``with_se=True`` a
    ``(value, bootstrap_se)`` pair is returned.
    """
    p = spec.dim
    check_mask(u, p)
    if u == 0 or u == full_mask(p):
        value = 0.0 if u == 0 else 1.0
        return (value, 0.0) if with_se else value
    means, inner_var = _closed_sobol_loops(f, spec, u, params, rng)
    value = float(_ratio_from_loops(means, inner_var, params.n_inner))
    if not with_se:
        return value
    boot = _bootstrap_ratio(means, inner_var, params.n_inner, params.n_boot, rng)
    return value, float(boot.std(ddof=1))


def shapley_subset_oracle(
    f: BlackBoxModel, spec: GaussianSpec, params: OracleParams, rng: np.random.Generator
) -> ShapleyVector:
    """Shapley effects from double-loop estimates of all ``2^p`` closed Sobol indices.

    Standard errors come from a bootstrap over outer draws, resampled
    independently per subset.
    """
    p = spec.dim
    if p > ORACLE_MAX_DIM:
        raise DimensionTooLarge(f"subset oracle is limited to p <= {ORACLE_MAX_DIM}")
    n_sub = 1 << p
    table = np.zeros(n_sub)
    boot = np.zeros((params.n_boot, n_sub))
    table[-1] = 1.0
    boot[:, -1] = 1.0
    for u in range(1, n_sub - 1):
        means, inner_var = _closed_sobol_loops(f, spec, u, params, rng)
        table[u] = _ratio_from_loops(means, inner_var, params.n_inner)
        boot[:, u] = _bootstrap_ratio(means, inner_var, params.n_inner, params.n_boot, rng)
    eta = aggregate_subset_table(table, p)
    se = aggregate_subset_table(boot, p).std(axis=0, ddof=1)
    return ShapleyVector(eta, std_errors=se, exact=False)


def shapley_perm_mc(
    f: BlackBoxModel, spec: GaussianSpec, params: PermEstimatorParams, rng: np.random.Generator
) -> ShapleyVector:
    """Random-permutation Shapley estimator with conditional sampling.

    ``V(Y)`` comes from ``n_var`` marginal draws.  Along each random
    permutation, ``E[V(Y | X_prefix)]`` is estimated from
    ``n_outer_per_prefix`` outer draws of the prefix variables and
    ``n_inner`` conditional draws of the others; each variable is credited
    with the drop in this cost when it joins the prefix.  Standard errors are
    the spread of per-permutation contributions over ``sqrt(n_perms)``.
    """
    p = spec.dim
    if p == 1:
        return ShapleyVector([1.0], std_errors=[0.0], exact=False)
    y = _evaluate(f, sample_marginal(spec, params.n_var, rng).inputs)
    var_y = float(y.var(ddof=1))
    if not var_y > 0:
        raise ZeroVarianceModel("output variance estimate is not positive")

    m = params.n_perms
    perms = np.argsort(rng.random((m, p)), axis=1)
    prefix = np.zeros((m, p + 1), dtype=np.int64)
    prefix[:, 1:] = np.cumsum(1 << perms, axis=1)

    cost = np.empty((m, p + 1))
    cost[:, 0] = var_y
    cost[:, p] = 0.0
    inner = prefix[:, 1:p]
    n_o, n_i = params.n_outer_per_prefix, params.n_inner
    for u in np.unique(inner):
        rows, cols = np.nonzero(inner == u)
        law = ConditionalLaw(spec, int(u))
        y_u = _conditional_outputs(f, spec, law, rows.size * n_o, n_i, rng)
        est = y_u.var(axis=1, ddof=1).reshape(rows.size, n_o).mean(axis=1)
        cost[rows, cols + 1] = est

    drops = (cost[:, :-1] - cost[:, 1:]) / var_y
    contrib = np.zeros((m, p))
    np.put_along_axis(contrib, perms, drops, axis=1)
    eta = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(m)
    return ShapleyVector(eta, std_errors=se, exact=False)


# ---------------------------------------------------------------------------
# given-data (nearest-neighbour) estimators
# ---------------------------------------------------------------------------

_KNN_CHUNK = 512


def _nearest(z: np.ndarray, anchors: np.ndarray, k: int) -> np.ndarray:
    sq = np.einsum("ij,ij->i", z, z)
    out = np.empty((anchors.size, k), dtype=np.int64)
    for start in range(0, anchors.size, _KNN_CHUNK):
        a = anchors[start:start + _KNN_CHUNK]
        d2 = sq[a, None] + sq[None, :] - 2.0 * z[a] @ z.T
        out[start:start + a.size] = np.argpartition(d2, k - 1, axis=1)[:, :k]
    return out


def knn_closed_sobol(
    batch: SampleBatch, u: int, k: int, n_anchor: int | None = None, offset: int = 0
) -> float:
    """Nearest-neighbour estimate of ``V(E(Y | X_u)) / V(Y)`` from an i.i.d. sample.

    For each anchor point (``n_anchor`` consecutive rows starting at
    ``offset``, wrapping around; the sample is i.i.d. so any block of rows
    is a random subsample),
    ``Y`` is averaged over its ``k`` nearest neighbours in the standardized
    ``X_u`` coordinates.  The variance of those local means, minus the mean
    local variance over ``k``, is divided by the sample variance of ``Y``.
    """
    if batch.outputs is None:
        raise ValidationError("knn estimation needs a batch with outputs")
    n, p = batch.inputs.shape
    check_mask(u, p)
    if k < 2:
        raise ValidationError("k must be >= 2")
    if n < 10 * k:
        raise ValidationError(f"batch of {n} points is too small for k={k} (need >= {10 * k})")
    y = batch.outputs
    var_y = float(y.var(ddof=1))
    if u == 0 or var_y == 0.0:
        return 0.0
    x = batch.inputs[:, mask_indices(u, p)]
    sd = x.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateCoordinates("a conditioning coordinate has zero sample variance")
    z = (x - x.mean(axis=0)) / sd
    n_anchor = n if n_anchor is None else min(n, int(n_anchor))
    if n_anchor < 2:
        raise ValidationError("need at least 2 anchor points")
    anchors = (int(offset) + np.arange(n_anchor)) % n
    local = y[_nearest(z, anchors, k)]
    explained = local.mean(axis=1).var(ddof=1) - local.var(axis=1, ddof=1).mean() / k
    return float(explained / var_y)


def shapley_knn(batch: SampleBatch, k: int, n_tot: int | None = None) -> ShapleyVector:
    """Shapley effects from nearest-neighbour estimates of every closed Sobol index.

    ``n_tot`` is the total number of anchor points, split evenly over the
    ``2^p - 2`` proper nonempty subsets (each subset gets its own block of
    rows); ``None`` uses every row as an anchor for every subset.
    """
    n, p = batch.inputs.shape
    if p > ORACLE_MAX_DIM:
        raise DimensionTooLarge(f"knn aggregation is limited to p <= {ORACLE_MAX_DIM}")
    n_sub = (1 << p) - 2
    per_subset = None if n_tot is None else max(2, int(n_tot) // max(n_sub, 1))
    table = np.zeros(1 << p)
    table[-1] = 1.0
    for u in range(1, (1 << p) - 1):
        offset = 0 if per_subset is None else (u - 1) * per_subset
        table[u] = knn_closed_sobol(batch, u, k, per_subset, offset)
    return ShapleyVector(aggregate_subset_table(table, p), exact=False)
