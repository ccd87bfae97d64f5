"""Exact Shapley effects and closed Sobol indices for Gaussian inputs and affine models.

For ``Y = b0 + beta^T X`` with ``X ~ N(mu, Sigma)`` the conditional variance
``V(Y | X_u)`` is the quadratic form of ``beta_{-u}`` with the Schur
complement of ``Sigma_{u,u}``.  Shapley effects follow by enumerating the
``2^p`` subsets once and aggregating marginal contributions with the usual
``1 / C(p-1, |u|)`` weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionTooLarge,
    NotPositiveDefinite,
    NumericalError,
    ValidationError,
    ZeroVarianceModel,
)
from .gaussian import (
    MAX_DIM,
    CovMatrix,
    check_mask,
    complement,
    full_mask,
    mask_indices,
    validate_and_factor,
)

EXACT_TOL = 1e-10
DEFAULT_BLOCK_TOL = 1e-12
# upper bound on the number of matrices factored in one batched call
_BATCH = 1 << 16


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Affine surrogate ``x -> intercept + coeffs @ x``.

    ``info`` carries provenance such as the number of black-box evaluations
    spent to build the surrogate.
    """

    intercept: float
    coeffs: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        coeffs = np.array(np.ravel(self.coeffs), dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, x):
        return self.intercept + np.asarray(x, dtype=float) @ self.coeffs


@dataclass(frozen=True, eq=False)
class ShapleyVector:
    """Shapley effects, one per input.

    With ``exact=True`` the values are checked to lie in ``[0, 1]`` and sum
    to one (within ``1e-10``); Monte-Carlo estimates set ``exact=False`` and
    may carry standard errors.
    """

    values: np.ndarray
    std_errors: Optional[np.ndarray] = None
    exact: bool = True

    def __post_init__(self):
        values = np.array(np.ravel(self.values), dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.std_errors is not None:
            se = np.array(np.ravel(self.std_errors), dtype=float)
            if se.shape != values.shape:
                raise ValidationError("std_errors must match values in length")
            se.setflags(write=False)
            object.__setattr__(self, "std_errors", se)
        if self.exact:
            if np.any(values < -EXACT_TOL) or np.any(values > 1 + EXACT_TOL):
                raise NumericalError(f"exact Shapley effects outside [0, 1]: {values}")
            if abs(values.sum() - 1.0) > EXACT_TOL:
                raise NumericalError(f"exact Shapley effects sum to {values.sum()!r}")

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return self.values[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def soft_check(self, tol: float = 0.1) -> bool:
        return abs(self.values.sum() - 1.0) <= tol


@dataclass(frozen=True, eq=False)
class CondVarTable:
    """``entries[u] = V(Y | X_u)`` for every subset mask ``u``."""

    entries: np.ndarray
    dim: int

    def __getitem__(self, mask: int) -> float:
        return float(self.entries[mask])

    @property
    def total_variance(self) -> float:
        return float(self.entries[0])


# ---------------------------------------------------------------------------
# subset bookkeeping
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def binomial_weights(p: int) -> np.ndarray:
    """``1 / C(p-1, k)`` for ``k = 0..p-1``, rounded once from exact rationals."""
    return np.array([float(Fraction(1, math.comb(p - 1, k))) for k in range(p)])


@lru_cache(maxsize=8)
def _popcounts(p: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << p, dtype=np.uint32)).astype(np.int64)


def aggregate_subset_table(table: np.ndarray, p: int) -> np.ndarray:
    """Weighted marginal contributions of a set function.

    Returns ``(1/p) * sum_{u not containing i} w_|u| (table[u+i] - table[u])``
    for each ``i``, where ``w_k = 1 / C(p-1, k)``.  ``table`` is indexed by
    mask along its last axis; leading axes are batched.  For any set function
    the result sums to ``table[full] - table[empty]``.
    """
    table = np.asarray(table, dtype=float)
    if table.shape[-1] != 1 << p:
        raise ValidationError(f"table must have 2^{p} entries along its last axis")
    weights = binomial_weights(p)
    pop = _popcounts(p)
    masks = np.arange(1 << p)
    out = np.empty(table.shape[:-1] + (p,))
    for i in range(p):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        diff = table[..., without | bit] - table[..., without]
        out[..., i] = diff @ weights[pop[without]]
    return out / p


# ---------------------------------------------------------------------------
# conditional variances
# ---------------------------------------------------------------------------

def _as_cov(cov) -> CovMatrix:
    return cov if isinstance(cov, CovMatrix) else validate_and_factor(cov)


def _check_dims(model: LinearModel, cov: CovMatrix) -> None:
    if model.dim != cov.dim:
        raise ValidationError(f"model has {model.dim} coefficients, covariance is {cov.dim}-dimensional")


def conditional_variance_linear(model: LinearModel, cov, u: int) -> float:
    """``V(Y | X_u)`` through the Schur complement of ``Sigma_{u,u}``."""
    cov = _as_cov(cov)
    _check_dims(model, cov)
    p = cov.dim
    check_mask(u, p)
    beta = model.coeffs
    if u == 0:
        return float(beta @ cov.entries @ beta)
    if u == full_mask(p):
        return 0.0
    ui = mask_indices(u, p)
    ri = mask_indices(complement(u, p), p)
    try:
        l_uu = np.linalg.cholesky(cov.sub(ui))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("conditioning block is not positive definite") from exc
    w = np.linalg.solve(l_uu, cov.sub(ui, ri))
    schur = cov.sub(ri) - w.T @ w
    b = beta[ri]
    return max(float(b @ schur @ b), 0.0)


def _explained_variance(cov: np.ndarray, cross: np.ndarray, size: int, p: int, masks: np.ndarray) -> np.ndarray:
    """``c_u^T Sigma_uu^{-1} c_u`` for every mask in ``masks`` (all of cardinality ``size``)."""
    bits = ((masks[:, None] >> np.arange(p)) & 1).astype(bool)
    idx = np.nonzero(bits)[1].reshape(len(masks), size)
    blocks = cov[idx[:, :, None], idx[:, None, :]]
    try:
        chol = np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("a covariance sub-block is not positive definite") from exc
    w = np.linalg.solve(chol, cross[idx][..., None])[..., 0]
    return np.einsum("ij,ij->i", w, w)


def build_cond_var_table(model: LinearModel, cov) -> CondVarTable:
    """All ``2^p`` conditional variances ``V(Y | X_u)``.

    Uses ``V(Y|X_u) = V(Y) - c_u^T Sigma_uu^{-1} c_u`` with ``c = Sigma beta``,
    which equals the Schur-complement quadratic form; sub-blocks of equal
    size are factored in batches.
    """
    cov = _as_cov(cov)
    _check_dims(model, cov)
    p = cov.dim
    if p > MAX_DIM:
        raise DimensionTooLarge(
            f"p={p} exceeds the enumeration cap of {MAX_DIM}; use shapley_linear_blockwise "
            "on a block-diagonal covariance"
        )
    sigma = cov.entries
    beta = model.coeffs
    cross = sigma @ beta
    total = float(beta @ cross)
    entries = np.empty(1 << p)
    entries[0] = total
    pop = _popcounts(p)
    for size in range(1, p):
        masks = np.flatnonzero(pop == size)
        for start in range(0, len(masks), _BATCH):
            chunk = masks[start:start + _BATCH]
            entries[chunk] = total - _explained_variance(sigma, cross, size, p, chunk)
    entries[-1] = 0.0
    np.maximum(entries, 0.0, out=entries)
    return CondVarTable(entries, p)


# ---------------------------------------------------------------------------
# Shapley effects and closed Sobol indices
# ---------------------------------------------------------------------------

def _total_variance(model: LinearModel, cov: CovMatrix) -> float:
    var = float(model.coeffs @ cov.entries @ model.coeffs)
    scale = float(np.abs(model.coeffs) @ np.sqrt(np.diag(cov.entries))) ** 2
    if not var > EXACT_TOL * scale or scale == 0.0:
        raise ZeroVarianceModel("the linear model has zero output variance")
    return var


def shapley_from_table(table: CondVarTable) -> ShapleyVector:
    p = table.dim
    eta = aggregate_subset_table(-table.entries, p) / table.total_variance
    return ShapleyVector(eta)


def shapley_linear(model: LinearModel, cov) -> ShapleyVector:
    """Exact Shapley effects of an affine model of Gaussian inputs."""
    cov = _as_cov(cov)
    _check_dims(model, cov)
    _total_variance(model, cov)
    return shapley_from_table(build_cond_var_table(model, cov))


def closed_sobol_linear(model: LinearModel, cov, u: int) -> float:
    """``V(E(Y|X_u)) / V(Y) = 1 - V(Y|X_u) / V(Y)``."""
    cov = _as_cov(cov)
    _check_dims(model, cov)
    total = _total_variance(model, cov)
    check_mask(u, cov.dim)
    if u == 0:
        return 0.0
    if u == full_mask(cov.dim):
        return 1.0
    return min(max(1.0 - conditional_variance_linear(model, cov, u) / total, 0.0), 1.0)


def block_decompose(cov, tol: float = DEFAULT_BLOCK_TOL) -> list[list[int]]:
    """Groups of mutually dependent variables.

    Connected components of the graph linking ``i`` and ``j`` whenever
    ``|Sigma_ij| > tol * sqrt(Sigma_ii Sigma_jj)``; each block is sorted and
    blocks are ordered by their smallest index.
    """
    cov = _as_cov(cov)
    sigma = cov.entries
    sd = np.sqrt(np.diag(sigma))
    adjacency = np.abs(sigma) > tol * np.outer(sd, sd)
    _, labels = connected_components(adjacency, directed=False)
    blocks: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        blocks.setdefault(int(lab), []).append(i)
    return sorted(blocks.values(), key=lambda b: b[0])


def shapley_linear_blockwise(model: LinearModel, cov, tol: float = DEFAULT_BLOCK_TOL) -> ShapleyVector:
    """Shapley effects computed block by block.

    Independent blocks contribute additively to ``V(Y)``; the Shapley effects
    inside block ``b`` are the block's own effects scaled by ``V(Y_b)/V(Y)``.
    Blocks whose coefficients vanish get zeros.
    """
    cov = _as_cov(cov)
    _check_dims(model, cov)
    blocks = block_decompose(cov, tol)
    beta = model.coeffs
    sigma = cov.entries
    eta = np.zeros(cov.dim)
    block_vars = []
    for block in blocks:
        idx = np.asarray(block)
        b = beta[idx]
        block_vars.append(float(b @ sigma[np.ix_(idx, idx)] @ b))
    total = float(sum(block_vars))
    scale = float(np.abs(beta) @ np.sqrt(np.diag(sigma))) ** 2
    if not total > EXACT_TOL * scale or scale == 0.0:
        raise ZeroVarianceModel("the linear model has zero output variance")
    for block, var_b in zip(blocks, block_vars):
        idx = np.asarray(block)
        if not np.any(beta[idx]):
            continue
        sub_cov = validate_and_factor(sigma[np.ix_(idx, idx)])
        sub = shapley_linear(LinearModel(0.0, beta[idx]), sub_cov)
        eta[idx] = sub.values * (var_b / total)
    return ShapleyVector(eta)
