"""Multivariate Gaussian primitives.

Covariance validation and Cholesky factorization, conditional moments
(Schur complements), and marginal / conditional sampling driven by explicit
random streams.

Subsets of variables are plain ``int`` bitmasks: bit ``i`` is set iff the
(0-based) variable ``i`` belongs to the subset.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_solve

from .errors import NotPositiveDefinite, NotSymmetric, ValidationError

MAX_DIM = 25
SYMMETRY_RTOL = 1e-10
_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``(seed, *key)``.

    Streams with distinct keys are statistically independent and do not
    depend on the order in which they are created.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def tag_key(tag: str) -> int:
    """Stable integer key for a string tag (for use in ``make_stream``)."""
    return zlib.crc32(tag.encode("utf-8"))


def seed_tag(rng: np.random.Generator) -> int:
    ss = getattr(rng.bit_generator, "seed_seq", None)
    if ss is None or not hasattr(ss, "entropy"):
        return -1
    return zlib.crc32(repr((ss.entropy, tuple(ss.spawn_key))).encode())


# ---------------------------------------------------------------------------
# subset masks
# ---------------------------------------------------------------------------

def full_mask(p: int) -> int:
    return (1 << p) - 1


def mask_from_indices(indices: Iterable[int], p: Optional[int] = None) -> int:
    mask = 0
    for i in indices:
        i = int(i)
        if i < 0 or (p is not None and i >= p):
            raise ValidationError(f"variable index {i} out of range for p={p}")
        mask |= 1 << i
    return mask


def mask_indices(mask: int, p: int) -> np.ndarray:
    check_mask(mask, p)
    return np.array([i for i in range(p) if mask >> i & 1], dtype=int)


def complement(mask: int, p: int) -> int:
    check_mask(mask, p)
    return full_mask(p) ^ mask


def check_mask(mask: int, p: int) -> None:
    if mask < 0 or mask >> p:
        raise ValidationError(f"subset mask {mask:#x} has bits outside [0, {p})")


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Symmetric positive-definite covariance with its cached Cholesky factor.

    Build instances with :func:`validate_and_factor`.
    """

    entries: np.ndarray
    chol: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def sub(self, rows: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
        cols = rows if cols is None else cols
        return self.entries[np.ix_(rows, cols)]

    def scaled(self, c: float) -> "CovMatrix":
        return validate_and_factor(self.entries * c)


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    mean: np.ndarray
    cov: CovMatrix

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.ravel(self.mean)))
        if not isinstance(self.cov, CovMatrix):
            object.__setattr__(self, "cov", validate_and_factor(self.cov))
        if self.mean.shape[0] != self.cov.dim:
            raise ValidationError(
                f"mean has length {self.mean.shape[0]} but covariance is {self.cov.dim}x{self.cov.dim}"
            )

    @property
    def dim(self) -> int:
        return self.cov.dim

    def marginal(self, mask: int) -> "GaussianSpec":
        idx = mask_indices(mask, self.dim)
        return GaussianSpec(self.mean[idx], validate_and_factor(self.cov.sub(idx)))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    inputs: np.ndarray
    outputs: Optional[np.ndarray] = None
    seed_tag: int = -1

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "inputs", inputs)
        if self.outputs is not None:
            outputs = np.asarray(self.outputs, dtype=float).ravel()
            if outputs.shape[0] != inputs.shape[0]:
                raise ValidationError(
                    f"{outputs.shape[0]} outputs for {inputs.shape[0]} input rows"
                )
            object.__setattr__(self, "outputs", outputs)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def with_outputs(self, outputs) -> "SampleBatch":
        return SampleBatch(self.inputs, outputs, self.seed_tag)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def validate_and_factor(raw) -> CovMatrix:
    """Symmetrize, check and Cholesky-factor a covariance matrix.

    Raises
    ------
    NotSymmetric
        If ``max|M - M^T| > 1e-10 * max|M|``.
    NotPositiveDefinite
        If a Cholesky pivot falls below ``p * eps * max(diag)``.
    """
    m = np.atleast_2d(np.asarray(raw, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"covariance must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("covariance has non-finite entries")
    p = m.shape[0]
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise NotSymmetric("covariance matrix is not symmetric")
    m = 0.5 * (m + m.T)
    tol = p * _EPS * np.max(np.diag(m)) if p else 0.0
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from exc
    pivots = np.diag(chol) ** 2
    if not np.all(pivots > tol) or not tol > 0:
        raise NotPositiveDefinite(
            f"covariance matrix is numerically singular (smallest pivot {pivots.min():.3e})"
        )
    return CovMatrix(_frozen(m), _frozen(chol))


class ConditionalLaw:
    """Law of ``X_{-u}`` given ``X_u`` for a fixed subset ``u``.

    The regression matrix and the Cholesky factor of the Schur complement are
    computed once; conditioning on many values of ``x_u`` is then a matrix
    product.
    """

    def __init__(self, spec: GaussianSpec, u: int):
        p = spec.dim
        check_mask(u, p)
        if u == 0 or u == full_mask(p):
            raise ValidationError("conditioning subset must be nonempty and proper")
        self.spec = spec
        self.u = u
        self.u_idx = mask_indices(u, p)
        self.rest_idx = mask_indices(complement(u, p), p)
        cov = spec.cov
        s_uu = cov.sub(self.u_idx)
        s_ru = cov.sub(self.rest_idx, self.u_idx)
        try:
            l_uu = np.linalg.cholesky(s_uu)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("conditioning block is not positive definite") from exc
        # regression coefficients B = S_ru S_uu^{-1}
        self.coef = cho_solve((l_uu, True), s_ru.T).T
        schur = cov.sub(self.rest_idx) - s_ru @ self.coef.T
        self.cov_rest = validate_and_factor(schur)

    def mean_rest(self, x_u) -> np.ndarray:
        x_u = np.asarray(x_u, dtype=float)
        if x_u.shape[-1] != self.u_idx.size:
            raise ValidationError(f"x_u must have length {self.u_idx.size}")
        mu = self.spec.mean
        return mu[self.rest_idx] + (x_u - mu[self.u_idx]) @ self.coef.T

    def sample_rest(self, x_u, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` draws of ``X_{-u}`` for each row of ``x_u``.

        ``x_u`` of shape ``(|u|,)`` gives ``(n, p-|u|)``; shape ``(m, |u|)``
        gives ``(m, n, p-|u|)``.
        """
        mean = self.mean_rest(x_u)
        z = rng.standard_normal(mean.shape[:-1] + (n, self.rest_idx.size))
        return mean[..., None, :] + z @ self.cov_rest.chol.T

    def assemble(self, x_u, x_rest) -> np.ndarray:
        """Full ``p``-vectors from the two coordinate groups (broadcasting)."""
        x_u = np.asarray(x_u, dtype=float)
        shape = np.broadcast_shapes(x_u.shape[:-1], x_rest.shape[:-1])
        out = np.empty(shape + (self.spec.dim,))
        out[..., self.u_idx] = x_u
        out[..., self.rest_idx] = x_rest
        return out


def conditional_moments(spec: GaussianSpec, u: int, x_u) -> tuple[np.ndarray, CovMatrix]:
    """Mean and covariance of ``X_{-u}`` given ``X_u = x_u``."""
    law = ConditionalLaw(spec, u)
    return law.mean_rest(x_u), law.cov_rest


def _standard_draws(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    if n < 1:
        raise ValidationError("sample size must be >= 1")
    return rng.standard_normal((n, p))


def sample_marginal(spec: GaussianSpec, n: int, rng: np.random.Generator) -> SampleBatch:
    z = _standard_draws(rng, n, spec.dim)
    return SampleBatch(spec.mean + z @ spec.cov.chol.T, seed_tag=seed_tag(rng))


def sample_conditional(
    spec: GaussianSpec, u: int, x_u, n: int, rng: np.random.Generator
) -> SampleBatch:
    """``n`` draws of ``X_{-u}`` given ``X_u = x_u`` (columns in increasing index order)."""
    law = ConditionalLaw(spec, u)
    x_u = np.asarray(x_u, dtype=float).ravel()
    z = _standard_draws(rng, n, law.rest_idx.size)
    return SampleBatch(law.mean_rest(x_u) + z @ law.cov_rest.chol.T, seed_tag=seed_tag(rng))

