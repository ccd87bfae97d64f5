"""Shapley effects when the inputs are empirical means of i.i.d. vectors.

The input ``X = mean(U_1..U_n)`` is approximately ``N(mu, Sigma/n)``; the
Gaussian-linear approximation (GLA) estimator linearizes the model at an
estimate of ``mu`` and plugs an estimate of ``Sigma`` into the exact
Gaussian-linear formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import NotPositiveDefinite, ValidationError
from .exact import ShapleyVector, shapley_linear
from .gaussian import CovMatrix, GaussianSpec, validate_and_factor
from .linearize import BlackBoxModel, StepVector, default_steps, finite_diff_gradient, taylor_linear

JITTER_LEVELS = (1e-12, 1e-10, 1e-8)

# A2 ~ N(0, 4) is read as variance 4, i.e. standard deviation 2.
MIXED5_NORMAL_SD = 2.0
MIXED5_MIXING = np.array([
    [1.0, 2.0, -0.5, 0.0, 0.0],
    [2.0, 1.0, 0.0, 0.0, -0.5],
    [0.0, 2.0, 1.0, 0.0, -0.5],
    [2.0, -0.5, 0.0, 1.0, 0.0],
    [0.0, 0.0, 2.0, -0.5, 1.0],
])
# means and variances of A1..A5: U[5,10], N(0,4), T(-1,3.5,8), 5 Beta(1,2), Exp(1)
MIXED5_BASE_MEAN = np.array([7.5, 0.0, 3.5, 5.0 / 3.0, 1.0])
MIXED5_BASE_VAR = np.array([25.0 / 12.0, MIXED5_NORMAL_SD**2, 81.0 / 24.0, 25.0 / 18.0, 1.0])


@dataclass(frozen=True, eq=False)
class BaseSampler:
    """Law of the summand ``U``: ``draw(rng, size)`` returns ``(size, dim)`` i.i.d. rows."""

    name: str
    dim: int
    draw: Callable[[np.random.Generator, int], np.ndarray]

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.asarray(self.draw(rng, size), dtype=float)
        return out.reshape(size, self.dim)


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    mean_hat: np.ndarray
    cov_hat: CovMatrix
    n_mean: int
    n_cov: int


def section42_sampler(mixing=None) -> BaseSampler:
    """Five dependent, non-Gaussian inputs built from independent base laws.

    ``A1 ~ U[5, 10]``, ``A2 ~ N(0, 4)``, ``A3`` symmetric triangular on
    ``[-1, 8]``, ``A4 ~ 5 Beta(1, 2)``, ``A5 ~ Exp(1)``; ``U = M A`` with the
    fixed mixing matrix ``M`` (overridable for testing).
    """
    mix = MIXED5_MIXING if mixing is None else np.asarray(mixing, dtype=float)
    if mix.shape != (5, 5):
        raise ValidationError("mixing matrix must be 5x5")

    def draw(rng, size):
        a = np.column_stack([
            rng.uniform(5.0, 10.0, size),
            rng.normal(0.0, MIXED5_NORMAL_SD, size),
            rng.triangular(-1.0, 3.5, 8.0, size),
            5.0 * rng.beta(1.0, 2.0, size),
            rng.exponential(1.0, size),
        ])
        return a @ mix.T

    return BaseSampler("section42", 5, draw)


def section42_moments(mixing=None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic mean and covariance of the ``section42`` summand."""
    mix = MIXED5_MIXING if mixing is None else np.asarray(mixing, dtype=float)
    return mix @ MIXED5_BASE_MEAN, mix @ np.diag(MIXED5_BASE_VAR) @ mix.T


def gaussian_sampler(mean, cov) -> BaseSampler:
    spec = GaussianSpec(mean, cov)
    chol = spec.cov.chol

    def draw(rng, size):
        return spec.mean + rng.standard_normal((size, spec.dim)) @ chol.T

    return BaseSampler("gaussian", spec.dim, draw)


def constant_sampler(value) -> BaseSampler:
    c = np.asarray(value, dtype=float).ravel()
    return BaseSampler("constant", c.size, lambda rng, size: np.tile(c, (size, 1)))


def get_sampler(name: str, **kwargs) -> BaseSampler:
    if name == "section42":
        return section42_sampler(kwargs.get("mixing"))
    if name == "gaussian":
        return gaussian_sampler(kwargs["mean"], kwargs["cov"])
    if name == "constant":
        return constant_sampler(kwargs["value"])
    raise ValidationError(f"unknown sampler {name!r}; built-ins are section42, gaussian, constant")


def sample_empirical_mean(base: BaseSampler, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValidationError("n must be >= 1")
    return base(rng, n).mean(axis=0)


def sample_empirical_means(base: BaseSampler, n: int, size: int, rng: np.random.Generator,
                           chunk_rows: int = 1 << 20) -> np.ndarray:
    """``size`` independent empirical means of ``n`` draws each, shape ``(size, dim)``."""
    if n < 1 or size < 1:
        raise ValidationError("n and size must be >= 1")
    per_chunk = max(1, chunk_rows // n)
    out = np.empty((size, base.dim))
    for start in range(0, size, per_chunk):
        m = min(per_chunk, size - start)
        out[start:start + m] = base(rng, m * n).reshape(m, n, base.dim).mean(axis=1)
    return out


def _jittered_cov(raw: np.ndarray) -> CovMatrix:
    try:
        return validate_and_factor(raw)
    except NotPositiveDefinite:
        pass
    scale = float(np.mean(np.diag(raw)))
    eye = np.eye(raw.shape[0])
    for eps in JITTER_LEVELS:
        try:
            return validate_and_factor(raw + eps * scale * eye)
        except NotPositiveDefinite:
            continue
    raise NotPositiveDefinite(
        "sample covariance is not positive definite even after jitter; "
        "is the base sampler degenerate?"
    )


def estimate_moments(
    base: BaseSampler,
    n_mean: int,
    n_cov: int,
    rng: np.random.Generator,
    shared: bool = False,
) -> MomentEstimate:
    """Sample mean and unbiased sample covariance of the summand law.

    By default the two use independent samples; ``shared=True`` computes
    both from one sample of size ``n_cov`` (``n_mean`` is then ignored).
    """
    if n_cov < base.dim + 1:
        raise ValidationError(f"n_cov must be >= {base.dim + 1}")
    if shared:
        sample = base(rng, n_cov)
        mean_hat, n_mean = sample.mean(axis=0), n_cov
    else:
        if n_mean < 1:
            raise ValidationError("n_mean must be >= 1")
        mean_hat = base(rng, n_mean).mean(axis=0)
        sample = base(rng, n_cov)
    cov = np.atleast_2d(np.cov(sample, rowvar=False, ddof=1))
    return MomentEstimate(mean_hat, _jittered_cov(cov), n_mean, n_cov)


HRule = Union[None, float, Callable[[CovMatrix], StepVector]]


def gla_shapley_estimate(
    f: BlackBoxModel,
    moments: MomentEstimate,
    h_rule: HRule = None,
    *,
    gradient: Optional[Callable] = None,
    n: Optional[int] = None,
) -> ShapleyVector:
    """Gaussian-linear-approximation estimate of the Shapley effects.

    The gradient at ``mean_hat`` comes from ``gradient`` (or ``f.gradient``)
    when available, otherwise from central differences whose steps follow
    ``h_rule``: a callable applied to ``cov_hat / n`` (default: one standard
    deviation of the empirical mean), or a fixed positive step.  The Shapley
    effects are then exact for that gradient and ``cov_hat``; rescaling the
    covariance would not change them.
    """
    gradient = gradient or f.gradient
    center = moments.mean_hat
    if gradient is not None:
        g = np.asarray(gradient(center), dtype=float)
    else:
        if h_rule is None or callable(h_rule):
            scale = 1.0 / (n if n else max(moments.n_mean, 1))
            rule = h_rule or default_steps
            steps = rule(moments.cov_hat.scaled(scale))
        else:
            steps = StepVector(np.full(center.shape, float(h_rule)))
        g = finite_diff_gradient(f, center, steps)
    lin = taylor_linear(g, center, 0.0)
    return shapley_linear(lin, moments.cov_hat)
