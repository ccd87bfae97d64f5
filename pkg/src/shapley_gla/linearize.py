"""Affine surrogates of black-box models.

Three routes: a user-supplied gradient (first-order Taylor polynomial),
central finite differences, and least-squares regression on a Gaussian
sample.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    NonFiniteEvaluation,
    RankDeficient,
    TooFewSamples,
    ValidationError,
    ZeroGradient,
)
from .exact import LinearModel
from .gaussian import CovMatrix, GaussianSpec, SampleBatch, sample_marginal

_EPS = np.finfo(float).eps
ZERO_GRADIENT_RTOL = 1e-14
STEP_FLOOR = 1e-8


class BlackBoxModel:
    """Deterministic scalar model of ``arity`` inputs with an evaluation counter.

    ``fn`` maps an ``(N, p)`` array to ``N`` outputs.  Calling the model with a
    single ``p``-vector returns a float; with an ``(..., p)`` array it returns
    an array of shape ``(...)``.  ``eval_count`` grows by the number of points
    evaluated.
    """

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        arity: int,
        name: str = "model",
        gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        thread_safe: bool = True,
    ):
        self.fn = fn
        self.arity = int(arity)
        self.name = name
        self.gradient = gradient
        self.thread_safe = thread_safe
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_count(self) -> int:
        return self._count

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.arity:
            raise ValidationError(f"{self.name} expects {self.arity} inputs, got shape {x.shape}")
        flat = x.reshape(-1, self.arity)
        y = np.asarray(self.fn(flat), dtype=float).reshape(flat.shape[0])
        with self._lock:
            self._count += flat.shape[0]
        if x.ndim == 1:
            return float(y[0])
        return y.reshape(x.shape[:-1])

    def fresh(self) -> "BlackBoxModel":
        """Same model with its own zeroed counter."""
        return BlackBoxModel(self.fn, self.arity, self.name, self.gradient, self.thread_safe)

    def __repr__(self):
        return f"BlackBoxModel({self.name!r}, arity={self.arity}, evals={self._count})"


@dataclass(frozen=True, eq=False)
class StepVector:
    steps: np.ndarray

    def __post_init__(self):
        steps = np.array(np.ravel(self.steps), dtype=float)
        if not np.all(np.isfinite(steps)) or np.any(steps <= 0):
            raise ValidationError("finite-difference steps must be finite and > 0")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)


@dataclass(frozen=True, eq=False)
class RegressionFit:
    model: LinearModel
    residual_norm: float
    condition_estimate: float
    n_samples: int


def taylor_linear(gradient, center, f_center: float) -> LinearModel:
    """First-order Taylor polynomial ``f(c) + g @ (x - c)``."""
    g = np.asarray(gradient, dtype=float).ravel()
    c = np.asarray(center, dtype=float).ravel()
    if g.shape != c.shape:
        raise ValidationError("gradient and center must have the same length")
    if not np.all(np.isfinite(g)):
        raise NonFiniteEvaluation("gradient has non-finite entries")
    if np.linalg.norm(g) <= ZERO_GRADIENT_RTOL * (1.0 + abs(f_center)):
        raise ZeroGradient("gradient vanishes at the linearization point")
    return LinearModel(f_center - g @ c, g)


def default_steps(cov: CovMatrix) -> StepVector:
    """One standard deviation per coordinate."""
    return StepVector(np.sqrt(np.diag(cov.entries)))


def _central_differences(model: BlackBoxModel, center, h) -> tuple[np.ndarray, float]:
    """Gradient estimate and the symmetric-average estimate of ``f(center)``."""
    center = np.asarray(center, dtype=float).ravel()
    steps = h.steps if isinstance(h, StepVector) else StepVector(np.broadcast_to(h, center.shape)).steps
    if steps.shape != center.shape:
        raise ValidationError("step vector and center must have the same length")
    steps = np.maximum(steps, STEP_FLOOR * (1.0 + np.abs(center)))
    shifts = np.diag(steps)
    y = model(np.concatenate([center + shifts, center - shifts]))
    if not np.all(np.isfinite(y)):
        raise NonFiniteEvaluation(f"{model.name} returned a non-finite value near {center}")
    plus, minus = y.reshape(2, center.shape[0])
    return (plus - minus) / (2.0 * steps), float(np.mean(plus + minus) / 2.0)


def finite_diff_gradient(model: BlackBoxModel, center, h) -> np.ndarray:
    """Central-difference gradient; exactly ``2p`` model evaluations.

    Steps smaller than ``1e-8 * (1 + |center_i|)`` are raised to that floor.
    """
    return _central_differences(model, center, h)[0]


def fit_linear_regression(batch: SampleBatch) -> RegressionFit:
    """Ordinary least squares of ``outputs`` on ``[1, inputs]`` via Householder QR.

    Inputs are centered on their sample mean before factoring; the intercept
    is restored afterwards.
    """
    if batch.outputs is None:
        raise ValidationError("regression needs a batch with outputs")
    x = batch.inputs
    y = batch.outputs
    n, p = x.shape
    if n < p + 1:
        raise TooFewSamples(f"need at least {p + 1} samples for {p} inputs, got {n}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteEvaluation("regression outputs contain non-finite values")
    x_bar = x.mean(axis=0)
    design = np.column_stack([np.ones(n), x - x_bar])
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() < n * _EPS * diag.max():
        raise RankDeficient("regression design matrix is rank deficient")
    coef = np.linalg.solve(r, q.T @ y)
    residual = y - design @ coef
    intercept = coef[0] - coef[1:] @ x_bar
    model = LinearModel(intercept, coef[1:], info={"method": "regression", "eval_count": n})
    return RegressionFit(
        model=model,
        residual_norm=float(np.linalg.norm(residual)),
        condition_estimate=float(np.linalg.cond(r)),
        n_samples=n,
    )


METHODS = ("exact-gradient", "finite-diff", "regression")


def linearize_pipeline(
    model: BlackBoxModel,
    spec: GaussianSpec,
    method: str,
    *,
    gradient: Optional[Callable] = None,
    steps=None,
    n_samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> LinearModel:
    """Linearize ``model`` around ``spec.mean`` with the chosen method.

    ``info["eval_count"]`` holds the number of model evaluations spent:
    1 for ``exact-gradient`` (the value at the center), ``2p`` for
    ``finite-diff`` and ``n_samples`` for ``regression``.
    """
    if model.arity != spec.dim:
        raise ValidationError(f"model arity {model.arity} differs from input dimension {spec.dim}")
    center = spec.mean
    before = model.eval_count
    if method == "exact-gradient":
        gradient = gradient or model.gradient
        if gradient is None:
            raise ValidationError("exact-gradient linearization needs a gradient callback")
        lin = taylor_linear(gradient(center), center, model(center))
    elif method == "finite-diff":
        h = default_steps(spec.cov) if steps is None else steps
        g, f_center = _central_differences(model, center, h)
        lin = taylor_linear(g, center, f_center)
    elif method == "regression":
        if n_samples is None or rng is None:
            raise ValidationError("regression linearization needs n_samples and rng")
        batch = sample_marginal(spec, n_samples, rng)
        batch = batch.with_outputs(model(batch.inputs))
        fit = fit_linear_regression(batch)
        if not np.any(fit.model.coeffs):
            raise ZeroGradient("regression produced a zero coefficient vector")
        lin = fit.model
    else:
        raise ValidationError(f"unknown linearization method {method!r}; choose from {METHODS}")
    info = {"method": method, "eval_count": model.eval_count - before}
    return LinearModel(lin.intercept, lin.coeffs, info)
