"""Built-in black-box models selectable by name from an experiment config."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .linearize import BlackBoxModel


def _fig1(x):
    x1, x2, x3, x4 = x.T
    return np.cos(x1) * x2 + np.sin(x2) + 2.0 * np.cos(x3) * x1 - np.sin(x4)


def _fig1_grad(x):
    x1, x2, x3, x4 = np.asarray(x, dtype=float)
    return np.array([
        -np.sin(x1) * x2 + 2.0 * np.cos(x3),
        np.cos(x1) + np.cos(x2),
        -2.0 * np.sin(x3) * x1,
        -np.cos(x4),
    ])


def _remark1(x):
    return x[:, 0] + x[:, 1] ** 2


def _remark1_grad(x):
    return np.array([1.0, 2.0 * float(x[1])])


def fig1_model() -> BlackBoxModel:
    """``cos(x1) x2 + sin(x2) + 2 cos(x3) x1 - sin(x4)`` with its analytic gradient."""
    return BlackBoxModel(_fig1, 4, "fig1", gradient=_fig1_grad)


def remark1_model() -> BlackBoxModel:
    """``x1 + x2^2``."""
    return BlackBoxModel(_remark1, 2, "remark1", gradient=_remark1_grad)


def sqnorm_model(p: int) -> BlackBoxModel:
    """Squared Euclidean norm on ``R^p``."""
    return BlackBoxModel(
        lambda x: np.einsum("ij,ij->i", x, x),
        p,
        "sqnorm",
        gradient=lambda x: 2.0 * np.asarray(x, dtype=float),
    )


def linear_model(coeffs, intercept: float = 0.0) -> BlackBoxModel:
    beta = np.asarray(coeffs, dtype=float).ravel()
    return BlackBoxModel(
        lambda x: intercept + x @ beta,
        beta.size,
        "linear",
        gradient=lambda x: beta.copy(),
    )


def get_model(name: str, *, p: int | None = None, coeffs=None, intercept: float = 0.0) -> BlackBoxModel:
    if name == "fig1":
        return fig1_model()
    if name == "remark1":
        return remark1_model()
    if name == "sqnorm":
        if p is None:
            raise ConfigError("model 'sqnorm' needs the input dimension")
        return sqnorm_model(p)
    if name == "linear":
        if coeffs is None:
            raise ConfigError("model 'linear' needs inline 'coeffs'")
        return linear_model(coeffs, intercept)
    raise ConfigError(f"unknown model {name!r}; built-ins are fig1, remark1, sqnorm, linear")


MODEL_NAMES = ("fig1", "remark1", "sqnorm", "linear")
