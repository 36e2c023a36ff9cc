"""Exponential autocorrelation model and its least-squares fit.

gamma_E(j) = (exp(-a|j|) + c) / (1 + c),  c = b / (1 - b)

which is the same as (1 - b) exp(-a|j|) + b: an exponential decay at rate
``a`` per sample down to the floor ``b``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateAutocorrelation, DomainError

log = logging.getLogger(__name__)

B_MAX = 1.0 - 1e-9
LAMBDA_MAX = 1.0 - 1e-12
POOR_FIT_MSE = 1e-2


@dataclass(frozen=True)
class ExpModel:
    a: float
    b: float
    fc_hz: float | None = None
    fit_mse: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise DomainError(f"decay rate a must be positive, got {self.a}")
        if not (math.isfinite(self.b) and self.b >= 0):
            raise DomainError(f"floor b must lie in [0, 1), got {self.b}")
        if self.b > B_MAX:
            object.__setattr__(self, "b", B_MAX)

    @property
    def c(self) -> float:
        return self.b / (1.0 - self.b)

    @property
    def poor_fit(self) -> bool:
        return self.fit_mse is not None and self.fit_mse > POOR_FIT_MSE

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "fc_hz": self.fc_hz, "fit_mse": self.fit_mse}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpModel":
        return cls(a=float(d["a"]), b=float(d["b"]), fc_hz=d.get("fc_hz"), fit_mse=d.get("fit_mse"))


def save_model(model: ExpModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> ExpModel:
    return ExpModel.from_dict(json.loads(Path(path).read_text()))


def gamma_e(model: ExpModel, j):
    """Model autocorrelation at integer lag(s) ``j``."""
    c = model.c
    g = (np.exp(-model.a * np.abs(j)) + c) / (1.0 + c)
    # rounding in the c-form can land an ulp outside [b, 1]
    return np.clip(g, model.b, 1.0)


def gamma_e_floor_form(model: ExpModel, j):
    return (1.0 - model.b) * np.exp(-model.a * np.abs(j)) + model.b


def lambda_of(model, delta) -> float:
    """Per-spacing decay exp(-a * delta); accepts an ExpModel or a bare rate.

    Evaluated as exp(-a) ** delta so that lambda(d1) * lambda(d2) reproduces
    lambda(d1 + d2) to a couple of ulp.
    """
    a = model.a if isinstance(model, ExpModel) else float(model)
    return min(math.pow(math.exp(-a), delta), LAMBDA_MAX)


def _mse(a: float, b: float, lags: np.ndarray, target: np.ndarray) -> float:
    model = (1.0 - b) * np.exp(-a * lags) + b
    return float(np.mean((target - model) ** 2))


def fit(estimate, lag_range: tuple[int, int] | None = None, fc_hz: float | None = None) -> ExpModel:
    """Fit (a, b) by minimizing the mean square error over ``lag_range``.

    ``estimate`` is an AutocorrEstimate (or any array of gamma(0..)).  The
    default range is [0, len/4].  A coarse log-a by linear-b grid seeds a
    Nelder-Mead refinement in (log a, b).
    """
    values = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    if lag_range is None:
        lag_range = (0, max(8, (values.size - 1) // 4))
    lo, hi = int(lag_range[0]), int(lag_range[1])
    if lo < 0 or hi >= values.size:
        raise DomainError(f"lag range [{lo}, {hi}] outside the estimate (0..{values.size - 1})")
    if hi - lo < 8:
        raise DomainError("the fit needs a lag range spanning at least 8 lags")
    lags = np.arange(lo, hi + 1, dtype=float)
    target = values[lo:hi + 1]
    if np.all(target >= B_MAX):
        raise DegenerateAutocorrelation("autocorrelation is flat at one; the floor b is unresolvable")

    a_grid = np.logspace(-5, 0, 101)
    b_grid = np.linspace(0.0, B_MAX, 201)
    decay = np.exp(-np.outer(a_grid, lags))                      # (A, L)
    # model = b + (1-b) e  ->  resid = (target - e) - b (1 - e)
    r0 = target[None, :] - decay                                 # (A, L)
    r1 = 1.0 - decay
    mse = (np.mean(r0 ** 2, axis=1)[:, None]
           - 2.0 * b_grid[None, :] * np.mean(r0 * r1, axis=1)[:, None]
           + b_grid[None, :] ** 2 * np.mean(r1 ** 2, axis=1)[:, None])
    # row-major argmin breaks ties toward the smallest a, then the smallest b
    ia, ib = np.unravel_index(np.argmin(mse), mse.shape)

    def objective(x):
        b = min(max(x[1], 0.0), B_MAX)
        return _mse(math.exp(x[0]), b, lags, target)

    x0 = np.array([math.log(a_grid[ia]), b_grid[ib]])
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"xatol": 1e-13, "fatol": 1e-30, "maxiter": 20000, "maxfev": 40000})
    # a second start from the first optimum shakes off a collapsed simplex
    res = minimize(objective, res.x, method="Nelder-Mead",
                   options={"xatol": 1e-14, "fatol": 1e-32, "maxiter": 20000, "maxfev": 40000})
    a = math.exp(float(res.x[0]))
    b = min(max(float(res.x[1]), 0.0), B_MAX)
    if b >= B_MAX * (1 - 1e-12):
        raise DegenerateAutocorrelation("fitted floor reached its clamp; autocorrelation is flat")
    out = ExpModel(a=a, b=b, fc_hz=fc_hz, fit_mse=_mse(a, b, lags, target))
    if out.poor_fit:
        log.warning("exponential fit is poor: mse=%.3g over lags %d..%d", out.fit_mse, lo, hi)
    return out


def with_fc(model: ExpModel, fc_hz: float) -> ExpModel:
    return replace(model, fc_hz=fc_hz)
