"""Pilot spacing planning from the affine cost model J(delta) ~ omega*delta + eta.

All costs, slopes and intercepts are in percent of N.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .cost import cost_vs_spacing, evaluate
from .errors import AffineFitRejected, DomainError, InfeasibleSpacing
from .expmodel import ExpModel
from .wiener import PilotPattern

log = logging.getLogger(__name__)

# omega(fc) ~ OMEGA_COEF fc^2 and eta(fc) ~ ETA_COEF fc^2, fc in Hz
OMEGA_COEF = 5.03e-25
ETA_COEF = 2.17e-25
FC_RANGE_HZ = (100e9, 300e9)
MIN_R2 = 0.99
# absorbs rounding in (max_cost - eta) / omega when the ratio is an integer
FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class LinearCostFit:
    omega: float
    eta: float
    r2: float
    delta_range: tuple[int, int]

    def predict(self, delta):
        return self.omega * np.asarray(delta, dtype=float) + self.eta


@dataclass(frozen=True)
class FcCoefficients:
    omega_coef: float = OMEGA_COEF
    eta_coef: float = ETA_COEF

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FcCoefficients":
        d = json.loads(Path(path).read_text())
        return cls(float(d["omega_coef"]), float(d["eta_coef"]))


@dataclass(frozen=True)
class PlanResult:
    fc_hz: float
    n_total: int
    max_cost_pct: float
    delta0: int
    omega: float
    eta: float
    j_at_delta0_pct: float
    delta_pf: int
    n_pilots: int | None
    overhead_pct: float | None
    overhead_at_delta0_pct: float
    feasible: bool
    method: str
    explanation: str = ""
    j_at_delta_pf_exact_pct: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit_affine(deltas, j_pct, min_r2: float = MIN_R2) -> LinearCostFit:
    """Least-squares line through (delta, J) points."""
    x = np.asarray(deltas, dtype=float)
    y = np.asarray(j_pct, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("deltas and costs must be matching 1-D sequences")
    if np.unique(x).size < 2:
        raise DomainError("an affine fit needs at least two distinct spacings")
    if x.size < 3:
        raise DomainError("an affine fit needs at least three points")
    if np.ptp(y) == 0.0:
        raise AffineFitRejected("cost is constant over the spacings; slope is zero and r2 is undefined")
    res = stats.linregress(x, y)
    r2 = float(res.rvalue ** 2)
    if r2 < min_r2:
        raise AffineFitRejected(f"affine fit rejected: r2 = {r2:.4f} < {min_r2}")
    return LinearCostFit(float(res.slope), float(res.intercept), r2, (int(x.min()), int(x.max())))


def omega_eta_of_fc(fc_hz: float, coefs: FcCoefficients | None = None) -> tuple[float, float]:
    """Quadratic-through-origin model of slope and intercept against carrier."""
    coefs = coefs or FcCoefficients()
    if not FC_RANGE_HZ[0] <= fc_hz <= FC_RANGE_HZ[1]:
        log.warning("carrier %.4g Hz lies outside the modelled %g-%g GHz range",
                    fc_hz, FC_RANGE_HZ[0] / 1e9, FC_RANGE_HZ[1] / 1e9)
    f2 = float(fc_hz) ** 2
    return coefs.omega_coef * f2, coefs.eta_coef * f2


def fit_fc_quadratic(fc_hz, omegas, etas) -> FcCoefficients:
    """Least-squares k in y = k fc^2 for slope and intercept separately."""
    f2 = np.asarray(fc_hz, dtype=float) ** 2
    den = float(np.dot(f2, f2))
    if den == 0.0:
        raise DomainError("need at least one nonzero carrier frequency")
    return FcCoefficients(float(np.dot(f2, omegas) / den), float(np.dot(f2, etas) / den))


def max_spacing(max_cost_pct: float, omega: float, eta: float) -> int:
    """Largest integer delta with omega*delta + eta <= max_cost_pct."""
    if not omega > 0:
        raise DomainError(f"slope omega must be positive, got {omega}")
    d = math.floor((max_cost_pct - eta) / omega + FLOOR_EPS)
    if d < 1:
        raise InfeasibleSpacing(
            f"cost ceiling {max_cost_pct}% leaves no positive spacing (intercept {eta:.4g}%, slope {omega:.4g}%)")
    return d


def _read_fc_table():
    text = resources.files("ptrsplan.data").joinpath("fc_params.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    return (np.array([float(r["fc_hz"]) for r in rows]),
            np.array([float(r["a"]) for r in rows]),
            np.array([float(r["b"]) for r in rows]))


def model_for_fc(fc_hz: float) -> ExpModel:
    """Exponential model at a carrier, interpolated from the shipped 100-309 GHz fit table."""
    f, a, b = _read_fc_table()
    if not f[0] <= fc_hz <= f[-1]:
        raise DomainError(f"carrier {fc_hz:.4g} Hz outside the tabulated {f[0]:.4g}-{f[-1]:.4g} Hz")
    return ExpModel(float(np.interp(fc_hz, f, a)), float(np.interp(fc_hz, f, b)), fc_hz=float(fc_hz))


def affine_for_fc(fc_hz: float, n_total: int, deltas, p1: int = 1, method: str = "boxed") -> LinearCostFit:
    """Affine fit of the exact cost curve at one carrier."""
    rows = cost_vs_spacing(model_for_fc(fc_hz), n_total, p1, deltas, method)
    bad = [r for r in rows if r.error]
    if bad:
        raise DomainError(f"cost failed at delta={bad[0].delta}: {bad[0].error}")
    return fit_affine([r.delta for r in rows], [r.j_pct for r in rows])


def plan(fc_hz: float, n_total: int, max_cost_pct: float, delta0: int,
         omega: float | None = None, eta: float | None = None,
         coefs: FcCoefficients | None = None, exact_refine: bool = False,
         model: ExpModel | None = None, p1: int = 1) -> PlanResult:
    """Largest spacing meeting the cost ceiling without going below ``delta0``.

    ``exact_refine`` checks the affine answer against the closed-form cost of
    the carrier's exponential model and steps the spacing down until it holds.
    """
    if int(delta0) != delta0 or delta0 < 1:
        raise DomainError(f"minimum spacing delta0 must be a positive integer, got {delta0}")
    if n_total < 1:
        raise DomainError("n_total must be positive")
    if omega is None or eta is None:
        w, e = omega_eta_of_fc(fc_hz, coefs)
        omega = w if omega is None else omega
        eta = e if eta is None else eta
    j0 = omega * delta0 + eta
    base = dict(fc_hz=float(fc_hz), n_total=int(n_total), max_cost_pct=float(max_cost_pct),
                delta0=int(delta0), omega=float(omega), eta=float(eta), j_at_delta0_pct=float(j0),
                overhead_at_delta0_pct=100.0 / delta0)
    method = "affine+exact" if exact_refine else "affine"

    try:
        d_max = max_spacing(max_cost_pct, omega, eta)
    except InfeasibleSpacing as exc:
        return PlanResult(**base, delta_pf=0, n_pilots=None, overhead_pct=None, feasible=False,
                          method=method, explanation=str(exc))
    if j0 > max_cost_pct:
        return PlanResult(**base, delta_pf=d_max, n_pilots=-(-n_total // d_max),
                          overhead_pct=100.0 / d_max, feasible=False, method=method,
                          explanation=(f"J(delta0={delta0}) = {j0:.4f}% exceeds {max_cost_pct}%; "
                                       f"the ceiling needs spacing <= {d_max}, below the minimum spacing"))
    d_pf = max(int(delta0), d_max)
    exact = None
    explanation = ""
    if exact_refine:
        model = model or model_for_fc(fc_hz)
        while True:
            exact = _exact_j(model, n_total, d_pf, p1)
            if exact <= max_cost_pct or d_pf <= delta0:
                break
            d_pf -= 1
        if exact > max_cost_pct:
            return PlanResult(**base, delta_pf=d_pf, n_pilots=-(-n_total // d_pf),
                              overhead_pct=100.0 / d_pf, feasible=False, method=method,
                              explanation=(f"exact cost {exact:.4f}% at delta0 exceeds {max_cost_pct}%"),
                              j_at_delta_pf_exact_pct=exact)
        if d_pf < max(int(delta0), d_max):
            explanation = f"exact cost lowered the affine spacing {d_max} to {d_pf}"
    return PlanResult(**base, delta_pf=d_pf, n_pilots=-(-n_total // d_pf), overhead_pct=100.0 / d_pf,
                      feasible=True, method=method, explanation=explanation,
                      j_at_delta_pf_exact_pct=exact)


def _exact_j(model: ExpModel, n_total: int, delta: int, p1: int) -> float:
    return evaluate(model, PilotPattern.for_spacing(n_total, delta, p1), "boxed").j_pct


def save_plan(result: PlanResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")


def load_plan(path) -> PlanResult:
    return PlanResult(**json.loads(Path(path).read_text()))


__all__ = [
    "LinearCostFit", "FcCoefficients", "PlanResult", "fit_affine", "omega_eta_of_fc",
    "fit_fc_quadratic", "max_spacing", "model_for_fc", "affine_for_fc", "plan",
    "save_plan", "load_plan",
]
