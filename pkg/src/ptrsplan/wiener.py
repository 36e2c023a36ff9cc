"""Wiener interpolation of pilot phase-noise estimates.

Positions and pilot indices are 1-based throughout, so a pattern with
``p1 = 1`` puts its first pilot on the first sample of the symbol.

The pilot autocorrelation matrix of the exponential model is a scaled
Kac-Murdock-Szego matrix plus a rank-one floor term::

    R = c/(1+c) * (A_lam / c + u u^T)

A_lam has the tridiagonal inverse X_lam / (1 - lam^2), and Sherman-Morrison
folds the floor back in, so both R^-1 and every coefficient row have closed
forms.  :func:`coefficients_numeric` solves R w = gamma_n densely and is kept
as the independent reference.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, FallbackToNumeric, SingularModel
from .expmodel import ExpModel, gamma_e

COND_LIMIT = 1e12


@dataclass(frozen=True)
class PilotPattern:
    n_total: int
    p1: int
    delta: int
    n_pilots: int

    def __post_init__(self):
        for name in ("n_total", "p1", "delta", "n_pilots"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise DomainError(f"{name} must be a positive integer")
        if self.last > self.n_total:
            raise DomainError(
                f"pilot {self.n_pilots} at {self.last} falls outside a symbol of {self.n_total} samples")

    @classmethod
    def for_spacing(cls, n_total: int, delta: int, p1: int = 1, n_pilots: int | None = None) -> "PilotPattern":
        """Uniform pattern holding every pilot that fits, unless ``n_pilots`` is given.

        With p1 = 1 that is ceil(N / delta) pilots.
        """
        if n_pilots is None:
            if delta < 1:
                raise DomainError(f"pilot spacing must be >= 1, got {delta}")
            n_pilots = (n_total - p1) // delta + 1
        return cls(n_total, p1, delta, n_pilots)

    @property
    def positions(self) -> np.ndarray:
        return self.p1 + self.delta * np.arange(self.n_pilots)

    @property
    def last(self) -> int:
        return self.p1 + (self.n_pilots - 1) * self.delta

    def reflected(self) -> "PilotPattern":
        """Mirror image under n -> N + 1 - n."""
        return PilotPattern(self.n_total, self.n_total + 1 - self.last, self.delta, self.n_pilots)


@dataclass(frozen=True)
class WienerCoefficients:
    weights: np.ndarray          # (N, N_P); row n-1 holds w_n
    pattern: PilotPattern
    model: ExpModel
    method: str = "closed"

    def row(self, n: int) -> np.ndarray:
        return self.weights[n - 1]


def _check(model: ExpModel, pattern: PilotPattern) -> float:
    lam = math.exp(-model.a * pattern.delta)
    if not lam < 1.0:
        raise DomainError(f"lambda = exp(-a*delta) = {lam!r} must be below 1 (a={model.a}, delta={pattern.delta})")
    return lam


def correlation_vector(model: ExpModel, pattern: PilotPattern, n) -> np.ndarray:
    """gamma_E(n - p_j) for each pilot j; ``n`` may be an array of positions."""
    n = np.asarray(n)
    return gamma_e(model, n[..., None] - pattern.positions)


def pilot_matrix(model: ExpModel, pattern: PilotPattern) -> np.ndarray:
    p = pattern.positions
    return gamma_e(model, p[None, :] - p[:, None])


def a_lambda(lam: float, n_pilots: int) -> np.ndarray:
    k = np.arange(n_pilots)
    return lam ** np.abs(k[:, None] - k[None, :])


def x_lambda(lam: float, n_pilots: int) -> np.ndarray:
    """Tridiagonal matrix with A_lam @ X_lam == (1 - lam^2) I."""
    if n_pilots == 1:
        return np.array([[1.0 - lam * lam]])
    diag = np.full(n_pilots, 1.0 + lam * lam)
    diag[0] = diag[-1] = 1.0
    off = np.full(n_pilots - 1, -lam)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def edge_vector(lam: float, n_pilots: int) -> np.ndarray:
    """[1, 1-lam, ..., 1-lam, 1], equal to (1+lam) A_lam^-1 u."""
    t = np.full(n_pilots, 1.0 - lam)
    t[0] = t[-1] = 1.0
    return t


def y_lambda(lam: float, n_pilots: int) -> np.ndarray:
    t = edge_vector(lam, n_pilots)
    return np.outer(t, t)


def invert_pilot_matrix_closed(model: ExpModel, pattern: PilotPattern) -> np.ndarray:
    """R^-1 from the tridiagonal inverse plus a Sherman-Morrison correction."""
    if pattern.n_pilots == 1:
        return np.array([[1.0]])
    lam = _check(model, pattern)
    c, n_p = model.c, pattern.n_pilots
    denom = 1.0 + lam + 2.0 * lam * c + (1.0 - lam) * c * n_p
    return (1.0 + c) / (1.0 + lam) * (
        x_lambda(lam, n_p) / (1.0 - lam) - c * y_lambda(lam, n_p) / denom)


def rho_lambda(lam: float, c: float, n_pilots: int) -> float:
    return lam * c * (2 - n_pilots) + c * n_pilots


def kp(pattern: PilotPattern, n):
    """Number of pilots at or before position ``n``."""
    n = np.asarray(n)
    k = np.floor_divide(n - pattern.p1, pattern.delta) + 1
    return np.clip(k, 0, pattern.n_pilots)


def beta(model: ExpModel, pattern: PilotPattern, n):
    """beta_n = u-weighted pilot correlation sum, by position case.

    Exponents are summed before exponentiation so that lam^(1-K) factors never
    overflow for long symbols.
    """
    n = np.asarray(n, dtype=float)
    a, d, p1, n_p = model.a, pattern.delta, pattern.p1, pattern.n_pilots
    log_lam = -a * d
    k = kp(pattern, n)
    before = n < p1
    after = n >= pattern.last
    mid = ~(before | after)
    out = np.empty_like(n)
    out[before] = np.exp(-a * (p1 - n[before])) * (1.0 + math.exp(log_lam))
    km = k[mid]
    out[mid] = (np.exp(-a * (n[mid] - p1) + (1 - km) * log_lam)
                + np.exp(-a * (p1 - n[mid]) + km * log_lam))
    out[after] = np.exp(-a * (n[after] - p1) + (1 - n_p) * log_lam) * (1.0 + math.exp(log_lam))
    return out if out.ndim else float(out)


def v_vectors(model: ExpModel, pattern: PilotPattern, n) -> np.ndarray:
    """Rows X_lam gamma0_n, where gamma0_{n,j} = exp(-a|n - p_j|)."""
    lam = math.exp(-model.a * pattern.delta)
    g0 = np.exp(-model.a * np.abs(np.asarray(n)[..., None] - pattern.positions))
    v = np.empty_like(g0)
    v[..., 0] = g0[..., 0] - lam * g0[..., 1]
    v[..., -1] = g0[..., -1] - lam * g0[..., -2]
    v[..., 1:-1] = (1.0 + lam * lam) * g0[..., 1:-1] - lam * (g0[..., :-2] + g0[..., 2:])
    return v


def coefficients_closed(model: ExpModel, pattern: PilotPattern) -> WienerCoefficients:
    """All N coefficient rows from the closed form; needs N_P >= 3."""
    if pattern.n_pilots < 3:
        raise FallbackToNumeric(f"closed form needs N_P >= 3, got {pattern.n_pilots}")
    lam = _check(model, pattern)
    c, n_p = model.c, pattern.n_pilots
    n = np.arange(1, pattern.n_total + 1)
    rho = rho_lambda(lam, c, n_p)
    scale = c * (1.0 + lam - beta(model, pattern, n)) / ((1.0 + lam) * (1.0 + lam + rho))
    w = scale[:, None] * edge_vector(lam, n_p) + v_vectors(model, pattern, n) / (1.0 - lam * lam)
    return WienerCoefficients(w, pattern, model, "closed")


def _factor(r: np.ndarray, model: ExpModel):
    """Cholesky factor, or LU when the matrix is too ill-conditioned for it."""
    try:
        cho = linalg.cho_factor(r, lower=True, check_finite=False)
        anorm = np.abs(r).sum(axis=0).max()
        rcond, info = linalg.lapack.dpocon(cho[0], anorm, uplo="L")
        if info == 0 and rcond > 1.0 / COND_LIMIT:
            return lambda rhs: linalg.cho_solve(cho, rhs, check_finite=False)
    except linalg.LinAlgError:
        pass
    with warnings.catch_warnings():
        # an exactly singular pivot is reported below as SingularModel
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu = linalg.lu_factor(r, check_finite=False)
    if np.min(np.abs(np.diag(lu[0]))) <= np.finfo(float).eps * np.abs(r).max() * r.shape[0]:
        raise SingularModel(f"pilot autocorrelation matrix is singular for a={model.a!r}, b={model.b!r}")
    return lambda rhs: linalg.lu_solve(lu, rhs, check_finite=False)


def coefficients_numeric(model: ExpModel, pattern: PilotPattern) -> WienerCoefficients:
    """Rows solving R w_n = gamma_n by dense factorization (reference oracle)."""
    r = pilot_matrix(model, pattern)
    g = correlation_vector(model, pattern, np.arange(1, pattern.n_total + 1))
    solve = _factor(r, model)
    w = solve(g.T).T
    if not np.all(np.isfinite(w)):
        raise SingularModel(f"dense solve produced non-finite weights for a={model.a!r}, b={model.b!r}")
    return WienerCoefficients(np.ascontiguousarray(w), pattern, model, "numeric")


def coefficients(model: ExpModel, pattern: PilotPattern) -> WienerCoefficients:
    """Closed form where it exists, dense solve for N_P < 3."""
    if pattern.n_pilots < 3:
        return coefficients_numeric(model, pattern)
    return coefficients_closed(model, pattern)


def interpolate(coeffs: WienerCoefficients, pilot_estimates) -> np.ndarray:
    """alpha_hat_n = w_n^T alpha_tilde_p for every position; accepts (..., N_P) batches."""
    est = np.asarray(pilot_estimates)
    if est.shape[-1] != coeffs.pattern.n_pilots:
        raise DomainError(
            f"expected {coeffs.pattern.n_pilots} pilot estimates, got {est.shape[-1]}")
    return est @ coeffs.weights.T


def write_coefficients_csv(coeffs, path) -> None:
    """Sparse triplets ``n,j,w`` with 1-based n and j; exact zeros are skipped.

    ``coeffs`` is a WienerCoefficients or a bare (N, N_P) weight array.
    """
    w = np.asarray(getattr(coeffs, "weights", coeffs))
    rows, cols = np.nonzero(w)
    with open(path, "w", newline="") as fh:
        fh.write("n,j,w\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i + 1},{j + 1},{w[i, j]:.17g}\n")


def read_coefficients_csv(path, n_total: int | None = None, n_pilots: int | None = None) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = raw[:, 0].astype(int)
    j = raw[:, 1].astype(int)
    out = np.zeros((n_total or n.max(), n_pilots or j.max()))
    out[n - 1, j - 1] = raw[:, 2]
    return out


def write_coefficients_bin(coeffs, path) -> None:
    """Little-endian u64 N, u64 N_P, then the N x N_P float64 matrix row-major."""
    w = np.asarray(getattr(coeffs, "weights", coeffs))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *w.shape))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def read_coefficients_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        n, n_p = struct.unpack("<QQ", fh.read(16))
        return np.frombuffer(fh.read(), dtype="<f8", count=n * n_p).reshape(n, n_p).copy()
