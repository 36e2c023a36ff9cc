"""Monte-Carlo check of the Wiener cost on a single DFT-s-OFDM symbol.

With no additive noise and a distortion-free channel the DFT precoding,
IFFT and cyclic prefix cancel out, so each trial works directly on the
time-domain samples: y_n = alpha_n x_n.  Pilots are known unit-modulus
symbols, the per-pilot least-squares estimate is y_p conj(x_p), and the
Wiener weights interpolate it to every position.

Two sources of alpha are supported.  ``surrogate`` draws a complex Gaussian
process whose autocorrelation is exactly the exponential model, so the
empirical cost must match the analytic one up to Monte-Carlo error.
``physical`` uses alpha = exp(i phi) with phi synthesized from a PSD; the
exponential model is then only an approximation and the comparison is loose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import pncore
from .cost import cost_numeric
from .errors import DomainError
from .expmodel import ExpModel, fit
from .wiener import PilotPattern, coefficients

MODES = ("surrogate", "physical")
QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2.0)
# pilots sit on the axes so that conj(x) x is exactly one in floating point
PILOTS = np.array([1, 1j, -1, -1j])


@dataclass(frozen=True)
class SimScenario:
    pattern: PilotPattern
    trials: int = 1000
    seed: int = 0
    mode: str = "surrogate"
    model: ExpModel | None = None
    psd: pncore.PsdSpec | None = None
    carrier_hz: float = 100e9
    fs_hz: float = pncore.DEFAULT_FS_HZ
    snr_db: float | None = None
    chunk: int = 1000

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.trials < 1:
            raise DomainError("trials must be at least 1")
        if self.mode == "surrogate" and self.model is None:
            raise DomainError("surrogate mode needs an exponential model")
        if self.mode == "physical" and self.psd is None:
            raise DomainError("physical mode needs a PSD")

    @property
    def n_total(self) -> int:
        return self.pattern.n_total


@dataclass(frozen=True)
class SimResult:
    empirical_j_pct: float
    stderr_pct: float
    analytic_j_pct: float
    z_score: float
    mode: str
    trials: int
    seed: int
    model: ExpModel
    evm_pct: float

    def to_dict(self) -> dict:
        return {
            "empirical_j_pct": self.empirical_j_pct,
            "stderr_pct": self.stderr_pct,
            "analytic_j_pct": self.analytic_j_pct,
            "z_score": self.z_score,
            "mode": self.mode,
            "trials": self.trials,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "evm_pct": self.evm_pct,
        }


def _symbol_rng(seed: int, trial: int) -> np.random.Generator:
    # a three-word key keeps these streams apart from the phase-noise streams
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial), 1])
    return np.random.Generator(np.random.Philox(ss))


def _alpha_chunk(sc: SimScenario, model: ExpModel, trials: range) -> np.ndarray:
    n = sc.n_total
    if sc.mode == "surrogate":
        return pncore.surrogate_batch(model, n, sc.seed, trials)
    return np.stack([pncore.synthesize(sc.psd, sc.carrier_hz, sc.fs_hz, n, sc.seed, index=t).alpha
                     for t in trials])


def _symbols(sc: SimScenario, trials: range):
    """Transmit symbols and data-only noise for each trial."""
    n = sc.n_total
    pilot_idx = sc.pattern.positions - 1
    x = np.empty((len(trials), n), dtype=complex)
    noise = np.zeros_like(x)
    for row, t in enumerate(trials):
        rng = _symbol_rng(sc.seed, t)
        x[row] = QPSK[rng.integers(0, 4, n)]
        x[row, pilot_idx] = PILOTS[rng.integers(0, 4, pilot_idx.size)]
        if sc.snr_db is not None:
            sigma = 10.0 ** (-sc.snr_db / 20.0)
            noise[row] = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    noise[:, pilot_idx] = 0.0
    return x, noise


def _fit_physical(sc: SimScenario) -> ExpModel:
    count = min(sc.trials, 200)
    traces = pncore.synthesize_batch(sc.psd, sc.carrier_hz, sc.fs_hz, sc.n_total, count, sc.seed)
    est = pncore.empirical_autocorr(traces, sc.n_total - 1)
    return fit(est, fc_hz=sc.carrier_hz)


def run(sc: SimScenario) -> SimResult:
    """Mean tracking error over the trials, compared with the analytic cost."""
    model = sc.model if sc.model is not None else _fit_physical(sc)
    pattern = sc.pattern
    w = coefficients(model, pattern)
    pilot_idx = pattern.positions - 1
    data_mask = np.ones(sc.n_total, dtype=bool)
    data_mask[pilot_idx] = False

    per_trial = np.empty(sc.trials)
    evm_num = np.empty(sc.trials)
    for lo in range(0, sc.trials, sc.chunk):
        trials = range(lo, min(lo + sc.chunk, sc.trials))
        alpha = _alpha_chunk(sc, model, trials)
        x, noise = _symbols(sc, trials)
        y = alpha * x + noise
        est = y[:, pilot_idx] * x[:, pilot_idx].conj()
        alpha_hat = est @ w.weights.T
        per_trial[lo:lo + len(trials)] = np.sum(np.abs(alpha - alpha_hat) ** 2, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_hat = y[:, data_mask] / alpha_hat[:, data_mask]
        err = np.abs(x_hat - x[:, data_mask]) ** 2
        evm_num[lo:lo + len(trials)] = np.mean(np.where(np.isfinite(err), err, 0.0), axis=1) \
            if data_mask.any() else 0.0

    scale = 100.0 / sc.n_total
    mean = float(np.mean(per_trial))
    std = float(np.std(per_trial, ddof=1)) if sc.trials > 1 else 0.0
    stderr = std / math.sqrt(sc.trials)
    analytic = cost_numeric(model, pattern).j_pct
    emp_pct, se_pct = mean * scale, stderr * scale
    if abs(emp_pct - analytic) <= 1e-9:
        # both vanish (all-pilot patterns); the ratio would only measure rounding
        z = 0.0
    else:
        z = (emp_pct - analytic) / se_pct if se_pct > 0 else math.inf
    evm = 100.0 * math.sqrt(float(np.mean(evm_num)))
    return SimResult(emp_pct, se_pct, analytic, z, sc.mode, sc.trials, sc.seed, model, evm)
