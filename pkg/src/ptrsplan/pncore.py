"""Phase-noise synthesis and empirical autocorrelation.

Two generators live here.  :func:`synthesize` shapes complex white Gaussian
noise in the frequency domain by a pole/zero PSD and returns the phase
sequence phi_n.  :func:`synthesize_from_autocorr` draws a complex Gaussian
surrogate whose autocorrelation is exactly the exponential model, by
circulant embedding; it is the tight validation source for the link
simulation.

PSD convention: ``psd_at`` returns the two-sided phase PSD S_phi(f) in
dB rad^2/Hz, so the phase variance is the integral of S_phi over
[-fs/2, fs/2].  Each pole (zero) of order k contributes
-(+)10*k*log10(1 + (f/f_corner)^2), i.e. 20*k dB per decade above its corner.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_FS_HZ = 983.04e6
DEFAULT_N = 4096
TRACE_MAGIC = b"PNTR"
TRACE_VERSION = 1


@dataclass(frozen=True)
class Corner:
    corner_hz: float
    order: float

    def __post_init__(self):
        if not (math.isfinite(self.corner_hz) and self.corner_hz > 0):
            raise DomainError(f"corner frequency must be positive and finite, got {self.corner_hz}")
        if not (math.isfinite(self.order) and self.order > 0):
            raise DomainError(f"corner order must be positive, got {self.order}")


@dataclass(frozen=True)
class PsdSpec:
    """Pole/zero description of an oscillator's phase-noise PSD.

    ``psd0_db`` is the low-offset plateau level at ``ref_carrier_hz``.
    ``-inf`` is accepted and means a noiseless oscillator.
    """

    ref_carrier_hz: float
    psd0_db: float
    poles: tuple[Corner, ...] = ()
    zeros: tuple[Corner, ...] = ()
    note: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.ref_carrier_hz) and self.ref_carrier_hz > 0):
            raise DomainError("ref_carrier_hz must be positive and finite")
        if math.isnan(self.psd0_db) or self.psd0_db == math.inf:
            raise DomainError("psd0_db must be finite or -inf")
        object.__setattr__(self, "poles", tuple(_corner(p) for p in self.poles))
        object.__setattr__(self, "zeros", tuple(_corner(z) for z in self.zeros))

    @property
    def silent(self) -> bool:
        return self.psd0_db == -math.inf

    def to_dict(self) -> dict:
        d = {
            "ref_carrier_hz": self.ref_carrier_hz,
            "psd0_db": None if self.silent else self.psd0_db,
            "poles": [{"corner_hz": p.corner_hz, "order": p.order} for p in self.poles],
            "zeros": [{"corner_hz": z.corner_hz, "order": z.order} for z in self.zeros],
        }
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PsdSpec":
        psd0 = d["psd0_db"]
        return cls(
            ref_carrier_hz=float(d["ref_carrier_hz"]),
            psd0_db=-math.inf if psd0 is None else float(psd0),
            poles=tuple(_corner(p) for p in d.get("poles", [])),
            zeros=tuple(_corner(z) for z in d.get("zeros", [])),
            note=d.get("note", ""),
        )


def _corner(c) -> Corner:
    if isinstance(c, Corner):
        return c
    if isinstance(c, dict):
        return Corner(float(c["corner_hz"]), float(c["order"]))
    corner_hz, order = c
    return Corner(float(corner_hz), float(order))


@dataclass(frozen=True)
class PhaseNoiseTrace:
    fs_hz: float
    phases: np.ndarray

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float)
        if phases.ndim != 1 or phases.size < 1:
            raise DomainError("a trace needs at least one sample")
        if not np.all(np.isfinite(phases)):
            raise DomainError("trace contains non-finite phases")
        object.__setattr__(self, "phases", phases)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    def __len__(self):
        return self.phases.size


@dataclass(frozen=True)
class AutocorrEstimate:
    """Empirical gamma(0..max_lag), normalized so gamma(0) == 1.

    ``max_imag`` is the largest discarded imaginary part, kept as a diagnostic.
    """

    max_lag: int
    values: np.ndarray
    n_realizations: int
    max_imag: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.max_lag + 1,):
            raise DomainError("values must hold gamma(0..max_lag)")
        object.__setattr__(self, "values", values)

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.max_lag + 1)


def stream_rng(master_seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for trace ``index`` of a run seeded by ``master_seed``.

    Streams depend only on the pair, so batches can be produced in any order.
    """
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return np.random.Generator(np.random.Philox(ss))


def psd_at(spec: PsdSpec, offset_hz, carrier_hz: float):
    """PSD level in dB rad^2/Hz at ``offset_hz`` (scalar or array) for ``carrier_hz``."""
    f = np.asarray(offset_hz, dtype=float)
    if np.any(~(f > 0)):
        raise DomainError("PSD offsets must be strictly positive")
    if not carrier_hz > 0:
        raise DomainError("carrier frequency must be positive")
    level = np.full_like(f, spec.psd0_db) + 20.0 * math.log10(carrier_hz / spec.ref_carrier_hz)
    for z in spec.zeros:
        level = level + 10.0 * z.order * np.log10(1.0 + (f / z.corner_hz) ** 2)
    for p in spec.poles:
        level = level - 10.0 * p.order * np.log10(1.0 + (f / p.corner_hz) ** 2)
    return float(level) if level.ndim == 0 else level


def phase_variance(spec: PsdSpec, carrier_hz: float, fs_hz: float, n_fft: int = 1 << 16) -> float:
    """Phase variance in rad^2 implied by the PSD on the sampling grid."""
    if spec.silent:
        return 0.0
    k = np.fft.fftfreq(n_fft, d=1.0 / fs_hz)[1:]
    return float(np.sum(10.0 ** (psd_at(spec, np.abs(k), carrier_hz) / 10.0)) * fs_hz / n_fft)


def _bin_gains(spec: PsdSpec, carrier_hz: float, fs_hz: float, n_fft: int) -> np.ndarray:
    gains = np.zeros(n_fft)
    if spec.silent:
        return gains
    f = np.abs(np.fft.fftfreq(n_fft, d=1.0 / fs_hz))
    s = 10.0 ** (psd_at(spec, f[1:], carrier_hz) / 10.0)
    # DC carries no phase information and is left empty
    gains[1:] = n_fft * np.sqrt(2.0 * s * fs_hz / n_fft)
    return gains


def synthesize(spec: PsdSpec, carrier_hz: float, fs_hz: float, n: int, seed: int,
               index: int = 0, oversample: int = 2) -> PhaseNoiseTrace:
    """Draw one stationary phase-noise trace of ``n`` samples.

    The spectrum is shaped on a grid ``oversample`` times longer than the
    trace and truncated, which keeps circular wrap-around out of the lags
    of interest.
    """
    if n < 2:
        raise DomainError("need n >= 2 samples")
    if not fs_hz > 0:
        raise DomainError("fs_hz must be positive")
    n_fft = int(n) * max(1, int(oversample))
    gains = _bin_gains(spec, carrier_hz, fs_hz, n_fft)
    rng = stream_rng(seed, index)
    z = (rng.standard_normal(n_fft) + 1j * rng.standard_normal(n_fft)) / math.sqrt(2.0)
    phases = np.fft.ifft(gains * z).real[:n]
    return PhaseNoiseTrace(fs_hz, phases)


def synthesize_batch(spec: PsdSpec, carrier_hz: float, fs_hz: float, n: int, count: int,
                     seed: int, oversample: int = 2) -> list[PhaseNoiseTrace]:
    return [synthesize(spec, carrier_hz, fs_hz, n, seed, index=i, oversample=oversample)
            for i in range(count)]


def circulant_eigenvalues(model, n: int) -> tuple[np.ndarray, float]:
    """Eigenvalues of the minimal circulant embedding of gamma_E(0..n-1).

    Returns the clipped (non-negative) eigenvalues and the largest magnitude
    that had to be clipped away.
    """
    from .expmodel import gamma_e

    m = 2 * (n - 1)
    k = np.arange(m)
    row = gamma_e(model, np.minimum(k, m - k))
    eig = np.fft.fft(row).real
    clipped = float(max(0.0, -eig.min()))
    return np.clip(eig, 0.0, None), clipped


def _surrogate_from_rngs(eig: np.ndarray, n: int, rngs: Iterable[np.random.Generator]) -> np.ndarray:
    m = eig.size
    scale = np.sqrt(eig / m)
    rows = []
    for rng in rngs:
        rows.append((rng.standard_normal(m) + 1j * rng.standard_normal(m)) / math.sqrt(2.0))
    z = np.asarray(rows)
    return np.fft.fft(scale * z, axis=-1)[..., :n]


def synthesize_from_autocorr(model, n: int, seed: int, index: int = 0) -> np.ndarray:
    """Complex Gaussian surrogate alpha with E[alpha_n conj(alpha_{n-j})] = gamma_E(j).

    Built by circulant embedding of the model autocorrelation; negative
    spectral mass (none is expected for this kernel) is clipped and reported
    through a warning.
    """
    return surrogate_batch(model, n, seed, [index])[0]


def surrogate_batch(model, n: int, seed: int, indices: Sequence[int]) -> np.ndarray:
    """Rows of :func:`synthesize_from_autocorr` for each stream index, shape (len(indices), n)."""
    if n < 2:
        raise DomainError("need n >= 2 samples")
    eig, clipped = circulant_eigenvalues(model, n)
    if clipped > 1e-9 * eig.max():
        warnings.warn(f"circulant embedding clipped negative eigenvalues up to {clipped:.3g}")
    return _surrogate_from_rngs(eig, n, (stream_rng(seed, i) for i in indices))


def empirical_autocorr(traces, max_lag: int) -> AutocorrEstimate:
    """Ensemble-and-time average of alpha_n conj(alpha_{n-j}) for j = 0..max_lag.

    ``traces`` may hold :class:`PhaseNoiseTrace` objects (alpha = exp(i phi))
    or complex sample arrays used as alpha directly.
    """
    traces = list(traces)
    if not traces:
        raise DomainError("need at least one trace")
    acc = np.zeros(max_lag + 1, dtype=complex)
    for tr in traces:
        alpha = tr.alpha if isinstance(tr, PhaseNoiseTrace) else np.asarray(tr, dtype=complex)
        n = alpha.size
        if max_lag >= n:
            raise DomainError(f"max_lag {max_lag} must be below the trace length {n}")
        spec = np.fft.fft(alpha, 2 * n)
        r = np.fft.ifft(spec * spec.conj())[: max_lag + 1]
        acc += r / (n - np.arange(max_lag + 1))
    acc /= len(traces)
    gamma = acc / acc[0].real
    return AutocorrEstimate(
        max_lag=max_lag,
        values=gamma.real.copy(),
        n_realizations=len(traces),
        max_imag=float(np.max(np.abs(gamma.imag))),
    )


# -- file formats ---------------------------------------------------------

def load_psd(path) -> PsdSpec:
    with open(path) as fh:
        return PsdSpec.from_dict(json.load(fh))


def save_psd(spec: PsdSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def default_psd() -> PsdSpec:
    """The shipped PSD configuration (see the ``note`` field for provenance)."""
    text = resources.files("ptrsplan.data").joinpath("default_psd.json").read_text()
    return PsdSpec.from_dict(json.loads(text))


def write_trace(trace: PhaseNoiseTrace, path) -> None:
    """Little-endian: magic, u32 version, f64 fs_hz, u64 n, then n f64 phases."""
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<IdQ", TRACE_VERSION, trace.fs_hz, len(trace)))
        fh.write(trace.phases.astype("<f8").tobytes())


def read_trace(path) -> PhaseNoiseTrace:
    data = Path(path).read_bytes()
    if data[:4] != TRACE_MAGIC:
        raise DomainError(f"{path}: not a phase-noise trace file")
    version, fs_hz, n = struct.unpack_from("<IdQ", data, 4)
    if version != TRACE_VERSION:
        raise DomainError(f"{path}: unsupported trace version {version}")
    offset = 4 + struct.calcsize("<IdQ")
    phases = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
    return PhaseNoiseTrace(fs_hz, phases.astype(float))


def write_trace_csv(trace: PhaseNoiseTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs_hz={float(trace.fs_hz):.17g}\n")
        fh.write("index,phase\n")
        for i, ph in enumerate(trace.phases):
            fh.write(f"{i},{ph:.17g}\n")


def read_trace_csv(path, fs_hz: float | None = None) -> PhaseNoiseTrace:
    phases = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# fs_hz="):
                fs_hz = float(line.split("=", 1)[1]) if fs_hz is None else fs_hz
            elif line and not line.startswith(("#", "index")):
                phases.append(float(line.split(",")[1]))
    return PhaseNoiseTrace(DEFAULT_FS_HZ if fs_hz is None else fs_hz, np.array(phases))


def load_trace(path) -> PhaseNoiseTrace:
    return read_trace_csv(path) if str(path).endswith(".csv") else read_trace(path)


def write_autocorr_csv(est: AutocorrEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("lag,gamma\n")
        for j, g in enumerate(est.values):
            fh.write(f"{j},{g:.17g}\n")


def read_autocorr_csv(path) -> AutocorrEstimate:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    lags = raw[:, 0].astype(int)
    if not np.array_equal(lags, np.arange(lags.size)):
        raise DomainError(f"{path}: lags must run 0..max_lag")
    return AutocorrEstimate(max_lag=int(lags[-1]), values=raw[:, 1], n_realizations=0)
