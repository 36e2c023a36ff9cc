import math
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy import signal

from ptrsplan import pncore
from ptrsplan.errors import DomainError
from ptrsplan.expmodel import ExpModel, gamma_e

FS = pncore.DEFAULT_FS_HZ


def flat(level=-100.0):
    return pncore.PsdSpec(ref_carrier_hz=100e9, psd0_db=level)


class TestPsd:
    def test_flat_level_at_reference(self):
        assert pncore.psd_at(flat(), np.array([1e3, 1e6, 4e8]), 100e9) == pytest.approx([-100.0] * 3)

    def test_carrier_scaling(self):
        assert pncore.psd_at(flat(), 1e6, 200e9) == pytest.approx(-100 + 20 * math.log10(2))
        assert pncore.psd_at(flat(), 1e6, 200e9) == pytest.approx(-93.9794, abs=1e-4)

    def test_second_order_pole_slope(self):
        spec = pncore.PsdSpec(100e9, -80.0, poles=({"corner_hz": 1e6, "order": 2},))
        diff = pncore.psd_at(spec, 100e6, 100e9) - pncore.psd_at(spec, 10e6, 100e9)
        # frozen: 20*log10((1 + 10^2) / (1 + 100^2))
        assert diff == pytest.approx(20 * math.log10(101 / 10001), abs=1e-12)
        assert diff == pytest.approx(-40.0, abs=0.1)

    def test_zero_raises_level(self):
        spec = pncore.PsdSpec(100e9, -80.0, zeros=({"corner_hz": 1e6, "order": 1},))
        assert pncore.psd_at(spec, 1e7, 100e9) > -80.0

    @pytest.mark.parametrize("offset", [0.0, -1.0, math.nan])
    def test_non_positive_offset(self, offset):
        with pytest.raises(DomainError):
            pncore.psd_at(flat(), offset, 100e9)

    @pytest.mark.parametrize("corner", [0.0, -5.0, math.inf])
    def test_corner_validation(self, corner):
        with pytest.raises(DomainError):
            pncore.PsdSpec(100e9, -80.0, poles=({"corner_hz": corner, "order": 1},))

    def test_default_psd_finite_on_band(self):
        spec = pncore.default_psd()
        f = np.linspace(1e3, FS / 2, 1000)
        assert np.all(np.isfinite(pncore.psd_at(spec, f, 300e9)))
        assert "surrogate" in spec.note.lower()


class TestSynthesize:
    def test_silent_oscillator(self):
        tr = pncore.synthesize(flat(-math.inf), 100e9, FS, 256, seed=1)
        assert np.all(tr.phases == 0.0)
        assert np.all(tr.alpha == 1.0)

    def test_bit_identical_for_fixed_seed(self):
        spec = pncore.default_psd()
        a = pncore.synthesize(spec, 100e9, FS, 1024, seed=42, index=3)
        b = pncore.synthesize(spec, 100e9, FS, 1024, seed=42, index=3)
        assert a.phases.tobytes() == b.phases.tobytes()

    def test_streams_differ(self):
        spec = pncore.default_psd()
        a = pncore.synthesize(spec, 100e9, FS, 256, seed=42, index=0)
        b = pncore.synthesize(spec, 100e9, FS, 256, seed=42, index=1)
        assert not np.array_equal(a.phases, b.phases)

    def test_independent_of_thread_schedule(self):
        spec = pncore.default_psd()
        serial = pncore.synthesize_batch(spec, 100e9, FS, 512, 16, seed=9)
        with ThreadPoolExecutor(4) as pool:
            parallel = list(pool.map(lambda i: pncore.synthesize(spec, 100e9, FS, 512, 9, index=i),
                                     reversed(range(16))))[::-1]
        for s, p in zip(serial, parallel):
            assert s.phases.tobytes() == p.phases.tobytes()

    @pytest.mark.parametrize("n,fs", [(1, FS), (16, 0.0)])
    def test_preconditions(self, n, fs):
        with pytest.raises(DomainError):
            pncore.synthesize(flat(), 100e9, fs, n, seed=0)

    def test_welch_periodogram_tracks_psd(self):
        # two-pole spectrum so that the middle two decades carry a visible slope
        spec = pncore.PsdSpec(100e9, -70.0, poles=({"corner_hz": 2e6, "order": 1},
                                                   {"corner_hz": 60e6, "order": 1}))
        n, count, fs = 1024, 500, FS
        acc = None
        for tr in pncore.synthesize_batch(spec, 100e9, fs, n, count, seed=5):
            f, p = signal.welch(tr.phases, fs=fs, window="hann", nperseg=n,
                                return_onesided=False, scaling="density")
            acc = p if acc is None else acc + p
        acc /= count
        band = (f >= 4e6) & (f <= 400e6)
        err_db = 10 * np.log10(acc[band]) - pncore.psd_at(spec, f[band], 100e9)
        assert np.max(np.abs(err_db)) < 1.0

    def test_variance_matches_spectrum(self):
        spec = pncore.default_psd()
        n = 4096
        traces = pncore.synthesize_batch(spec, 100e9, FS, n, 300, seed=2)
        var = np.mean([np.var(t.phases) + np.mean(t.phases) ** 2 for t in traces])
        target = pncore.phase_variance(spec, 100e9, FS, n_fft=2 * n)
        assert var == pytest.approx(target, rel=0.1)


class TestSurrogate:
    def test_matches_model_autocorr(self):
        model = ExpModel(0.00736, 0.977)
        n, total = 512, 10_000
        acc = np.zeros(n)
        for lo in range(0, total, 2000):
            x = pncore.surrogate_batch(model, n, 11, range(lo, lo + 2000))
            est = pncore.empirical_autocorr(list(x), n - 1)
            acc += est.values * 2000
        acc /= total
        assert np.max(np.abs(acc - gamma_e(model, np.arange(n)))) < 0.01

    def test_unit_power(self):
        x = pncore.surrogate_batch(ExpModel(0.01, 0.9), 256, 3, range(4000))
        assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, abs=0.03)

    def test_fully_correlated_limit(self):
        x = pncore.synthesize_from_autocorr(ExpModel(0.01, 1.0), 256, seed=1)
        assert np.max(np.abs(x - x[0])) < 1e-3

    def test_white_limit(self):
        x = pncore.surrogate_batch(ExpModel(50.0, 0.0), 256, 4, range(200))
        est = pncore.empirical_autocorr(list(x), 4)
        sigma = 1.0 / math.sqrt(200 * 255)
        assert abs(est.values[1]) < 3 * sigma * math.sqrt(2)

    def test_deterministic(self):
        m = ExpModel(0.01, 0.9)
        a = pncore.synthesize_from_autocorr(m, 128, seed=7, index=2)
        b = pncore.surrogate_batch(m, 128, 7, [0, 1, 2])[2]
        assert a.tobytes() == b.tobytes()

    def test_embedding_is_nonnegative_for_model(self):
        eig, clipped = pncore.circulant_eigenvalues(ExpModel(0.00736, 0.977), 512)
        assert clipped <= 1e-9 * eig.max()


class TestEmpiricalAutocorr:
    def test_zero_phase_is_flat(self):
        tr = [pncore.PhaseNoiseTrace(FS, np.zeros(64)) for _ in range(3)]
        est = pncore.empirical_autocorr(tr, 10)
        assert np.allclose(est.values, 1.0)
        assert est.values[0] == 1.0

    def test_independent_phases(self):
        rng = np.random.default_rng(0)
        tr = [pncore.PhaseNoiseTrace(FS, rng.uniform(0, 2 * np.pi, 512)) for _ in range(50)]
        est = pncore.empirical_autocorr(tr, 20)
        sigma = 1.0 / math.sqrt(50 * 490)
        assert np.max(np.abs(est.values[1:])) < 4 * sigma * math.sqrt(2)

    def test_recovers_surrogate(self):
        model = ExpModel(0.01, 0.9)
        x = pncore.surrogate_batch(model, 512, 21, range(3000))
        est = pncore.empirical_autocorr(list(x), 200)
        assert np.max(np.abs(est.values - gamma_e(model, np.arange(201)))) < 0.01

    def test_normalized_exactly(self):
        tr = pncore.synthesize_batch(pncore.default_psd(), 300e9, FS, 256, 5, seed=1)
        est = pncore.empirical_autocorr(tr, 100)
        assert est.values[0] == 1.0
        assert np.all(np.abs(est.values) <= 1.05)
        assert est.n_realizations == 5

    def test_lag_too_long(self):
        with pytest.raises(DomainError):
            pncore.empirical_autocorr([pncore.PhaseNoiseTrace(FS, np.zeros(8))], 8)


class TestFiles:
    def test_binary_trace_layout(self, tmp_path):
        tr = pncore.PhaseNoiseTrace(FS, np.array([0.5, -1.25, 3.0]))
        path = tmp_path / "t.bin"
        pncore.write_trace(tr, path)
        raw = path.read_bytes()
        assert raw[:4] == b"PNTR"
        version, fs, n = struct.unpack("<IdQ", raw[4:24])
        assert (version, fs, n) == (1, FS, 3)
        assert np.array_equal(np.frombuffer(raw[24:], "<f8"), tr.phases)
        back = pncore.read_trace(path)
        assert back.fs_hz == FS and np.array_equal(back.phases, tr.phases)

    def test_csv_trace_roundtrip(self, tmp_path):
        tr = pncore.synthesize(pncore.default_psd(), 100e9, FS, 64, seed=3)
        path = tmp_path / "t.csv"
        pncore.write_trace_csv(tr, path)
        assert path.read_text().splitlines()[1].startswith("index,phase")
        back = pncore.load_trace(path)
        assert np.array_equal(back.phases, tr.phases) and back.fs_hz == FS

    def test_autocorr_roundtrip(self, tmp_path):
        tr = pncore.synthesize_batch(pncore.default_psd(), 100e9, FS, 128, 3, seed=1)
        est = pncore.empirical_autocorr(tr, 40)
        path = tmp_path / "g.csv"
        pncore.write_autocorr_csv(est, path)
        assert path.read_text().startswith("lag,gamma\n")
        back = pncore.read_autocorr_csv(path)
        assert np.array_equal(back.values, est.values)

    def test_psd_json_roundtrip(self, tmp_path):
        for spec in (pncore.default_psd(), flat(-math.inf)):
            path = tmp_path / "psd.json"
            pncore.save_psd(spec, path)
            assert pncore.load_psd(path) == spec
