import math
import struct

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from ptrsplan import pncore
from ptrsplan.errors import DomainError, FallbackToNumeric, SingularModel
from ptrsplan.expmodel import ExpModel
from ptrsplan.wiener import (PilotPattern, a_lambda, beta, coefficients, coefficients_closed,
                             coefficients_numeric, correlation_vector, edge_vector, interpolate,
                             invert_pilot_matrix_closed, kp, pilot_matrix, read_coefficients_bin,
                             read_coefficients_csv, v_vectors, write_coefficients_bin,
                             write_coefficients_csv, x_lambda)

import oracles


def model_for_lambda(lam, delta, b):
    return ExpModel(-math.log(lam) / delta, b)


@st.composite
def instances(draw, max_n=8192, max_np=64, min_np=3):
    a = draw(st.floats(1e-4, 0.1))
    b = draw(st.floats(0.5, 0.995))
    delta = draw(st.integers(1, 200))
    n_p = draw(st.integers(min_np, max_np))
    p1 = draw(st.integers(1, delta))
    span = p1 + (n_p - 1) * delta
    assume(span <= max_n)
    n_total = draw(st.integers(span, min(max_n, span + delta)))
    return ExpModel(a, b), PilotPattern(n_total, p1, delta, n_p)


class TestPattern:
    def test_positions(self):
        p = PilotPattern(100, 3, 10, 5)
        assert list(p.positions) == [3, 13, 23, 33, 43]
        assert p.last == 43

    def test_for_spacing_uses_ceiling(self):
        p = PilotPattern.for_spacing(4096, 50)
        assert p.n_pilots == oracles.ceil_div(4096, 50) == 82

    def test_for_spacing_keeps_pilots_inside(self):
        p = PilotPattern.for_spacing(4096, 50, p1=25)
        assert p.n_pilots == 82 and p.last <= 4096
        p = PilotPattern.for_spacing(4096, 97, p1=48)
        assert p.last <= 4096 < p.last + 97

    @pytest.mark.parametrize("args", [(10, 1, 5, 3), (10, 0, 1, 1), (10, 1, 0, 1), (10, 1, 1, 0)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            PilotPattern(*args)

    def test_reflection(self):
        p = PilotPattern(100, 7, 20, 4)
        r = p.reflected()
        assert list(r.positions) == sorted(101 - p.positions)


class TestVectors:
    def test_single_pilot(self):
        m = ExpModel(0.01, 0.9)
        p = PilotPattern(10, 4, 1, 1)
        assert correlation_vector(m, p, 4) == pytest.approx([1.0])

    def test_unit_on_pilots(self):
        m = ExpModel(0.02, 0.7)
        p = PilotPattern(200, 5, 30, 6)
        g = correlation_vector(m, p, p.positions)
        assert np.array_equal(np.diag(g), np.ones(6))

    def test_frozen_example(self):
        v = correlation_vector(ExpModel(0.01, 0.9), PilotPattern(30, 1, 10, 3), 1)
        assert v == pytest.approx([1.0, 0.990484, 0.981873], abs=1e-6)

    def test_pilot_matrix_scalar(self):
        assert pilot_matrix(ExpModel(0.1, 0.5), PilotPattern(5, 1, 1, 1)).tolist() == [[1.0]]

    def test_pilot_matrix_without_floor_is_kms(self):
        m = model_for_lambda(0.4, 10, 0.0)
        r = pilot_matrix(m, PilotPattern(100, 1, 10, 6))
        assert np.allclose(r, a_lambda(0.4, 6), atol=1e-15)

    def test_pilot_matrix_corner(self):
        r = pilot_matrix(model_for_lambda(0.5, 7, 0.9), PilotPattern(50, 1, 7, 3))
        assert r[0, 2] == pytest.approx(0.925, abs=1e-14)
        assert np.array_equal(r, r.T) and np.all(np.diag(r) == 1.0)


class TestInverse:
    @pytest.mark.parametrize("lam", [0.01, 0.3, 0.9, 0.999])
    def test_tridiagonal_identity(self, lam):
        for n_p in range(2, 65):
            prod = a_lambda(lam, n_p) @ x_lambda(lam, n_p)
            assert np.max(np.abs(prod - (1 - lam * lam) * np.eye(n_p))) < 1e-12

    def test_two_by_two(self):
        lam = 0.35
        inv = invert_pilot_matrix_closed(model_for_lambda(lam, 4, 0.0), PilotPattern(10, 1, 4, 2))
        assert np.allclose(inv, np.array([[1, -lam], [-lam, 1]]) / (1 - lam * lam), atol=1e-14)

    def test_kms_inverse(self):
        lam = 0.3
        prod = a_lambda(lam, 5) @ x_lambda(lam, 5) / (1 - lam * lam)
        assert np.max(np.abs(prod - np.eye(5))) < 1e-12

    @given(st.floats(0.01, 0.99), st.floats(0.0, 0.99), st.integers(2, 64))
    def test_sherman_morrison_vs_dense(self, lam, b, n_p):
        m = model_for_lambda(lam, 3, b)
        p = PilotPattern(3 * n_p, 1, 3, n_p)
        closed = invert_pilot_matrix_closed(m, p)
        r = pilot_matrix(m, p)
        assert np.max(np.abs(closed - np.linalg.inv(r))) < 1e-9 * max(1.0, np.abs(closed).max())
        assert np.max(np.abs(closed @ r - np.eye(n_p))) < 1e-9

    def test_extended_oracle(self):
        m, p = model_for_lambda(0.6, 5, 0.7), PilotPattern(50, 1, 5, 10)
        ref = oracles.dense_inverse_extended(0.6, m.c, 10)
        assert np.allclose(ref.astype(float), np.linalg.inv(pilot_matrix(m, p)), rtol=1e-12, atol=1e-12)

    def test_rejects_unit_lambda(self):
        with pytest.raises(DomainError):
            invert_pilot_matrix_closed(ExpModel(1e-300, 0.5), PilotPattern(10, 1, 2, 3))


class TestBeta:
    def test_first_pilot(self):
        m, p = ExpModel(0.01, 0.9), PilotPattern(400, 20, 50, 5)
        lam = math.exp(-0.5)
        assert beta(m, p, 20) == pytest.approx(1 + lam, rel=1e-15)
        assert beta(m, p, 19) == pytest.approx(math.exp(-0.01) * (1 + lam), rel=1e-15)

    @given(instances(max_n=2000, max_np=40))
    def test_definition(self, inst):
        m, p = inst
        n = np.arange(1, p.n_total + 1)
        got = beta(m, p, n)
        ref = [oracles.beta_definition(m.a, p.delta, p.p1, p.n_pilots, k) for k in n]
        assert np.allclose(got, ref, rtol=1e-10, atol=1e-300)

    def test_kp(self):
        p = PilotPattern(100, 5, 10, 8)
        assert list(kp(p, [1, 4, 5, 14, 15, 75, 76, 100])) == [0, 0, 1, 1, 2, 8, 8, 8]

    def test_no_overflow_at_scale(self):
        m, p = ExpModel(0.0074, 0.9), PilotPattern.for_spacing(4096, 109)
        assert np.all(np.isfinite(beta(m, p, np.arange(1, 4097))))


class TestCoefficients:
    def test_frozen_example(self):
        m, p = ExpModel(0.00736, 0.977), PilotPattern(200, 25, 50, 4)
        diff = coefficients_closed(m, p).weights - oracles.dense_weights(0.00736, 0.977, 200, 25, 50, 4)[0]
        assert np.max(np.abs(diff)) < 1e-9

    @given(instances())
    def test_closed_matches_dense(self, inst):
        m, p = inst
        closed = coefficients_closed(m, p).weights
        dense = coefficients_numeric(m, p).weights
        assert np.all(np.isfinite(closed))
        assert np.max(np.abs(closed - dense)) < 1e-9

    @given(instances(max_n=3000))
    def test_on_pilot_rows_are_basis_vectors(self, inst):
        m, p = inst
        w = coefficients(m, p).weights
        assert np.max(np.abs(w[p.positions - 1] - np.eye(p.n_pilots))) < 1e-9

    def test_reflection_symmetry(self):
        m = ExpModel(0.00736, 0.977)
        p = PilotPattern(200, 12, 50, 4)
        w = coefficients_closed(m, p).weights
        wr = coefficients_closed(m, p.reflected()).weights
        # position n in the mirror sees the pilots in reverse order
        assert np.allclose(wr, w[::-1, ::-1], atol=1e-12)

    def test_interior_v_coordinates(self):
        m, p = ExpModel(0.01, 0.9), PilotPattern(300, 10, 40, 7)
        lam = math.exp(-0.4)
        n = np.arange(1, 301)
        v = v_vectors(m, p, n)
        pos = p.positions
        for j in range(1, 6):
            e = lambda k: np.exp(-m.a * np.abs(n - pos[k]))
            ref = (1 + lam * lam) * e(j) - lam * (e(j - 1) + e(j + 1))
            assert np.allclose(v[:, j], ref, atol=1e-15)

    def test_edge_vector(self):
        assert edge_vector(0.25, 4).tolist() == [1.0, 0.75, 0.75, 1.0]

    def test_fallback_signal(self):
        m, p = ExpModel(0.01, 0.9), PilotPattern(100, 1, 50, 2)
        with pytest.raises(FallbackToNumeric):
            coefficients_closed(m, p)
        assert coefficients(m, p).method == "numeric"

    def test_single_pilot(self):
        m, p = ExpModel(0.01, 0.9), PilotPattern(50, 10, 1, 1)
        w = coefficients_numeric(m, p).weights
        assert np.allclose(w[:, 0], oracles.gamma(0.01, 0.9, np.arange(1, 51) - 10), atol=1e-15)

    def test_identity_limit(self):
        m, p = ExpModel(5.0, 0.0), PilotPattern(40, 1, 10, 4)
        w = coefficients_numeric(m, p).weights
        g = correlation_vector(m, p, np.arange(1, 41))
        assert np.allclose(w, g, atol=1e-15)

    def test_singular(self):
        with pytest.raises(SingularModel):
            coefficients_numeric(ExpModel(1e-17, 1.0), PilotPattern(20, 1, 5, 4))


class TestInterpolate:
    def setup_method(self):
        self.m = ExpModel(0.00736, 0.977)
        self.p = PilotPattern(256, 1, 25, 11)
        self.w = coefficients(self.m, self.p)

    def test_ones_give_row_sums(self):
        out = interpolate(self.w, np.ones(11, dtype=complex))
        assert np.allclose(out, self.w.weights.sum(axis=1))

    def test_basis_gives_column(self):
        e = np.zeros(11)
        e[4] = 1.0
        assert np.array_equal(interpolate(self.w, e), self.w.weights[:, 4])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            interpolate(self.w, np.ones(10))

    def test_exact_on_pilots(self):
        alpha = pncore.synthesize_from_autocorr(self.m, 256, seed=3)
        est = interpolate(self.w, alpha[self.p.positions - 1])
        assert np.max(np.abs(est[self.p.positions - 1] - alpha[self.p.positions - 1])) < 1e-12

    def test_batched(self):
        x = np.random.default_rng(0).standard_normal((5, 11))
        out = interpolate(self.w, x)
        assert out.shape == (5, 256)
        assert np.allclose(out[2], interpolate(self.w, x[2]))


class TestFiles:
    def test_csv_roundtrip(self, tmp_path):
        w = coefficients(ExpModel(0.01, 0.9), PilotPattern(120, 3, 20, 6))
        write_coefficients_csv(w, tmp_path / "w.csv")
        assert (tmp_path / "w.csv").read_text().startswith("n,j,w\n")
        back = read_coefficients_csv(tmp_path / "w.csv", 120, 6)
        assert np.array_equal(back, w.weights)

    def test_binary_roundtrip(self, tmp_path):
        w = coefficients(ExpModel(0.01, 0.9), PilotPattern(120, 3, 20, 6))
        write_coefficients_bin(w, tmp_path / "w.bin")
        raw = (tmp_path / "w.bin").read_bytes()
        assert struct.unpack("<QQ", raw[:16]) == (120, 6)
        assert np.array_equal(read_coefficients_bin(tmp_path / "w.bin"), w.weights)
