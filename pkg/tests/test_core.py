import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from dislolab.core import (BurgersLattice, DislocationMeasure, ElasticTensor, EnergyDensity,
                           MixedGrowthParams, decompose_threshold, dist_so2, energy_w,
                           hessian_at_identity, mixed_growth, mixed_triangle_ratio, rotation)

finite = st.floats(-5, 5, allow_nan=False)
matrices = st.lists(finite, min_size=4, max_size=4).map(lambda v: np.array(v).reshape(2, 2))


def dist_by_search(F):
    """Brute-force distance to SO(2) over the rotation angle."""
    f = lambda t: np.linalg.norm(F - np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]]))
    grid = np.linspace(-math.pi, math.pi, 721)
    t0 = grid[np.argmin([f(t) for t in grid])]
    return minimize_scalar(f, bounds=(t0 - 0.01, t0 + 0.01), method="bounded",
                           options={"xatol": 1e-12}).fun


class TestMixedGrowth:
    def test_examples(self):
        assert mixed_growth(0.0, 1.5) == 0.0
        assert mixed_growth(1.0, 1.5) == 1.0
        assert mixed_growth(4.0, 1.5) == pytest.approx(8.0, rel=1e-15)

    @pytest.mark.parametrize("t,p", [(-0.1, 1.5), (1.0, 1.0), (1.0, 2.0), (1.0, 0.5)])
    def test_domain_errors(self, t, p):
        with pytest.raises(ValueError):
            mixed_growth(t, p)

    @given(st.floats(0, 1e3), st.floats(1.01, 1.99))
    def test_is_the_minimum(self, t, p):
        assert mixed_growth(t, p) == pytest.approx(min(t * t, t ** p), rel=1e-14, abs=0)


class TestDistance:
    def test_examples(self):
        assert dist_so2(np.eye(2)) == 0.0
        assert dist_so2(2 * np.eye(2)) == pytest.approx(math.sqrt(2), rel=1e-15)
        assert dist_so2(np.zeros((2, 2))) == pytest.approx(math.sqrt(2), rel=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(matrices)
    def test_matches_angle_search(self, F):
        assert dist_so2(F) == pytest.approx(dist_by_search(F), abs=1e-7)

    def test_reflections(self):
        F = np.diag([1.0, -1.0])
        assert dist_so2(F) == pytest.approx(dist_by_search(F), abs=1e-9)


class TestEnergy:
    W = EnergyDensity(1.5)

    def test_identity_and_rotations(self):
        assert energy_w(np.eye(2), self.W) == 0.0
        assert np.all(energy_w(rotation(np.linspace(-3, 3, 50)), self.W) < 1e-28)

    def test_far_branch(self):
        t = math.sqrt(2)
        assert energy_w(2 * np.eye(2), self.W) == pytest.approx(t ** 1.5 / 1.5 + 0.5 - 1 / 1.5, rel=1e-14)

    def test_branches_meet(self):
        for p in (1.1, 1.5, 1.9):
            d = EnergyDensity(p)
            assert d.profile(1.0) == 0.5
            assert d.profile(1.0 + 1e-12) == pytest.approx(0.5, abs=1e-11)

    def test_frame_indifference(self):
        rng = np.random.default_rng(1)
        F = rng.normal(scale=2.0, size=(10_000, 2, 2))
        Q = rotation(rng.uniform(-np.pi, np.pi, 10_000))
        a = energy_w(F, self.W)
        b = energy_w(Q @ F, self.W)
        assert np.max(np.abs(a - b) / np.maximum(1.0, a)) < 1e-12

    @pytest.mark.parametrize("p", [1.1, 1.5, 1.9])
    def test_growth_sandwich(self, p):
        d = EnergyDensity(p)
        t = np.linspace(0, 50, 5001)
        g = mixed_growth(t, p)
        h = d.profile(t)
        assert np.all(d.lower_constant * g <= h + 1e-14)
        assert np.all(h <= d.upper_constant * g + 1e-12)


class TestHessian:
    def test_examples(self):
        C = hessian_at_identity(EnergyDensity(1.5))
        e12 = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert C.quadratic(e12) == pytest.approx(0.5, rel=1e-15)
        assert C.quadratic(np.array([[0.0, -1.0], [1.0, 0.0]])) == 0.0
        assert C.quadratic(np.eye(2)) == pytest.approx(2.0, rel=1e-15)

    @pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
    def test_finite_differences(self, p):
        W = EnergyDensity(p)
        C = hessian_at_identity(W).entries
        h = 1e-4
        E = np.eye(4).reshape(4, 2, 2)
        I = np.eye(2)
        H = np.empty((4, 4))
        for a in range(4):
            for b in range(4):
                H[a, b] = (W(I + h * E[a] + h * E[b]) - W(I + h * E[a] - h * E[b])
                           - W(I - h * E[a] + h * E[b]) + W(I - h * E[a] - h * E[b])) / (4 * h * h)
        assert np.max(np.abs(H - C.reshape(4, 4))) < 1e-6

    def test_symmetry_and_positivity(self):
        C = ElasticTensor.from_lame(0.3, 0.7)
        assert np.array_equal(C.entries, C.entries.transpose(2, 3, 0, 1))
        rng = np.random.default_rng(0)
        S = rng.normal(size=(1000, 2, 2))
        S = S + np.swapaxes(S, -1, -2)
        assert np.all(C.quadratic(S) > 0)

    def test_rejects_asymmetric(self):
        C = np.zeros((2, 2, 2, 2))
        C[0, 0, 1, 1] = 1.0
        with pytest.raises(ValueError):
            ElasticTensor(C)


class TestTriangle:
    def test_examples(self):
        z = np.zeros(2)
        e1 = np.array([1.0, 0.0])
        assert mixed_triangle_ratio(z, z, 1.5) == 0.0
        assert mixed_triangle_ratio(e1, z, 1.5) == 1.0
        assert mixed_triangle_ratio(e1, e1, 1.5) == pytest.approx(math.sqrt(2), rel=1e-15)

    @pytest.mark.parametrize("p", [1.1, 1.5, 1.9])
    def test_fuzz(self, p):
        rng = np.random.default_rng(int(10 * p))
        n = 1_000_000
        scale = 10.0 ** rng.uniform(-3, 3, size=(n, 1))
        a = rng.normal(size=(n, 2)) * scale
        b = rng.normal(size=(n, 2)) * 10.0 ** rng.uniform(-3, 3, size=(n, 1))
        assert mixed_triangle_ratio(a, b, p).max() <= 4.0


class TestDecompose:
    def test_examples(self):
        f, g = decompose_threshold(np.full(3, 0.4), np.zeros(3), 1.0)
        assert np.all(f == 0.4) and np.all(g == 0)
        f, g = decompose_threshold(np.full(3, 0.6), np.full(3, 0.6), 1.0)
        assert np.all(f == 0) and np.allclose(g, 1.2)
        f, g = decompose_threshold(np.ones(3), np.zeros(3), 1.0)
        assert np.all(f == 1) and np.all(g == 0)

    @settings(max_examples=100)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 10))
    def test_ranges(self, seed, k):
        rng = np.random.default_rng(seed)
        f = rng.exponential(k, size=200)
        g = rng.exponential(k, size=200) * (rng.random(200) < 0.5)
        ft, gt = decompose_threshold(f, g, k)
        assert np.array_equal(ft + gt, f + g)
        assert np.all(ft <= k)
        assert np.all((gt == 0) | (gt > k))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            decompose_threshold(np.zeros(2), np.zeros(3), 1.0)


class TestLatticeAndMeasure:
    def test_lattice(self):
        lat = BurgersLattice((1.0, 0.0), (0.5, math.sqrt(3) / 2))
        assert lat.min_norm() == pytest.approx(1.0)
        assert lat.contains([1.5, math.sqrt(3) / 2])
        assert not lat.contains([0.5, 0.0])
        with pytest.raises(ValueError):
            BurgersLattice((1.0, 1.0), (2.0, 2.0))

    def test_separation(self):
        eps, rho = 1e-2, 0.05
        ok = DislocationMeasure([[0.3, 0.3], [0.5, 0.3]], [[eps, 0], [0, eps]], eps, rho)
        assert ok.is_admissible(BurgersLattice())
        assert ok.total_variation() == pytest.approx(2 * eps)
        close = DislocationMeasure([[0.3, 0.3], [0.39, 0.3]], [[eps, 0], [0, eps]], eps, rho)
        with pytest.raises(ValueError, match="closer"):
            close.validate()
        off = DislocationMeasure([[0.3, 0.3]], [[0.5 * eps, 0]], eps, rho)
        assert off.violations(BurgersLattice())
        edge = DislocationMeasure([[0.01, 0.5]], [[eps, 0]], eps, rho)
        assert edge.violations()

    def test_csv_round_trip(self, tmp_path):
        m = DislocationMeasure([[0.25, 0.75]], [[1e-3, -2e-3]], 1e-3, 0.1)
        m.to_csv(tmp_path / "mu.csv")
        back = DislocationMeasure.from_csv(tmp_path / "mu.csv", 1e-3, 0.1)
        assert np.array_equal(back.points, m.points) and np.array_equal(back.weights, m.weights)

    def test_rho_rule(self):
        rep = MixedGrowthParams().check_rho_rule([1e-2, 1e-4, 1e-8, 1e-16, 1e-32])
        assert rep["separation_grows"] and rep["log_mass_vanishes"]
