import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from dislolab.cell import fundamental_strain
from dislolab.core import BurgersLattice, DislocationMeasure, ElasticTensor, EnergyDensity, rotation
from dislolab.envelope import QuadraticSelfEnergy
from dislolab.gammalab import (CorePatch, StrainField, build_recovery, circulation_bound,
                               compatible_strain, curl_defect, default_tests, dirichlet_poisson,
                               dual_norm, energy_breakdown, envelope_density, eval_e_crit,
                               eval_e_eps, fit_inverse_log, green_energy, h_minus_one_residual,
                               liminf_shell_diagnostic, log_scale, measure_coefficients, pair,
                               place_dislocations, probe_field, optimal_rotation_mixed,
                               rescaled_strain, shell_count, strain_profile)

REF = ElasticTensor.reference()
W = EnergyDensity(1.5)
PHI = envelope_density(BurgersLattice(), QuadraticSelfEnergy.from_tensor(REF))


def single_dislocation(eps, burgers=(1.0, 0.0), center=(0.5, 0.5), radius=0.3, n=256):
    """beta = Id + eps eta_0(x - c) on the whole square, as grid part plus core patch.

    Inside the disk the grid carries the smooth remainder eta_0 rho^2/r^2,
    outside it carries eta_0 itself, so the sum is exact everywhere.
    """
    b = np.asarray(burgers, dtype=float)
    prof = strain_profile(REF, b)
    patch = CorePatch(center, radius, eps, tuple(b), prof)

    def grid(x):
        y = x - np.asarray(center)
        rho = np.hypot(y[..., 0], y[..., 1])
        fac = np.where(rho >= radius, eps / np.maximum(rho, 1e-300), eps * rho / radius ** 2)
        return fac[..., None, None] * prof(np.arctan2(y[..., 1], y[..., 0]))
    beta = StrainField.from_function(grid, n, patches=(patch,), shift=1.0)
    mu = DislocationMeasure([center], [eps * b], eps, radius / 2)
    return beta, mu


def radial_oracle(eps, burgers=(1.0, 0.0), center=(0.5, 0.5)):
    """(eps L)^-2 int_square W(Id + eps eta_0) by nested adaptive quadrature in polar coordinates."""
    L = abs(math.log(eps))

    def ray(th):
        u = np.array([math.cos(th), math.sin(th)])
        G = fundamental_strain(REF, burgers, u)
        rmax = min(((1 - c) if v > 0 else c) / abs(v) for c, v in zip(center, u) if abs(v) > 1e-15)
        f = lambda r: float(W(np.eye(2) + eps * G / r)) * r
        pts = [eps * k for k in (0.3, 1, 3, 10, 30, 100) if eps * k < rmax]
        return quad(f, 0, rmax, points=pts, limit=200, epsabs=0, epsrel=1e-9)[0]
    return quad(ray, 0, 2 * np.pi, limit=200, epsabs=0, epsrel=1e-7)[0] / (eps * L) ** 2


class TestFields:
    def test_log_scale(self):
        with pytest.raises(ValueError):
            log_scale(0.5)
        assert log_scale(1e-3) == pytest.approx(3 * math.log(10))

    def test_patch_layout(self):
        prof = strain_profile(REF, (1.0, 0.0))
        with pytest.raises(ValueError, match="grid/patch"):
            StrainField(np.zeros((9, 9, 2, 2)), (CorePatch((0.1, 0.5), 0.2, 1e-2, (1, 0), prof),))
        a = CorePatch((0.4, 0.5), 0.15, 1e-2, (1, 0), prof)
        b = CorePatch((0.6, 0.5), 0.15, 1e-2, (1, 0), prof)
        with pytest.raises(ValueError, match="overlap"):
            StrainField(np.zeros((9, 9, 2, 2)), (a, b))

    def test_truncated_patch_continuous(self):
        p = CorePatch((0.5, 0.5), 0.2, 1e-2, (1.0, 0.0), strain_profile(REF, (1.0, 0.0)))
        t = np.linspace(0, 2 * np.pi, 64)
        ring = np.stack([0.5 + 0.2 * (1 - 1e-9) * np.cos(t), 0.5 + 0.2 * (1 - 1e-9) * np.sin(t)], -1)
        assert np.abs(p(ring)).max() < 1e-8
        assert p.boundary_jump() == 0.0


class TestEnergy:
    def test_zero(self):
        mu = DislocationMeasure.empty(1e-3, 0.05)
        assert eval_e_eps(mu, StrainField.constant(np.eye(2)), W, 1e-3) == 0.0

    def test_separation_violation(self):
        eps = 1e-3
        mu = DislocationMeasure([[0.4, 0.5], [0.45, 0.5]], [[eps, 0], [eps, 0]], eps, 0.05)
        assert eval_e_eps(mu, StrainField.constant(np.eye(2)), W, eps) == math.inf

    def test_curl_mismatch(self):
        eps = 1e-3
        mu = DislocationMeasure([[0.5, 0.5]], [[eps, 0]], eps, 0.05)
        assert eval_e_eps(mu, StrainField.constant(np.eye(2)), W, eps, BurgersLattice()) == math.inf
        assert energy_breakdown(mu, StrainField.constant(np.eye(2)), W, eps).reason

    def test_single_dislocation_oracle(self):
        eps = 1e-3
        beta, mu = single_dislocation(eps)
        assert curl_defect(beta, mu) < 1e-3
        value = eval_e_eps(mu, beta, W, eps, BurgersLattice())
        assert value == pytest.approx(radial_oracle(eps), rel=5e-3)

    def test_split_consistency(self):
        eps = 1e-2
        beta, mu = single_dislocation(eps, n=128)
        whole = eval_e_eps(mu, beta, W, eps)
        br = energy_breakdown(mu, beta, W, eps)
        assert br.total == pytest.approx(whole, rel=1e-4)
        assert br.outside + br.inside == br.total
        assert br.core <= br.inside
        assert br.quadratic_model_error < 1e-3


class TestCritical:
    def test_examples(self):
        zero = StrainField.constant(np.zeros((2, 2)))
        assert eval_e_crit([0.0, 0.0], zero, np.eye(2), REF, PHI) == 0.0
        e11 = StrainField.constant([[1.0, 0.0], [0.0, 0.0]])
        assert eval_e_crit([0.0, 0.0], e11, np.eye(2), REF, PHI) == pytest.approx(0.5, rel=1e-12)

    @staticmethod
    def _extrapolated(xi, R):
        """Trapezoid values on two grids, Richardson-extrapolated to remove the h^2 term."""
        vals = [eval_e_crit(xi, StrainField.from_function(compatible_strain(R.T @ xi), n), R, REF, PHI)
                for n in (64, 128)]
        assert abs(vals[1] - vals[0]) < 1e-5
        return (4 * vals[1] - vals[0]) / 3

    def test_constant_density(self):
        value = self._extrapolated(np.array([1.0, 0.0]), np.eye(2))
        assert value == pytest.approx(1 / 64 + 1 / (8 * math.pi), rel=1e-10)

    def test_rotated_density(self):
        R = rotation(0.3)
        xi = np.array([1.0, 0.0])
        value = self._extrapolated(xi, R)
        assert value == pytest.approx(1 / 64 + PHI(R, xi), rel=1e-10)

    def test_incompatible(self):
        beta = StrainField.from_function(compatible_strain([1.0, 0.0]), 64)
        assert eval_e_crit([0.0, 1.0], beta, np.eye(2), REF, PHI) == math.inf


@pytest.fixture(scope="module")
def step():
    return build_recovery((1.0, 0.0), 1e-3, n=128)


class TestRecovery:
    def test_ball_masses(self, step):
        assert np.allclose(step.ball_masses(), step.measure.weights, rtol=0, atol=1e-12 * step.eps)

    def test_core_curl_identity(self, step):
        assert step.core_curl_defect() < 1e-10

    def test_curl_of_assembly(self, step):
        assert step.curl_defect() < 1e-3

    def test_admissible(self, step):
        assert step.measure.is_admissible(BurgersLattice())
        assert 2 * step.r_eps >= 2 * step.measure.rho

    def test_rescaled_identity(self, step):
        rs = rescaled_strain(step.strain, step.R, step.eps)
        x = np.random.default_rng(0).uniform(0, 1, (400, 2))
        direct = (np.einsum("ji,...jk->...ik", step.R, step.strain(x)) - np.eye(2)) / (step.eps * step.log_eps)
        assert np.max(np.abs(rs(x) - direct)) < 1e-10

    def test_rotated_construction(self):
        R = rotation(0.7)
        st = build_recovery((1.0, 0.0), 1e-3, R=R, n=64)
        assert st.core_curl_defect() < 1e-10
        assert st.curl_defect() < 1e-2

    def test_too_coarse(self):
        with pytest.raises(ValueError, match="too large"):
            place_dislocations([1.0], 0.3)

    def test_placement_counts(self):
        pts, labels, r = place_dislocations([0.5, 0.5], 1e-8)
        counts = np.bincount(labels)
        assert abs(counts[0] - counts[1]) <= 1
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(len(pts))
        assert d.min() >= 2 * r - 1e-12

    def test_count_convergence(self):
        """|mu^k|/|log eps| approaches lambda_k with error at most 2/sqrt(|log eps|)."""
        for eps in 10.0 ** -np.arange(2, 60, 4):
            _, labels, _ = place_dislocations([1.0], eps)
            L = abs(math.log(eps))
            assert abs(len(labels) / L - 1.0) <= 2 / math.sqrt(L)

    def test_weak_pairings_band(self):
        target = StrainField.from_function(compatible_strain((1.0, 0.0)), 128)
        tests = default_tests()
        ref = np.array([pair(target, t) for t in tests])
        assert np.all(np.abs(ref) > 1e-3)
        for eps in (1e-2, 1e-4):
            st = build_recovery((1.0, 0.0), eps, n=128)
            rs = rescaled_strain(st.strain, st.R, eps)
            err = np.abs([pair(rs, t) for t in tests] - ref).max()
            assert err * log_scale(eps) <= 0.5


class TestPoisson:
    def test_manufactured(self):
        x, y = sp.symbols("x y")
        w = sp.sin(sp.pi * x) * sp.sin(2 * sp.pi * y) * sp.exp(x * y)
        f = -(sp.diff(w, x, 2) + sp.diff(w, y, 2))
        fn, wn = sp.lambdify((x, y), f, "numpy"), sp.lambdify((x, y), w, "numpy")
        gn = sp.lambdify((x, y), [sp.diff(w, x), sp.diff(w, y)], "numpy")
        errs, gerrs = [], []
        for n in (64, 128):
            g = np.linspace(0, 1, n + 1)
            X, Y = np.meshgrid(g, g, indexing="ij")
            sol, grad = dirichlet_poisson(fn(X[1:-1, 1:-1], Y[1:-1, 1:-1])[..., None])
            assert np.all(sol[0] == 0) and np.all(sol[:, -1] == 0)
            errs.append(np.abs(sol[..., 0] - wn(X, Y)).max())
            gx, gy = gn(X, Y)
            gerrs.append(max(np.abs(grad[..., 0, 0] - gx).max(), np.abs(grad[..., 0, 1] - gy).max()))
        assert errs[1] < 1e-3 and errs[1] < errs[0] / 3
        assert gerrs[1] < 0.05 and gerrs[1] < gerrs[0] / 1.5


class TestHMinusOne:
    def test_gradient_field_second_order(self):
        """A gradient with no atoms leaves only the O(h^2) grid residual."""
        f = lambda X: np.stack([np.stack([np.cos(X[..., 0]) * X[..., 1], np.sin(X[..., 0])], -1),
                                np.stack([2 * X[..., 0], 0 * X[..., 0]], -1)], -2)
        mu = DislocationMeasure.empty(1e-3, 0.1)
        res = [h_minus_one_residual(StrainField.from_function(f, n), mu) for n in (64, 128, 256)]
        assert res[-1] < 5e-5
        assert all(3.5 < a / b < 4.5 for a, b in zip(res, res[1:]))

    def test_recovery_pair(self):
        st = build_recovery((1.0, 0.0), 1e-2, n=128)
        scale = dual_norm(measure_coefficients(st.measure, 32))
        assert h_minus_one_residual(st.strain, st.measure) < 1e-3 * scale

    def test_atom_shift_order(self):
        st = build_recovery((1.0, 0.0), 1e-2, n=128)
        hs = 2.0 ** -np.arange(4, 9)
        res = []
        for h in hs:
            pts = st.measure.points.copy()
            pts[0, 0] += h
            moved = DislocationMeasure(pts, st.measure.weights, st.eps, st.measure.rho)
            res.append(h_minus_one_residual(st.strain, moved))
        slopes = np.diff(np.log(res)) / np.diff(np.log(hs))
        assert np.all(slopes[-2:] > 0.9) and np.all(slopes[-2:] < 1.1)

    def test_single_atom(self):
        x0, w = (0.3, 0.55), np.array([2e-3, -1e-3])
        mu = DislocationMeasure([x0], [w], 1e-3, 0.1)
        zero = StrainField.constant(np.zeros((2, 2)), 32)
        total = 0.0
        for k in range(1, 33):
            for l in range(1, 33):
                e = 2 * math.sin(math.pi * k * x0[0]) * math.sin(math.pi * l * x0[1])
                total += e * e / (math.pi ** 2 * (k * k + l * l))
        assert green_energy(x0) == pytest.approx(total, rel=1e-12)
        assert h_minus_one_residual(zero, mu) == pytest.approx(np.linalg.norm(w) * math.sqrt(total), rel=1e-12)


class TestRigidity:
    def test_pure_rotation(self):
        pf = probe_field(3, kind="rotation", n=32)
        rep = optimal_rotation_mixed(pf.strain, 1.5, mass=0.0)
        assert abs(math.remainder(rep.theta - pf.theta0, 2 * math.pi)) < 1e-6
        assert rep.lhs < 1e-20

    def test_perturbative(self):
        th0 = 0.8
        A = np.array([[0.3, -0.7], [0.2, 0.1]])
        for t in (1e-1, 1e-2, 1e-3):
            beta = StrainField(np.broadcast_to(t * A, (17, 17, 2, 2)).copy(), (), rotation(th0), 1.0)
            rep = optimal_rotation_mixed(beta, 1.5, mass=0.0)
            scan = np.linspace(th0 - 0.2, th0 + 0.2, 40001)
            dense = [np.sum(np.minimum(n * n, n ** 1.5)) for n in
                     [np.linalg.norm(rotation(th0) @ (np.eye(2) + t * A) - rotation(s)) for s in scan]]
            assert rep.lhs <= min(dense) + 1e-12
            assert abs(rep.theta - th0) <= 2 * t
            assert rep.lhs / t ** 2 < 1.0

    def test_dislocation_probe(self, constants):
        for seed in (1, 3, 5):
            pf = probe_field(seed, n=64)
            rep = optimal_rotation_mixed(pf.strain, 1.5, eps=1e-2)
            assert rep.lhs <= constants["C_emp"] * rep.rhs


    def test_dislocation_constant_stable(self, constants):
        assert constants["C_emp_dislocation_spread"] <= 0.25


class TestShells:
    def test_closed_form(self):
        a, b, beps = 0.1, 0.5, 1e-3
        assert circulation_bound(a, b, beps, 1.5) == pytest.approx(beps ** 2 / (4 * math.pi) * math.log(b / a), rel=1e-12)

    def test_bound_by_quadrature(self):
        beps, p = 0.5, 1.5
        c = beps / (2 * math.pi)
        f = lambda t: math.pi * t * min((c / t) ** 2, (c / t) ** p)
        assert circulation_bound(0.01, 1.0, beps, p) == pytest.approx(quad(f, 0.01, 1.0, points=[c])[0], rel=1e-10)

    @pytest.mark.parametrize("eps", [1e-2, 1e-4])
    @pytest.mark.parametrize("burgers", [(1.0, 0.0), (1.0, 1.0)])
    def test_inequality_on_every_shell(self, eps, burgers):
        b = np.asarray(burgers)
        patch = CorePatch((0.5, 0.5), 0.3, eps, tuple(b), strain_profile(REF, b), truncated=False)
        beta = StrainField(np.zeros((17, 17, 2, 2)), (patch,), np.eye(2), 1.0)
        recs = liminf_shell_diagnostic(beta, (0.5, 0.5), b, 0.5, 0.9, eps, 0.3)
        assert len(recs) == shell_count(eps, 0.3, 0.5, 0.9)
        assert all(r.holds for r in recs)

    def test_zero_field(self):
        beta = StrainField(np.zeros((17, 17, 2, 2)), (), np.eye(2), 1.0)
        recs = liminf_shell_diagnostic(beta, (0.5, 0.5), (0.0, 0.0), 0.5, 0.5, 1e-3, 0.3)
        assert all(r.energy_w >= 0 and r.bound == 0 for r in recs)

    def test_outside(self):
        beta = StrainField(np.zeros((17, 17, 2, 2)), (), np.eye(2), 1.0)
        with pytest.raises(ValueError):
            liminf_shell_diagnostic(beta, (0.1, 0.5), (1.0, 0.0), 0.5, 0.5, 1e-3, 0.3)


class TestTrendFit:
    def test_exact_law(self):
        eps = np.array([1e-2, 1e-3, 1e-4])
        fit = fit_inverse_log(eps, 0.7 / np.abs(np.log(eps)))
        assert fit.constant == pytest.approx(0.7) and fit.r_squared == pytest.approx(1.0) and fit.monotone

    def test_non_monotone(self):
        fit = fit_inverse_log([1e-2, 1e-3, 1e-4], [0.1, 0.3, 0.05])
        assert not fit.monotone

    def test_infinite_gap(self):
        fit = fit_inverse_log([1e-2, 1e-3], [0.1, math.inf])
        assert not fit.monotone and fit.r_squared == -math.inf
