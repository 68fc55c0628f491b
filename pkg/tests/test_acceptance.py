"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is printed in the terminal
summary, then asserts the same condition.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import oracle_prelog
from dislolab.bbsolver import (calibration_family, lacunary_family, naive_div_inverse,
                               primal_decompose, smooth_vector_family, solve_div)
from dislolab.cell import prelog_limit, psi_delta, psi_scaled
from dislolab.cli import main
from dislolab.core import (BurgersLattice, ElasticTensor, decompose_threshold, mixed_triangle_ratio)
from dislolab.envelope import (EnvelopeProblem, QuadraticSelfEnergy, brute_force_envelope,
                               convexity_probe, relaxed_density)
from dislolab.gammalab import (CorePatch, StrainField, gamma_trend, liminf_shell_diagnostic,
                               optimal_rotation_mixed, probe_field, rigidity_probe, strain_profile)

REF = ElasticTensor.reference()


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_contraction(bb_params):
    worst_ratio, worst_final, worst_time = 0.0, 0.0, 0.0
    for seed in range(20):
        f = calibration_family(256, seed)
        t0 = time.perf_counter()
        sol = solve_div(f, bb_params)
        worst_time = max(worst_time, time.perf_counter() - t0)
        worst_ratio = max(worst_ratio, max(sol.ratios))
        worst_final = max(worst_final, sol.residual_l2[-1] / sol.residual_l2[0])
    ok = worst_ratio <= 0.9 and worst_final <= 1e-8 and worst_time <= 60
    record(1, ok, f"max ratio {worst_ratio:.3f}, max residual {worst_final:.2e}, slowest run {worst_time:.1f}s")


def test_criterion_2_sup_norm_control(bb_params):
    bb, naive = [], []
    for M in range(4, 9):
        f = lacunary_family(M)
        bb.append(solve_div(f, bb_params).F.sup_norm() / f.l2_norm())
        naive.append(naive_div_inverse(f).sup_norm() / f.l2_norm())
    growth = max(bb) / bb[0]
    record(2, growth <= 3.0, f"solver sup/L2 {np.round(bb, 3).tolist()} (growth {growth:.2f}x), "
                             f"naive {np.round(naive, 3).tolist()}")


def test_criterion_3_primal_decomposition(bb_params, constants):
    res, ratio = [], []
    for seed in range(10):
        d = primal_decompose(smooth_vector_family(128, seed), bb_params)
        res.append(d.residual)
        ratio.append(d.report["g_sup_over_phi_h1"])
    ok = max(res) <= 1e-8 and max(ratio) <= constants["C_primal"] * (1 + 1e-9)
    record(3, ok, f"max residual {max(res):.2e}, max sup(g)/H1 {max(ratio):.4f} vs C_primal {constants['C_primal']:.4f}")


def test_criterion_4_prelog_convergence():
    t0 = time.perf_counter()
    res = prelog_limit(REF, (1.0, 0.0), deltas=(1e-2, 1e-3, 1e-4, 1e-5))
    seconds = time.perf_counter() - t0
    oracle = oracle_prelog(REF)
    err = abs(res.psi_limit - oracle) / oracle
    ok = res.fit_residual <= 0.01 and err <= 0.02 and seconds <= 300
    record(4, ok, f"fit residual {res.fit_residual:.2e}, limit {res.psi_limit:.6f} vs oracle {oracle:.6f} "
                  f"({100 * err:.2f}%), {seconds:.0f}s")


def test_criterion_5_scaling_and_homogeneity():
    a = psi_scaled(REF, (1.0, 0.0), 0.01, 1.0)
    b = psi_scaled(REF, (1.0, 0.0), 0.02, 2.0)
    scale_err = abs(a - b) / a
    one = psi_delta(REF, (0.6, -0.3), 1e-3)
    two = psi_delta(REF, (1.2, -0.6), 1e-3)
    hom_err = abs(two - 4 * one) / (4 * one)
    record(5, scale_err <= 1e-6 and hom_err <= 1e-10, f"scaling {scale_err:.1e}, homogeneity {hom_err:.1e}")


def test_criterion_6_envelope():
    lattice = BurgersLattice()
    psi = QuadraticSelfEnergy.from_tensor(REF)
    prob = EnvelopeProblem(lattice, psi, search_radius=3.0)
    rng = np.random.default_rng(2024)
    xis = rng.uniform(-3, 3, size=(100, 2))
    oracle_err = max(abs(relaxed_density(prob, x, check_stability=False).value
                         - brute_force_envelope(x, psi, lattice, radius=3.0)) for x in xis)
    hom = 0.0
    for x in xis[:30]:
        base = relaxed_density(prob, x, check_stability=False).value
        for t in (0.25, 3.0):
            hom = max(hom, abs(relaxed_density(prob, t * x, check_stability=False).value - t * base))
    conv = convexity_probe(prob, rng.uniform(-3, 3, size=(200, 2, 2))).max_violation
    b1 = np.array(lattice.b1)
    below = relaxed_density(prob, b1).value <= psi(b1) + 1e-15
    ok = oracle_err <= 1e-9 and hom <= 1e-9 and conv <= 1e-9 and below
    record(6, ok, f"oracle {oracle_err:.1e}, homogeneity {hom:.1e}, convexity {conv:.1e}, phi(b1) <= psi(b1): {below}")


def test_criterion_7_gamma_trend():
    t0 = time.perf_counter()
    records, fit = gamma_trend((1.0, 0.0), (1e-2, 1e-3, 1e-4, 1e-5, 1e-6), p=1.5)
    seconds = time.perf_counter() - t0
    gaps = [r.gap for r in records]
    ok = fit.monotone and fit.r_squared >= 0.9 and seconds <= 600
    record(7, ok, f"gaps {[round(g, 4) for g in gaps]}, monotone {fit.monotone}, "
                  f"R^2 {fit.r_squared:.3f}, {seconds:.0f}s")


def test_criterion_8_rigidity(constants):
    rows = rigidity_probe(range(20), p=1.5, n=128)
    worst = max(r["ratio"] for r in rows)
    angle_err, rot_lhs = 0.0, 0.0
    for seed in range(5):
        pf = probe_field(seed, kind="rotation", n=64)
        rep = optimal_rotation_mixed(pf.strain, 1.5, mass=0.0)
        angle_err = max(angle_err, abs(math.remainder(rep.theta - pf.theta0, 2 * math.pi)))
        rot_lhs = max(rot_lhs, rep.lhs)
    ok = worst <= constants["C_emp"] * (1 + 1e-9) and angle_err <= 1e-6 and rot_lhs <= 1e-20
    record(8, ok, f"max lhs/rhs {worst:.4f} vs C_emp {constants['C_emp']:.4f}, "
                  f"rotation angle error {angle_err:.1e}, rotation lhs {rot_lhs:.1e}")


def test_criterion_9_mixed_growth_utilities():
    rng = np.random.default_rng(9)
    tri = 0.0
    for p in (1.1, 1.5, 1.9):
        a = rng.normal(size=(1_000_000, 2)) * 10.0 ** rng.uniform(-3, 3, size=(1_000_000, 1))
        b = rng.normal(size=(1_000_000, 2)) * 10.0 ** rng.uniform(-3, 3, size=(1_000_000, 1))
        tri = max(tri, float(mixed_triangle_ratio(a, b, p).max()))
    f = rng.exponential(1.0, 10_000)
    g = rng.exponential(1.0, 10_000) * (rng.random(10_000) < 0.5)
    ft, gt = decompose_threshold(f, g, 1.0)
    dec = bool(np.array_equal(ft + gt, f + g) and np.all(ft <= 1.0) and np.all((gt == 0) | (gt > 1.0)))
    shells, held = 0, 0
    for eps in (1e-2, 1e-3, 1e-4):
        for burgers in ((1.0, 0.0), (1.0, 1.0), (0.0, -1.0)):
            b = np.asarray(burgers)
            patch = CorePatch((0.5, 0.5), 0.3, eps, burgers, strain_profile(REF, b), truncated=False)
            beta = StrainField(np.zeros((17, 17, 2, 2)), (patch,), np.eye(2), 1.0)
            recs = liminf_shell_diagnostic(beta, (0.5, 0.5), b, 0.5, 0.9, eps, 0.3)
            shells += len(recs)
            held += sum(r.holds for r in recs)
    ok = tri <= 4.0 and dec and held == shells
    record(9, ok, f"triangle max ratio {tri:.3f}, decomposition exact {dec}, shells {held}/{shells}")


def test_criterion_10_determinism(tmp_path):
    runs = {
        "psi": ["psi-table", "--delta-schedule", "1e-1,1e-2,1e-3", "--n-theta", "32", "--workers", "1"],
        "phi": ["phi-table"],
        "rigidity": ["rigidity-probe", "--seeds", "4", "--grid", "32"],
        "gamma": ["gamma-run", "--eps-schedule", "1e-2,1e-3", "--grid", "64"],
    }
    same = {}
    for name, argv in runs.items():
        blobs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            out = d / ("run.json" if name == "gamma" else "out.csv")
            assert main([*argv, "--out", str(out)]) == 0
            blobs.append((d / ("run.csv" if name == "gamma" else "out.csv")).read_bytes())
        same[name] = blobs[0] == blobs[1]
    record(10, all(same.values()), ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))
