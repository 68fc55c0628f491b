"""Relaxed self-energy density: the cheapest way to split a Burgers vector
into nonnegative multiples of lattice vectors, solved as a linear program.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .cell import prelog_quadrature
from .core import BurgersLattice, ElasticTensor


@dataclass(frozen=True)
class QuadraticSelfEnergy:
    """psi(xi) = xi . A xi with a symmetric positive definite A."""

    matrix: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A)[0] <= 0:
            raise ValueError("self-energy form must be positive definite")
        object.__setattr__(self, "matrix", A)

    @classmethod
    def from_tensor(cls, tensor: ElasticTensor) -> "QuadraticSelfEnergy":
        """Prelog form by polarization of the fundamental-strain energies."""
        e1 = prelog_quadrature(tensor, (1.0, 0.0))
        e2 = prelog_quadrature(tensor, (0.0, 1.0))
        d = prelog_quadrature(tensor, (1.0, 1.0))
        off = 0.5 * (d - e1 - e2)
        return cls(np.array([[e1, off], [off, e2]]))

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.einsum("...i,ij,...j->...", xi, self.matrix, xi)
        return out if out.ndim else float(out)

    def rotated(self, R) -> "QuadraticSelfEnergy":
        """The form xi -> psi(R^T xi)."""
        R = np.asarray(R, dtype=float)
        return QuadraticSelfEnergy(R @ self.matrix @ R.T)


@dataclass(frozen=True)
class EnvelopeProblem:
    lattice: BurgersLattice
    psi: Callable
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    search_radius: float = 3.0
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if self.search_radius < max(np.linalg.norm(self.lattice.b1), np.linalg.norm(self.lattice.b2)):
            raise ValueError("search radius must reach both basis vectors")
        if np.min(self.costs(self.columns())) <= 0:
            raise ValueError("self-energy vanishes on a lattice direction")

    def columns(self, radius: float | None = None) -> np.ndarray:
        return self.lattice.vectors_within(self.search_radius if radius is None else radius)

    def costs(self, cols: np.ndarray) -> np.ndarray:
        return np.asarray(self.psi(cols @ self.R), dtype=float)  # rows: R^T xi_k

    def shell_step(self) -> float:
        return max(np.linalg.norm(self.lattice.b1), np.linalg.norm(self.lattice.b2))


@dataclass
class EnvelopeSolution:
    value: float
    decomposition: list[tuple[float, tuple[float, float]]]
    dual: np.ndarray
    stable: bool | None = None
    enlarged_value: float | None = None

    def decomposition_string(self) -> str:
        return ";".join(f"{lam:.17g}:{v[0]:.17g}:{v[1]:.17g}" for lam, v in self.decomposition)


def _exact_weights(cols: np.ndarray, xi: np.ndarray) -> np.ndarray | None:
    """Nonnegative weights reproducing xi from one or two columns, else None."""
    if len(cols) == 1:
        v = cols[0]
        t = float(v @ xi) / float(v @ v)
        if t < -1e-12 or np.linalg.norm(t * v - xi) > 1e-9 * max(1.0, np.linalg.norm(xi)):
            return None
        return np.array([max(t, 0.0)])
    A = cols.T
    if abs(np.linalg.det(A)) < 1e-12:
        return None
    lam = np.linalg.solve(A, xi)
    if np.any(lam < -1e-12):
        return None
    return np.maximum(lam, 0.0)


def _solve_lp(cols: np.ndarray, costs: np.ndarray, xi: np.ndarray, tol: float):
    res = linprog(costs, A_eq=cols.T, b_eq=xi, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol})
    if res.status != 0:
        raise RuntimeError(f"envelope LP failed: {res.message}")
    return res


def _pick_vertex(cols, costs, xi, dual, tol):
    """Lexicographically smallest optimal basis among zero-reduced-cost columns."""
    reduced = costs - cols @ dual
    scale = max(1.0, float(np.abs(costs).max()))
    tight = np.flatnonzero(reduced <= 1e-7 * scale)
    best = None
    for size in (1, 2):
        for idx in itertools.combinations(tight, size):
            lam = _exact_weights(cols[list(idx)], xi)
            if lam is None:
                continue
            val = float(lam @ costs[list(idx)])
            if best is None or val < best[0] - 1e-12 * scale:
                best = (val, idx, lam)
    return best


def relaxed_density(problem: EnvelopeProblem, xi, check_stability: bool = True) -> EnvelopeSolution:
    """min sum lambda_k psi(R^T xi_k) over lambda_k >= 0 with sum lambda_k xi_k = xi."""
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("xi must be finite")
    if not np.any(xi):
        return EnvelopeSolution(0.0, [], np.zeros(2), True, 0.0)
    cols = problem.columns()
    costs = problem.costs(cols)
    res = _solve_lp(cols, costs, xi, problem.tol)
    dual = np.asarray(res.eqlin.marginals, dtype=float)
    best = _pick_vertex(cols, costs, xi, dual, problem.tol)
    if best is None:
        # fall back to the LP support when the reduced-cost screen finds no basis
        support = np.flatnonzero(res.x > problem.tol)
        value, idx, lam = float(res.fun), tuple(support), res.x[support]
    else:
        value, idx, lam = best
    decomposition = [(float(l), (float(cols[i][0]), float(cols[i][1]))) for l, i in zip(lam, idx) if l > 0]
    sol = EnvelopeSolution(value, decomposition, dual)
    if check_stability:
        bigger = EnvelopeProblem(problem.lattice, problem.psi, problem.R,
                                 problem.search_radius + problem.shell_step(), problem.tol)
        other = relaxed_density(bigger, xi, check_stability=False)
        sol.enlarged_value = other.value
        sol.stable = abs(other.value - value) <= 1e-9 * max(1.0, abs(value))
    return sol


def brute_force_envelope(xi, psi: Callable, lattice: BurgersLattice | None = None,
                         R=None, max_terms: int = 3, radius: float = 3.0) -> float:
    """Exhaustive minimum over all decompositions with at most max_terms vectors.

    Each subset's feasible weights form a polytope whose vertices use at most
    two vectors, so every subset is scored by the cheapest of its one- and
    two-vector solutions, found with Cramer's rule.
    """
    lattice = lattice or BurgersLattice()
    R = np.eye(2) if R is None else np.asarray(R, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return 0.0
    cols = lattice.vectors_within(radius)
    costs = np.array([float(psi(R.T @ v)) for v in cols])
    n = len(cols)
    # one vector: xi = t v with t >= 0
    cross = cols[:, 0] * xi[1] - cols[:, 1] * xi[0]
    t = cols @ xi / np.einsum("ij,ij->i", cols, cols)
    parallel = np.abs(cross) <= 1e-9 * max(1.0, float(np.linalg.norm(xi)))
    single = np.where(parallel & (t >= 0), t * costs, np.inf)
    # two vectors: lam_i v_i + lam_j v_j = xi
    det = np.outer(cols[:, 0], cols[:, 1]) - np.outer(cols[:, 1], cols[:, 0])
    ok = np.abs(det) > 1e-12
    safe = np.where(ok, det, 1.0)
    li = (xi[0] * cols[None, :, 1] - xi[1] * cols[None, :, 0]) / safe
    lj = (cols[:, None, 0] * xi[1] - cols[:, None, 1] * xi[0]) / safe
    feasible = ok & (li >= -1e-12) & (lj >= -1e-12)
    pair = np.where(feasible, np.maximum(li, 0) * costs[:, None] + np.maximum(lj, 0) * costs[None, :], np.inf)
    best = float(single.min())
    for size in range(2, max_terms + 1):
        subsets = np.array(list(itertools.combinations(range(n), size)))
        for a, b in itertools.combinations(range(size), 2):
            best = min(best, float(pair[subsets[:, a], subsets[:, b]].min()))
    return best


@dataclass
class ConvexityReport:
    max_violation: float
    worst_pair: tuple | None
    samples: int


def convexity_probe(problem: EnvelopeProblem, samples, t_grid=None) -> ConvexityReport:
    """Check phi(t a + (1-t) b) <= t phi(a) + (1-t) phi(b) over pairs and a t-grid."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[1:] != (2, 2):
        raise ValueError("samples must have shape (pairs, 2, 2)")
    t_grid = np.linspace(0, 1, 11) if t_grid is None else np.asarray(t_grid, dtype=float)
    phi = lambda v: relaxed_density(problem, v, check_stability=False).value
    worst, where, count = 0.0, None, 0
    for a, b in samples:
        fa, fb = phi(a), phi(b)
        for t in t_grid:
            gap = phi(t * a + (1 - t) * b) - (t * fa + (1 - t) * fb)
            count += 1
            if gap > worst:
                worst, where = gap, (a.tolist(), b.tolist(), float(t))
    return ConvexityReport(worst, where, count)
