"""Experiment layer for the rescaled energies: strain fields with analytic
core patches, the two energies, recovery sequences, rescaling diagnostics,
the mixed-growth rigidity probe and the annulus lower-bound diagnostic.

Fields live on the unit square. A StrainField is

    beta(x) = frame @ (shift * Id + A(x) + sum_i P_i(x - c_i) 1_{B_i}(x))

with A sampled on the (n+1)^2 vertex grid and each core patch P_i given in
closed form, amplitude * g(rho) * left @ Gamma(theta). Integrals use the
trapezoid rule for A over the square and polar quadrature on every patch
disk, with a graded radial rule inside the analytic core of radius 8 eps.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import RectBivariateSpline
from scipy.optimize import minimize_scalar

from .cell import angular_profile, isotropic_edge_strain
from .core import (BurgersLattice, DislocationMeasure, ElasticTensor, EnergyDensity,
                   dist_so2, mixed_growth, rotation)
from .envelope import EnvelopeProblem, QuadraticSelfEnergy, relaxed_density

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def log_scale(eps: float) -> float:
    if not 0 < eps < math.exp(-1):
        raise ValueError(f"eps must lie in (0, 1/e), got {eps}")
    return abs(math.log(eps))


def recovery_radius(eps: float, total_weight: float = 1.0) -> float:
    """r_eps = 1 / (2 sqrt(Lambda |log eps|))."""
    return 1.0 / (2.0 * math.sqrt(total_weight * log_scale(eps)))


def strain_profile(tensor: ElasticTensor, burgers) -> Callable:
    """Gamma(theta) with eta_0 = Gamma(x/|x|) / |x| for the given Burgers vector."""
    b = np.asarray(burgers, dtype=float)
    if tensor.is_isotropic():
        nu = tensor.poisson_ratio()

        def gamma(theta):
            theta = np.asarray(theta, dtype=float)
            e = np.stack([np.cos(theta), np.sin(theta)], -1)
            return isotropic_edge_strain(b, e, nu)
        return gamma
    return angular_profile(tensor, b)


# --------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class CorePatch:
    """Closed-form strain amplitude * g(rho) * left @ Gamma(theta) on a disk.

    g(rho) = 1/rho for a plain patch, (1 - rho^2/radius^2)/rho when truncated;
    the truncated form is eta - K~ of the recovery construction and is
    continuous across the patch boundary.
    """

    center: tuple[float, float]
    radius: float
    amplitude: float
    burgers: tuple[float, float]
    profile: Callable = field(compare=False, repr=False)
    truncated: bool = True
    left: np.ndarray = field(default_factory=lambda: np.eye(2), compare=False, repr=False)

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        g = self.amplitude / rho
        return g * (1.0 - (rho / self.radius) ** 2) if self.truncated else g

    def angular(self, theta) -> np.ndarray:
        return np.einsum("ij,...jk->...ik", self.left, self.profile(theta))

    def polar_values(self, rho, theta) -> np.ndarray:
        """Values on the tensor grid rho x theta, shape (len(rho), len(theta), 2, 2)."""
        return self.radial(rho)[:, None, None, None] * self.angular(theta)[None]

    def __call__(self, points) -> np.ndarray:
        y = np.asarray(points, dtype=float) - np.asarray(self.center)
        rho = np.hypot(y[..., 0], y[..., 1])
        inside = rho < self.radius
        out = np.zeros(y.shape[:-1] + (2, 2))
        if np.any(inside):
            r = rho[inside]
            th = np.arctan2(y[inside][:, 1], y[inside][:, 0])
            out[inside] = self.radial(r)[:, None, None] * self.angular(th)
        return out

    @property
    def atom(self) -> np.ndarray:
        """Weight of the point part of the curl."""
        return self.amplitude * (self.left @ np.asarray(self.burgers, dtype=float))

    def boundary_jump(self, n: int = 256) -> float:
        if self.truncated:
            return 0.0
        th = 2 * np.pi * np.arange(n) / n
        return float(np.abs(self.angular(th)).max() * self.amplitude / self.radius)

    def counter_density(self, rho, theta) -> np.ndarray:
        """Distributed part of the curl of a truncated patch, -2 amp Gamma e_theta / r^2.

        Returned as the positive density mu~ of the construction (the curl is
        atom - mu~); shape (len(rho), len(theta), 2).
        """
        et = np.stack([-np.sin(theta), np.cos(theta)], -1)
        v = np.einsum("qij,qj->qi", self.angular(theta), et) * (2 * self.amplitude / self.radius ** 2)
        return np.broadcast_to(v[None], (len(np.atleast_1d(rho)),) + v.shape)

    def counter_density_at(self, points) -> np.ndarray:
        """mu~ density at arbitrary points, zero outside the disk."""
        y = np.asarray(points, dtype=float) - np.asarray(self.center)
        rho = np.hypot(y[..., 0], y[..., 1])
        inside = rho < self.radius
        out = np.zeros(y.shape[:-1] + (2,))
        if np.any(inside):
            th = np.arctan2(y[inside][:, 1], y[inside][:, 0])
            out[inside] = self.counter_density(np.zeros(1), th)[0]
        return out

    def scaled(self, factor: float, left=None) -> "CorePatch":
        new_left = self.left if left is None else np.asarray(left) @ self.left
        return CorePatch(self.center, self.radius, self.amplitude * factor, self.burgers,
                         self.profile, self.truncated, new_left)


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n + 1, 1.0 / n)
    w[[0, -1]] *= 0.5
    return w


@dataclass(frozen=True)
class StrainField:
    """beta = frame @ (shift Id + A + patches) on the unit square."""

    samples: np.ndarray
    patches: tuple[CorePatch, ...] = ()
    frame: np.ndarray = field(default_factory=lambda: np.eye(2))
    shift: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.samples, dtype=float)
        if A.ndim != 4 or A.shape[0] != A.shape[1] or A.shape[2:] != (2, 2) or A.shape[0] < 3:
            raise ValueError("samples must have shape (n+1, n+1, 2, 2)")
        object.__setattr__(self, "samples", A)
        object.__setattr__(self, "frame", np.asarray(self.frame, dtype=float))
        object.__setattr__(self, "patches", tuple(self.patches))
        self.check_layout()

    @classmethod
    def from_function(cls, func, n: int, **kw) -> "StrainField":
        x = np.linspace(0.0, 1.0, n + 1)
        X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)
        return cls(np.asarray(func(X), dtype=float), **kw)

    @classmethod
    def constant(cls, matrix, n: int = 32) -> "StrainField":
        M = np.asarray(matrix, dtype=float)
        return cls(np.broadcast_to(M, (n + 1, n + 1, 2, 2)).copy())

    @property
    def n(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    def check_layout(self, tol: float = 1e-12) -> None:
        """Patches must be disjoint disks inside the square."""
        for p in self.patches:
            c = np.asarray(p.center)
            if np.any(c - p.radius < -tol) or np.any(c + p.radius > 1 + tol):
                raise ValueError(f"grid/patch inconsistency: patch at {p.center} leaves the square")
        if len(self.patches) > 1:
            from scipy.spatial import cKDTree
            c = np.array([p.center for p in self.patches])
            rmax = max(p.radius for p in self.patches)
            for i, j in cKDTree(c).query_pairs(2 * rmax):
                if np.linalg.norm(c[i] - c[j]) < self.patches[i].radius + self.patches[j].radius - tol:
                    raise ValueError("grid/patch inconsistency: patches overlap")

    @cached_property
    def _splines(self):
        x = self.nodes
        k = 3 if self.n >= 3 else 1
        return [[RectBivariateSpline(x, x, self.samples[..., i, j], kx=k, ky=k) for j in range(2)]
                for i in range(2)]

    def grid_part(self, points) -> np.ndarray:
        """Interpolated A at arbitrary points."""
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        out = np.empty((len(flat), 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = self._splines[i][j].ev(flat[:, 0], flat[:, 1])
        return out.reshape(pts.shape[:-1] + (2, 2))

    def full(self, A) -> np.ndarray:
        """frame @ (shift Id + A)."""
        return np.einsum("ij,...jk->...ik", self.frame, A + self.shift * np.eye(2))

    def perturbation(self, points) -> np.ndarray:
        """A plus patch contributions at arbitrary points."""
        out = self.grid_part(points)
        for p in self.patches:
            out = out + p(points)
        return out

    def __call__(self, points) -> np.ndarray:
        return self.full(self.perturbation(points))

    def with_patches(self, patches) -> "StrainField":
        return StrainField(self.samples, tuple(patches), self.frame, self.shift)


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class PolarRule:
    """Radial and angular resolution of the patch quadrature."""

    n_theta: int = 128
    core_factor: float = 8.0
    core_nodes: int = 48
    panel_log: float = 1.0
    panel_nodes: int = 10
    core_power: float = 1.5

    def angles(self) -> np.ndarray:
        return 2 * np.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta

    def radii(self, r0: float, r1: float, eps: float, breaks: Sequence[float] = ()):
        """Nodes and weights for int_{r0}^{r1} f(rho) rho d rho.

        [0, 8 eps] is graded with rho = c u^m, m = 1/(2 - p), which removes the
        rho^(1-p) behaviour of p-growth integrands at the core; the rest is
        composite Gauss-Legendre in log rho.
        """
        x, w = np.polynomial.legendre.leggauss(self.core_nodes)
        xs, ws = np.polynomial.legendre.leggauss(self.panel_nodes)
        core = min(self.core_factor * eps, r1)
        cuts = sorted({float(b) for b in breaks if r0 < b < r1} | {r0, r1}
                      | ({core} if r0 < core < r1 else set()))
        nodes, weights = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if a == 0.0:
                m = 1.0 / (2.0 - min(self.core_power, 1.95))
                u = 0.5 * (x + 1)
                rho = b * u ** m
                nodes.append(rho)
                weights.append(0.5 * w * b * m * u ** (m - 1) * rho)
                continue
            la, lb = math.log(a), math.log(b)
            k = max(1, math.ceil((lb - la) / self.panel_log))
            edges = np.linspace(la, lb, k + 1)
            for s0, s1 in zip(edges[:-1], edges[1:]):
                s = 0.5 * (s1 - s0) * xs + 0.5 * (s1 + s0)
                rho = np.exp(s)
                nodes.append(rho)
                weights.append(0.5 * (s1 - s0) * ws * rho * rho)
        return np.concatenate(nodes), np.concatenate(weights)


@dataclass
class PointSet:
    """Values of beta at quadrature points with signed weights."""

    values: np.ndarray
    weights: np.ndarray

    def integrate(self, func) -> float:
        return float(np.dot(self.weights, func(self.values)))


def _disk_points(center, rho, theta):
    c = np.asarray(center, dtype=float)
    e = np.stack([np.cos(theta), np.sin(theta)], -1)
    return c + rho[:, None, None] * e[None]


def point_set(beta: StrainField, eps: float, rule: PolarRule | None = None,
              region: str = "all", cut: float | None = None) -> PointSet:
    """Quadrature points for nonlinear integrands of beta.

    region "all" covers the square, "inner" only the disks B_cut around the
    patch centres and "outer" the complement of those disks.
    """
    rule = rule or PolarRule()
    theta = rule.angles()
    dtheta = 2 * np.pi / rule.n_theta
    vals, wts = [], []
    if region in ("all", "outer"):
        w1 = _trapezoid_weights(beta.n)
        vals.append(beta.full(beta.samples).reshape(-1, 2, 2))
        wts.append(np.outer(w1, w1).ravel())
    for p in beta.patches:
        r_in = p.radius if cut is None else min(cut, p.radius)
        breaks = () if cut is None else (cut,)
        if region in ("all", "outer"):
            rho, w = rule.radii(0.0, p.radius, eps, breaks)
            pts = _disk_points(p.center, rho, theta)
            base = beta.grid_part(pts)
            full = base + p.polar_values(rho, theta)
            ww = np.repeat(w * dtheta, len(theta))
            if region == "outer":
                keep = np.repeat(rho >= r_in, len(theta))
                vals += [beta.full(full).reshape(-1, 2, 2)[keep], beta.full(base).reshape(-1, 2, 2)]
                wts += [ww[keep], -ww]
            else:
                vals += [beta.full(full).reshape(-1, 2, 2), beta.full(base).reshape(-1, 2, 2)]
                wts += [ww, -ww]
        else:
            rho, w = rule.radii(0.0, r_in, eps)
            pts = _disk_points(p.center, rho, theta)
            full = beta.grid_part(pts) + p.polar_values(rho, theta)
            vals.append(beta.full(full).reshape(-1, 2, 2))
            wts.append(np.repeat(w * dtheta, len(theta)))
    if not vals:
        return PointSet(np.zeros((0, 2, 2)), np.zeros(0))
    return PointSet(np.concatenate(vals), np.concatenate(wts))


def integrate(beta: StrainField, func, eps: float = 1e-3, rule: PolarRule | None = None) -> float:
    return point_set(beta, eps, rule).integrate(func)


# --------------------------------------------------------------------------
# weak curl against the Dirichlet sine basis e_kl = 2 sin(pi k x) sin(pi l y)


def _sines(k, x):
    return np.sin(np.pi * np.multiply.outer(k, x))


def _cosines(k, x):
    return np.cos(np.pi * np.multiply.outer(k, x))


def weak_curl(beta: StrainField, modes: int = 32, n_rho: int = 48, n_theta: int = 256) -> np.ndarray:
    """<curl beta, e_kl> for k, l = 1..modes, shape (2, modes, modes).

    Row-wise curl (d1 b_i2 - d2 b_i1) tested against e_kl equals
    int b_i1 d2 e_kl - b_i2 d1 e_kl, which is linear in beta: the grid part
    is integrated with the trapezoid rule, each patch over its own disk.
    """
    k = np.arange(1, modes + 1)
    x = beta.nodes
    w1 = _trapezoid_weights(beta.n)
    S = _sines(k, x) * w1
    C = _cosines(k, x) * w1
    A = beta.samples
    out = np.empty((2, modes, modes))
    for i in range(2):
        out[i] = 2 * np.pi * (S @ A[:, :, i, 0] @ C.T * k[None, :]
                              - k[:, None] * (C @ A[:, :, i, 1] @ S.T))
    xg, wg = np.polynomial.legendre.leggauss(n_rho)
    theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    for p in beta.patches:
        rho = 0.5 * p.radius * (xg + 1)
        w = np.repeat(0.5 * p.radius * wg * rho * (2 * np.pi / n_theta), n_theta)
        pts = _disk_points(p.center, rho, theta).reshape(-1, 2)
        vals = p.polar_values(rho, theta).reshape(-1, 2, 2)
        Sx, Cx = _sines(k, pts[:, 0]), _cosines(k, pts[:, 0])
        Sy, Cy = _sines(k, pts[:, 1]), _cosines(k, pts[:, 1])
        for i in range(2):
            out[i] += 2 * np.pi * ((Sx * (w * vals[:, i, 0])) @ Cy.T * k[None, :]
                                   - k[:, None] * ((Cx * (w * vals[:, i, 1])) @ Sy.T))
    return np.einsum("ij,jkl->ikl", beta.frame, out)


def measure_coefficients(measure: DislocationMeasure, modes: int, rotation_t=None) -> np.ndarray:
    """<R^T mu, e_kl> for an atomic measure."""
    k = np.arange(1, modes + 1)
    out = np.zeros((2, modes, modes))
    if len(measure):
        pts = measure.points
        W = measure.weights if rotation_t is None else measure.weights @ np.asarray(rotation_t).T
        Sx, Sy = _sines(k, pts[:, 0]), _sines(k, pts[:, 1])
        for i in range(2):
            out[i] = 2 * (Sx * W[:, i]) @ Sy.T
    return out


def uniform_coefficients(xi, modes: int) -> np.ndarray:
    """<xi dx, e_kl> on the unit square."""
    k = np.arange(1, modes + 1)
    s = (1 - np.cos(np.pi * k)) / (np.pi * k)
    return 2 * np.einsum("i,k,l->ikl", np.asarray(xi, dtype=float), s, s)


def dual_norm(coeffs: np.ndarray) -> float:
    """H^-1 norm from sine coefficients: one spectral Dirichlet Poisson solve."""
    modes = coeffs.shape[-1]
    k = np.arange(1, modes + 1)
    lam = np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)
    potential = coeffs / lam
    return float(math.sqrt(max(float(np.sum(coeffs * potential)), 0.0)))


def h_minus_one_residual(beta: StrainField, mu: DislocationMeasure, R=None, modes: int = 32) -> float:
    """Discrete H^-1 norm of curl beta - R^T mu."""
    Rt = None if R is None else np.asarray(R, dtype=float).T
    return dual_norm(weak_curl(beta, modes) - measure_coefficients(mu, modes, Rt))


def green_energy(point, modes: int = 32) -> float:
    """Truncated H^-1 energy of a unit atom at a point."""
    k = np.arange(1, modes + 1)
    s1 = np.sin(np.pi * k * point[0])
    s2 = np.sin(np.pi * k * point[1])
    lam = np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)
    return float(np.sum((2 * np.outer(s1, s2)) ** 2 / lam))


# --------------------------------------------------------------------------
# energies


@dataclass
class EnergyBreakdown:
    total: float
    outside: float
    inside: float
    cut_radius: float
    core: float
    quadratic_outside: float
    admissible: bool = True
    reason: str = ""

    @property
    def quadratic_model_error(self) -> float:
        if self.quadratic_outside == 0:
            return 0.0
        return abs(self.outside - self.quadratic_outside) / abs(self.quadratic_outside)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("total", "outside", "inside", "cut_radius", "core",
                                           "quadratic_outside", "admissible", "reason")}
        d["quadratic_model_error"] = self.quadratic_model_error
        return d


def curl_defect(beta: StrainField, mu: DislocationMeasure, modes: int = 16) -> float:
    """Relative H^-1 mismatch between curl beta and mu."""
    d = dual_norm(weak_curl(beta, modes) - measure_coefficients(mu, modes))
    scale = max(dual_norm(measure_coefficients(mu, modes)), mu.eps)
    return d / scale


def energy_breakdown(mu: DislocationMeasure, beta: StrainField, density: EnergyDensity, eps: float,
                     lattice: BurgersLattice | None = None, alpha: float = 0.5,
                     rule: PolarRule | None = None, tensor: ElasticTensor | None = None,
                     curl_tol: float = 1e-2) -> EnergyBreakdown:
    """E_eps with its split at radius eps^alpha around the dislocations."""
    L = log_scale(eps)
    problems = mu.violations(lattice)
    if not problems:
        cd = curl_defect(beta, mu)
        if cd > curl_tol:
            problems = [f"curl beta differs from mu (relative H^-1 defect {cd:.3g})"]
    if problems:
        inf = math.inf
        return EnergyBreakdown(inf, inf, inf, eps ** alpha, inf, inf, False, "; ".join(problems))
    rule = rule or PolarRule(core_power=density.p)
    scale = 1.0 / (eps * L) ** 2
    cut = eps ** alpha
    outer = point_set(beta, eps, rule, "outer", cut)
    inner = point_set(beta, eps, rule, "inner", cut)
    core = point_set(beta, eps, rule, "inner", rule.core_factor * eps)
    tensor = tensor or ElasticTensor.reference()
    rt = beta.frame.T

    def quad(F):
        G = np.einsum("ij,...jk->...ik", rt, F) - np.eye(2)
        return 0.5 * tensor.quadratic(G)

    e_out = outer.integrate(density) * scale
    e_in = inner.integrate(density) * scale
    return EnergyBreakdown(e_out + e_in, e_out, e_in, cut, core.integrate(density) * scale,
                           outer.integrate(quad) * scale)


def eval_e_eps(mu: DislocationMeasure, beta: StrainField, density: EnergyDensity, eps: float,
               lattice: BurgersLattice | None = None, rule: PolarRule | None = None,
               curl_tol: float = 1e-2) -> float:
    """(eps |log eps|)^-2 int W(beta), or +inf when (mu, beta) is not admissible."""
    L = log_scale(eps)
    if mu.violations(lattice) or curl_defect(beta, mu) > curl_tol:
        return math.inf
    rule = rule or PolarRule(core_power=density.p)
    return integrate(beta, density, eps, rule) / (eps * L) ** 2


def envelope_density(lattice: BurgersLattice, psi, search_radius: float = 3.0) -> Callable:
    """phi(R, xi) from the relaxed-envelope linear program."""
    def phi(R, xi):
        prob = EnvelopeProblem(lattice, psi, np.asarray(R, dtype=float), search_radius)
        return relaxed_density(prob, xi, check_stability=False).value
    return phi


def eval_e_crit(mu, beta: StrainField, R, tensor: ElasticTensor, phi: Callable,
                curl_tol: float = 1e-6, modes: int = 16) -> float:
    """1/2 int C beta : beta + int phi(R, dmu/d|mu|) d|mu|, or +inf if curl beta != R^T mu.

    mu is either a constant density vector on the unit square or an atomic
    DislocationMeasure.
    """
    R = np.asarray(R, dtype=float)
    if beta.patches:
        return math.inf  # core patches are not square integrable
    if isinstance(mu, DislocationMeasure):
        target = measure_coefficients(mu, modes, R.T)
        defect_mass = sum(float(phi(R, w)) for w in mu.weights)
    else:
        xi = np.asarray(mu, dtype=float)
        target = uniform_coefficients(R.T @ xi, modes)
        defect_mass = float(phi(R, xi)) if np.any(xi) else 0.0
    d = dual_norm(weak_curl(beta, modes) - target)
    if d > curl_tol * max(dual_norm(target), 1.0):
        return math.inf
    elastic = 0.5 * integrate(beta, tensor.quadratic)
    return elastic + defect_mass


# --------------------------------------------------------------------------
# recovery sequence


def compatible_strain(xi) -> Callable:
    """beta(x) = xi (x) (-(x2 - 1/2), x1 - 1/2) / 2, whose curl is xi everywhere."""
    xi = np.asarray(xi, dtype=float)

    def beta(x):
        x = np.asarray(x, dtype=float)
        v = 0.5 * np.stack([-(x[..., 1] - 0.5), x[..., 0] - 0.5], -1)
        return np.einsum("i,...j->...ij", xi, v)
    return beta


def place_dislocations(weights: Sequence[float], eps: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Centres of the cells of side 1/m, m = floor(1/(2 r_eps)), and direction labels.

    Directions are dealt to the cells in proportion to their weights with a
    largest-remainder rule along the row-major cell order.
    """
    lam = np.asarray(weights, dtype=float)
    total = float(lam.sum())
    r = recovery_radius(eps, total)
    m = int(math.floor(1.0 / (2.0 * r) + 1e-12))
    if m * m < 4:
        raise ValueError(f"eps = {eps:g} too large: only {m * m} cells fit the square")
    c = (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(c, c, indexing="ij"), -1).reshape(-1, 2)
    share = lam / total
    labels = np.empty(len(pts), dtype=int)
    dealt = np.zeros(len(lam))
    for i in range(len(pts)):
        k = int(np.argmax(share * (i + 1) - dealt))
        labels[i] = k
        dealt[k] += 1
    return pts, labels, r


def _cell_average(pieces, n: int, sub: int = 6) -> np.ndarray:
    """Averages of a sum of compactly supported densities over the dual cells
    of the interior vertices.

    pieces holds (density, (x0, x1, y0, y1)) pairs; each density is only
    evaluated on the dual cells meeting its bounding box.
    """
    h = 1.0 / n
    out = np.zeros((n - 1, n - 1, 2))
    off = (np.arange(sub) + 0.5) / sub - 0.5
    for func, (x0, x1, y0, y1) in pieces:
        i0, i1 = max(1, int(math.floor(x0 / h - 0.5))), min(n - 1, int(math.ceil(x1 / h + 0.5)))
        j0, j1 = max(1, int(math.floor(y0 / h - 0.5))), min(n - 1, int(math.ceil(y1 / h + 0.5)))
        if i1 < i0 or j1 < j0:
            continue
        xs = (np.arange(i0, i1 + 1)[:, None] + off[None, :]).ravel() * h
        ys = (np.arange(j0, j1 + 1)[:, None] + off[None, :]).ravel() * h
        P = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
        vals = func(P).reshape(i1 - i0 + 1, sub, j1 - j0 + 1, sub, 2).mean(axis=(1, 3))
        out[i0 - 1:i1, j0 - 1:j1] += vals
    return out


def dirichlet_poisson(source: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral solve of -Lap w = f, w = 0 on the unit square.

    source holds f at the interior vertices, shape (n-1, n-1, c). Returns w
    and grad w at all (n+1)^2 vertices, shapes (n+1, n+1, c) and (n+1, n+1, c, 2).
    """
    n = source.shape[0] + 1
    h = 1.0 / n
    k = np.pi * np.arange(1, n)
    lam = k[:, None] ** 2 + k[None, :] ** 2
    coef = sfft.dstn(source, type=1, axes=(0, 1)) * h * h / lam[..., None]
    w = np.zeros((n + 1, n + 1) + source.shape[2:])
    w[1:-1, 1:-1] = sfft.dstn(coef, type=1, axes=(0, 1)) / 4
    grad = np.zeros(w.shape + (2,))
    # d1 w: cosine series in x (evaluated at all vertices), sine series in y
    d = np.pad(coef * k[:, None, None], ((1, 1), (0, 0), (0, 0)))
    grad[:, 1:-1, :, 0] = sfft.dst(sfft.dct(d, type=1, axis=0), type=1, axis=1) / 4
    d = np.pad(coef * k[None, :, None], ((0, 0), (1, 1), (0, 0)))
    grad[1:-1, :, :, 1] = sfft.dst(sfft.dct(d, type=1, axis=1), type=1, axis=0) / 4
    return w, grad


@dataclass
class RecoveryStep:
    eps: float
    r_eps: float
    total_weight: float
    decomposition: list
    measure: DislocationMeasure
    strain: StrainField
    labels: np.ndarray
    w: np.ndarray
    beta_tilde: np.ndarray
    target: Callable = field(repr=False)
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    seconds: float = 0.0

    @property
    def log_eps(self) -> float:
        return log_scale(self.eps)

    def count_ratios(self) -> np.ndarray:
        """|mu_j^k|(Omega) / |log eps| for each direction k."""
        counts = np.bincount(self.labels, minlength=len(self.decomposition))
        return counts / self.log_eps

    def ball_masses(self, n_rho: int = 32, n_theta: int = 256) -> np.ndarray:
        """mu~(B_r(x_i)) per ball, to compare with eps xi_i."""
        xg, wg = np.polynomial.legendre.leggauss(n_rho)
        theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        out = []
        for p in self.strain.patches:
            rho = 0.5 * p.radius * (xg + 1)
            dens = p.counter_density(rho, theta)
            w = 0.5 * p.radius * wg * rho * (2 * np.pi / n_theta)
            out.append(self.R @ np.einsum("r,rqi->i", w, dens))
        return np.array(out)

    def tilde_coefficients(self, modes: int = 32, n_rho: int = 48, n_theta: int = 256) -> np.ndarray:
        """<R^T mu~, e_kl> by polar quadrature over the balls."""
        k = np.arange(1, modes + 1)
        xg, wg = np.polynomial.legendre.leggauss(n_rho)
        theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        out = np.zeros((2, modes, modes))
        for p in self.strain.patches:
            rho = 0.5 * p.radius * (xg + 1)
            dens = p.counter_density(rho, theta).reshape(-1, 2)
            w = np.repeat(0.5 * p.radius * wg * rho * (2 * np.pi / n_theta), n_theta)
            pts = _disk_points(p.center, rho, theta).reshape(-1, 2)
            Sx, Sy = _sines(k, pts[:, 0]), _sines(k, pts[:, 1])
            for i in range(2):
                out[i] += 2 * (Sx * (w * dens[:, i])) @ Sy.T
        return out

    def core_curl_defect(self, modes: int = 32) -> float:
        """Relative H^-1 mismatch of curl(eta - K~) against R^T(mu_j - mu~)."""
        core = StrainField(np.zeros_like(self.strain.samples), self.strain.patches)
        atoms = measure_coefficients(self.measure, modes, self.R.T)
        lhs = weak_curl(core, modes)
        rhs = atoms - self.tilde_coefficients(modes)
        return dual_norm(lhs - rhs) / dual_norm(atoms)

    def curl_defect(self, modes: int = 32) -> float:
        """Relative H^-1 mismatch of curl beta_j against mu_j."""
        return h_minus_one_residual(self.strain, self.measure, None, modes) / \
            dual_norm(measure_coefficients(self.measure, modes))

    def components(self) -> dict:
        """L^2 norms of the rescaled pieces eta - K~ (outside the cores) and beta~."""
        L = self.log_eps
        n = self.strain.n
        w1 = _trapezoid_weights(n)
        bt = np.sqrt(np.einsum("ij,ijkl->", np.outer(w1, w1), self.beta_tilde ** 2)) / (self.eps * L)
        return {"beta_tilde_l2": float(bt), "cells": int(len(self.labels)),
                "count_ratios": self.count_ratios().tolist()}


def build_recovery(xi, eps: float, tensor: ElasticTensor | None = None, R=None,
                   lattice: BurgersLattice | None = None, psi=None, target: Callable | None = None,
                   n: int = 256, decomposition=None, supersample: int = 6) -> RecoveryStep:
    """One step of the recovery sequence for mu = xi dx on the unit square.

    The optimal lattice splitting xi = sum lambda_k xi_k comes from the
    envelope unless given. Dislocations of Burgers vector eps xi_k sit at the
    centres of a square grid of cells of side >= 2 r_eps; around each one the
    fundamental strain of R^T xi_k is cut off smoothly inside B_{r_eps}
    (eta - K~), the counter-density mu~ is compensated by beta~ = -grad w J with
    -Lap w = eps|log eps| R^T xi - R^T mu~, w = 0 on the boundary, and

        beta_j = R (Id + eps |log eps| beta + eta - K~ + beta~).
    """
    t0 = time.perf_counter()
    tensor = tensor or ElasticTensor.reference()
    lattice = lattice or BurgersLattice()
    R = np.eye(2) if R is None else np.asarray(R, dtype=float)
    xi = np.asarray(xi, dtype=float)
    L = log_scale(eps)
    if decomposition is None:
        psi = psi or QuadraticSelfEnergy.from_tensor(tensor)
        sol = relaxed_density(EnvelopeProblem(lattice, psi, R), xi, check_stability=False)
        decomposition = sol.decomposition
    lam = [d[0] for d in decomposition]
    vecs = [np.asarray(d[1], dtype=float) for d in decomposition]
    pts, labels, r = place_dislocations(lam, eps)
    target = target or compatible_strain(R.T @ xi)
    profiles = [strain_profile(tensor, R.T @ v) for v in vecs]
    patches = tuple(CorePatch((float(x), float(y)), r, eps, tuple(R.T @ vecs[k]), profiles[k])
                    for (x, y), k in zip(pts, labels))
    measure = DislocationMeasure(pts, np.array([eps * vecs[k] for k in labels]), eps, r / 2)

    pieces = [(p.counter_density_at, (p.center[0] - r, p.center[0] + r, p.center[1] - r, p.center[1] + r))
              for p in patches]
    source = eps * L * (R.T @ xi) - _cell_average(pieces, n, supersample)
    w, grad = dirichlet_poisson(source)
    # beta~ rows are (-d2 w_i, d1 w_i), whose row-wise curl is Lap w_i
    beta_tilde = -np.einsum("...ij,jk->...ik", grad, _J)
    x = np.linspace(0.0, 1.0, n + 1)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)
    A = eps * L * target(X) + beta_tilde
    fld = StrainField(A, patches, R, 1.0)
    return RecoveryStep(eps, r, float(sum(lam)), list(decomposition), measure, fld, labels,
                        np.moveaxis(w, -1, 0), beta_tilde, target, R, time.perf_counter() - t0)


def rescaled_strain(beta: StrainField, R, eps: float) -> StrainField:
    """(R^T beta - Id) / (eps |log eps|) as a field."""
    R = np.asarray(R, dtype=float)
    s = 1.0 / (eps * log_scale(eps))
    M = R.T @ beta.frame
    if np.array_equal(M, np.eye(2)) and beta.shift == 1.0:
        samples = beta.samples * s
        patches = tuple(p.scaled(s) for p in beta.patches)
    else:
        samples = (np.einsum("ij,...jk->...ik", M, beta.samples + beta.shift * np.eye(2)) - np.eye(2)) * s
        patches = tuple(p.scaled(s, M) for p in beta.patches)
    return StrainField(samples, patches)


def pair(beta: StrainField, test: Callable, n_rho: int = 48, n_theta: int = 256) -> float:
    """int beta : Phi for a smooth matrix-valued test function Phi."""
    x = beta.nodes
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)
    w1 = _trapezoid_weights(beta.n)
    total = float(np.einsum("ij,ijkl,ijkl->", np.outer(w1, w1), beta.full(beta.samples), test(X)))
    xg, wg = np.polynomial.legendre.leggauss(n_rho)
    theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    for p in beta.patches:
        rho = 0.5 * p.radius * (xg + 1)
        w = 0.5 * p.radius * wg * rho * (2 * np.pi / n_theta)
        pts = _disk_points(p.center, rho, theta)
        vals = np.einsum("ij,rqjk->rqik", beta.frame, p.polar_values(rho, theta))
        total += float(np.einsum("r,rqij,rqij->", w, vals, test(pts)))
    return total


def default_tests() -> list[Callable]:
    """Five smooth matrix-valued test functions on the unit square, none
    orthogonal to the compatible strain of a first-axis Burgers vector."""
    def make(a, b, weight, M):
        M = np.asarray(M, dtype=float)

        def f(x):
            s = np.sin(np.pi * a * x[..., 0]) * np.sin(np.pi * b * x[..., 1]) * weight(x)
            return s[..., None, None] * M
        return f
    one = lambda x: 1.0
    return [make(1, 1, lambda x: 0.5 - x[..., 1], [[1, 0], [0, 0]]),
            make(1, 1, lambda x: x[..., 0] - 0.5, [[0, 1], [0, 0]]),
            make(1, 2, one, [[1, 0], [0, 0]]),
            make(2, 1, one, [[0, 1], [0, 0]]),
            make(1, 1, lambda x: x[..., 0] - x[..., 1], [[1, 1], [0, 0]])]


# --------------------------------------------------------------------------
# rigidity


@dataclass
class RigidityReport:
    theta: float
    lhs: float
    dist_term: float
    curl_mass: float
    p: float

    @property
    def rhs(self) -> float:
        return self.dist_term + self.curl_mass ** 2

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else math.inf)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "lhs": self.lhs, "dist_term": self.dist_term,
                "curl_mass": self.curl_mass, "rhs": self.rhs, "ratio": self.ratio, "p": self.p}


def curl_mass(beta: StrainField, n_rho: int = 32, n_theta: int = 256) -> float:
    """|curl beta|(Omega): patch atoms, their distributed counter-charge and the grid curl."""
    n = beta.n
    h = 1.0 / n
    A = np.einsum("ij,...jk->...ik", beta.frame, beta.samples)
    d1 = np.gradient(A[..., 1], h, axis=0)
    d2 = np.gradient(A[..., 0], h, axis=1)
    c = np.linalg.norm(d1 - d2, axis=-1)
    w1 = _trapezoid_weights(n)
    total = float(np.einsum("ij,ij->", np.outer(w1, w1), c))
    xg, wg = np.polynomial.legendre.leggauss(n_rho)
    theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    for p in beta.patches:
        total += float(np.linalg.norm(p.atom))
        if p.truncated:
            rho = 0.5 * p.radius * (xg + 1)
            w = 0.5 * p.radius * wg * rho * (2 * np.pi / n_theta)
            total += float(np.einsum("r,rq->", w, np.linalg.norm(p.counter_density(rho, theta), axis=-1)))
        else:
            et = np.stack([-np.sin(theta), np.cos(theta)], -1)
            line = np.einsum("qij,qj->qi", p.angular(theta), et) * p.amplitude / p.radius
            total += float(np.linalg.norm(line, axis=-1).sum() * p.radius * 2 * np.pi / n_theta)
    return total


def _rotation_objective(points: PointSet, p: float):
    def f(thetas):
        thetas = np.atleast_1d(thetas)
        out = np.empty(len(thetas))
        for i in range(0, len(thetas), 16):
            Rs = rotation(thetas[i:i + 16])
            diff = points.values[None] - Rs[:, None]
            t = np.sqrt(np.einsum("tqij,tqij->tq", diff, diff))
            out[i:i + 16] = mixed_growth(t, p) @ points.weights
        return out
    return f


def optimal_rotation_mixed(beta: StrainField, p: float, eps: float = 1e-3, n_grid: int = 256,
                           rule: PolarRule | None = None, mass: float | None = None) -> RigidityReport:
    """Minimise theta -> int |beta - R(theta)|^2 ^ |beta - R(theta)|^p.

    A uniform scan of n_grid angles picks the best bracket, golden-section
    search refines it. The right-hand side uses the curl mass of the field
    unless an atom mass is supplied.
    """
    rule = rule or PolarRule(core_power=p)
    pts = point_set(beta, eps, rule)
    f = _rotation_objective(pts, p)
    grid = 2 * np.pi * np.arange(n_grid) / n_grid
    vals = f(grid)
    i = int(np.argmin(vals))
    step = 2 * np.pi / n_grid
    a, b, c = grid[i] - step, grid[i], grid[i] + step
    res = minimize_scalar(lambda t: float(f(t)[0]), bracket=(a, b, c), method="golden",
                          tol=1e-12)
    theta, lhs = float(res.x), float(res.fun)
    if lhs > vals[i]:
        theta, lhs = float(grid[i]), float(vals[i])
    theta = math.remainder(theta, 2 * np.pi)
    dist_term = pts.integrate(lambda F: mixed_growth(dist_so2(F), p))
    m = curl_mass(beta) if mass is None else mass
    return RigidityReport(theta, max(lhs, 0.0), max(dist_term, 0.0), m, p)


def _smooth_gradient(rng: np.random.Generator, modes: int = 3) -> Callable:
    """grad u for a random trigonometric displacement u, scaled to max |grad u| = 1."""
    a = rng.normal(size=(2, modes, modes)) / (1 + np.arange(modes))[None, :, None] ** 2
    ph = rng.uniform(0, 2 * np.pi, size=(2, modes, modes))
    k = np.arange(1, modes + 1) * np.pi

    def raw(x):
        arg = (np.multiply.outer(x[..., 0], k)[..., :, None] + np.multiply.outer(x[..., 1], k)[..., None, :])
        c = np.cos(arg[..., None, :, :] + ph)  # (..., 2, m, l)
        g1 = np.einsum("...iml,iml,m->...i", c, a, k)
        g2 = np.einsum("...iml,iml,l->...i", c, a, k)
        return np.stack([g1, g2], -1)

    t = np.linspace(0, 1, 65)
    scale = np.linalg.norm(raw(np.stack(np.meshgrid(t, t, indexing="ij"), -1)), axis=(-2, -1)).max()
    return lambda x: raw(np.asarray(x, dtype=float)) / scale


@dataclass
class ProbeField:
    seed: int
    kind: str
    theta0: float
    strain: StrainField
    mass: float | None


def probe_field(seed: int, kind: str | None = None, n: int = 128, eps: float = 1e-2,
                tensor: ElasticTensor | None = None) -> ProbeField:
    """Seeded rigidity test field.

    Even seeds give curl-free perturbed rotations R0 (Id + t grad u), odd
    seeds a single truncated dislocation patch on top of a small gradient.
    """
    rng = np.random.default_rng(seed)
    kind = kind or ("gradient" if seed % 2 == 0 else "dislocation")
    theta0 = float(rng.uniform(-np.pi, np.pi))
    R0 = rotation(theta0)
    if kind == "rotation":
        return ProbeField(seed, kind, theta0, StrainField(np.zeros((n + 1, n + 1, 2, 2)), (), R0, 1.0), 0.0)
    grad = _smooth_gradient(rng)
    if kind == "gradient":
        t = float(rng.uniform(0.1, 2.0))
        fld = StrainField.from_function(lambda x: t * grad(x), n, frame=R0, shift=1.0)
        return ProbeField(seed, kind, theta0, fld, None)
    if kind == "dislocation":
        tensor = tensor or ElasticTensor.reference()
        t = float(rng.uniform(0.0, 0.05)) * eps
        center = tuple(float(v) for v in rng.uniform(0.4, 0.6, size=2))
        b = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])[rng.integers(3)]
        patch = CorePatch(center, 0.35, eps, tuple(b), strain_profile(tensor, b))
        fld = StrainField.from_function(lambda x: t * grad(x), n, patches=(patch,), frame=R0, shift=1.0)
        return ProbeField(seed, kind, theta0, fld, None)
    raise ValueError(f"unknown probe kind {kind!r}")


def rigidity_probe(seeds: Sequence[int], p: float = 1.5, n: int = 128, eps: float = 1e-2) -> list[dict]:
    rows = []
    for s in seeds:
        pf = probe_field(int(s), n=n, eps=eps)
        rep = optimal_rotation_mixed(pf.strain, p, eps=eps, mass=pf.mass)
        rows.append({"seed": int(s), "kind": pf.kind, "theta0": pf.theta0, **rep.to_dict()})
    return rows


# --------------------------------------------------------------------------
# annuli lower bound


def circulation_bound(a: float, b: float, burgers_eps: float, p: float) -> float:
    """int_a^b pi t (|c/t|^2 ^ |c/t|^p) dt with c = |eps xi| / (2 pi)."""
    c = burgers_eps / (2 * np.pi)
    if c == 0 or b <= a:
        return 0.0
    split = min(max(c, a), b)  # below t = c the p-branch is the smaller one
    low = math.pi * c ** p * (split ** (2 - p) - a ** (2 - p)) / (2 - p) if split > a else 0.0
    high = math.pi * c * c * math.log(b / split) if b > split else 0.0
    return low + high


@dataclass
class ShellRecord:
    k: int
    r_inner: float
    r_outer: float
    energy_w: float
    energy_mixed: float
    theta: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.energy_mixed >= self.bound * (1 - 1e-9)


def shell_count(eps: float, rho: float, delta: float, alpha: float) -> int:
    """floor(alpha |log eps|/|log delta| - |log rho|/|log delta|) + 1."""
    ld = abs(math.log(delta))
    return int(math.floor(alpha * abs(math.log(eps)) / ld - abs(math.log(rho)) / ld)) + 1


def liminf_shell_diagnostic(beta: StrainField, site, burgers, delta: float, alpha: float,
                            eps: float, rho: float, p: float = 1.5,
                            density: EnergyDensity | None = None,
                            n_rho: int = 16, n_theta: int = 256) -> list[ShellRecord]:
    """Energies on the annuli B_{delta^(k-1) rho} minus B_{delta^k rho} against the circulation bound.

    The mixed energy uses the best single rotation of each annulus, so the
    comparison is exactly the chain of inequalities used near each core.
    """
    site = np.asarray(site, dtype=float)
    if np.any(site - rho < 0) or np.any(site + rho > 1):
        raise ValueError("shells leave the unit square")
    density = density or EnergyDensity(p)
    b_eps = float(np.linalg.norm(burgers)) * eps
    K = shell_count(eps, rho, delta, alpha)
    xg, wg = np.polynomial.legendre.leggauss(n_rho)
    theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    out = []
    for k in range(1, K + 1):
        r1, r0 = delta ** (k - 1) * rho, delta ** k * rho
        s = 0.5 * (math.log(r1) - math.log(r0)) * xg + 0.5 * (math.log(r1) + math.log(r0))
        rr = np.exp(s)
        w = np.repeat(0.5 * (math.log(r1) - math.log(r0)) * wg * rr * rr * (2 * np.pi / n_theta), n_theta)
        vals = beta(_disk_points(site, rr, theta).reshape(-1, 2))
        ps = PointSet(vals, w)
        f = _rotation_objective(ps, p)
        grid = 2 * np.pi * np.arange(128) / 128
        g = f(grid)
        i = int(np.argmin(g))
        res = minimize_scalar(lambda t: float(f(t)[0]),
                              bracket=(grid[i] - grid[1], grid[i], grid[i] + grid[1]), method="golden")
        best = min(float(res.fun), float(g[i]))
        out.append(ShellRecord(k, r0, r1, ps.integrate(density), best, float(res.x),
                               circulation_bound(r0, r1, b_eps, p)))
    return out


# --------------------------------------------------------------------------
# Gamma-trend experiment


@dataclass
class TrendRecord:
    eps: float
    e_eps: float
    e_crit: float
    gap: float
    breakdown: dict
    diagnostics: dict
    seconds: float

    def to_dict(self) -> dict:
        return {"eps": self.eps, "E_eps": self.e_eps, "E_crit": self.e_crit, "gap": self.gap,
                "breakdown": self.breakdown, "diagnostics": self.diagnostics, "seconds": self.seconds}


@dataclass
class TrendFit:
    constant: float
    r_squared: float
    monotone: bool
    noise: float = 0.05

    def to_dict(self) -> dict:
        return {"C": self.constant, "r_squared": self.r_squared, "monotone": self.monotone,
                "noise": self.noise}


def fit_inverse_log(eps, gaps, noise: float = 0.05) -> TrendFit:
    """Least-squares gap ~ C / |log eps| and the monotonicity check along decreasing eps."""
    eps = np.asarray(eps, dtype=float)
    order = np.argsort(eps)[::-1]
    g = np.asarray(gaps, dtype=float)[order]
    x = 1.0 / np.abs(np.log(eps[order]))
    if not np.all(np.isfinite(g)):
        return TrendFit(math.inf, -math.inf, False, noise)
    C = float(x @ g / (x @ x))
    ss_res = float(np.sum((g - C * x) ** 2))
    ss_tot = float(np.sum((g - g.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    monotone = bool(np.all(g[1:] <= g[:-1] * (1 + noise)))
    return TrendFit(C, r2, monotone, noise)


def gamma_trend(xi=(1.0, 0.0), schedule=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6), p: float = 1.5,
                tensor: ElasticTensor | None = None, lattice: BurgersLattice | None = None,
                R=None, n: int = 256, alpha: float = 0.5, rule: PolarRule | None = None):
    """Recovery energies against the limit energy along an eps schedule."""
    tensor = tensor or ElasticTensor.reference()
    lattice = lattice or BurgersLattice()
    R = np.eye(2) if R is None else np.asarray(R, dtype=float)
    density = EnergyDensity(p)
    psi = QuadraticSelfEnergy.from_tensor(tensor)
    phi = envelope_density(lattice, psi)
    xi = np.asarray(xi, dtype=float)
    target = compatible_strain(R.T @ xi)
    limit_field = StrainField.from_function(target, n)
    e_crit = eval_e_crit(xi, limit_field, R, tensor, phi)
    records = []
    for eps in schedule:
        t0 = time.perf_counter()
        step = build_recovery(xi, eps, tensor, R, lattice, psi, target, n)
        br = energy_breakdown(step.measure, step.strain, density, eps, lattice, alpha, rule, tensor)
        diag = step.components()
        diag.update({"r_eps": step.r_eps, "curl_defect": step.curl_defect(16),
                     "admissible": br.admissible})
        gap = abs(br.total - e_crit) / e_crit
        records.append(TrendRecord(float(eps), br.total, e_crit, gap, br.to_dict(), diag,
                                   time.perf_counter() - t0))
    fit = fit_inverse_log([r.eps for r in records], [r.gap for r in records])
    return records, fit
