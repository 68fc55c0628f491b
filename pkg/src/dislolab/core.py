"""Shared domain types: Burgers lattice, elastic tensor, mixed-growth energy
density and dislocation measures, plus the elementary mixed-growth utilities.
"""
from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _check_exponent(p: float) -> None:
    if not 1.0 < p < 2.0:
        raise ValueError(f"growth exponent p must lie in (1, 2), got {p}")


def mixed_growth(t, p: float):
    """Return min(t**2, t**p), elementwise for arrays."""
    _check_exponent(p)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("mixed_growth is defined for t >= 0 only")
    out = np.where(t <= 1.0, t * t, t ** p)
    return out if out.ndim else float(out)


def mixed_triangle_ratio(a, b, p: float):
    """Ratio g(|a+b|) / (g(|a|) + g(|b|)) with g = mixed_growth.

    Vectors are taken along the last axis, so batches of pairs are evaluated at
    once. Returns 0 where a = b = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    top = mixed_growth(np.linalg.norm(a + b, axis=-1), p)
    bottom = mixed_growth(np.linalg.norm(a, axis=-1), p) + mixed_growth(np.linalg.norm(b, axis=-1), p)
    bottom = np.asarray(bottom)
    out = np.divide(top, bottom, out=np.zeros_like(bottom, dtype=float), where=bottom > 0)
    return out if out.ndim else float(out)


def decompose_threshold(f, g, k: float):
    """Split f + g into a part bounded by k and a part that is 0 or above k."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    if k <= 0:
        raise ValueError("threshold k must be positive")
    if np.any(f < 0) or np.any(g < 0):
        raise ValueError("decompose_threshold expects nonnegative fields")
    total = f + g
    low = total <= k
    return np.where(low, total, 0.0), np.where(low, 0.0, total)


def rotation(theta) -> np.ndarray:
    """Rotation matrix (or stack of them) for angle(s) theta."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def conformal_parts(F) -> tuple[np.ndarray, np.ndarray]:
    """Split 2x2 matrices into conformal and anticonformal coordinates.

    F = [[a0 + b0, b1 - a1], [a1 + b1, a0 - b0]]; |F|^2 = 2|a|^2 + 2|b|^2.
    """
    F = np.asarray(F, dtype=float)
    a = np.stack([(F[..., 0, 0] + F[..., 1, 1]) / 2, (F[..., 1, 0] - F[..., 0, 1]) / 2], -1)
    b = np.stack([(F[..., 0, 0] - F[..., 1, 1]) / 2, (F[..., 0, 1] + F[..., 1, 0]) / 2], -1)
    return a, b


def singular_values_2x2(F) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form singular values sigma1 >= sigma2 >= 0 of 2x2 matrices."""
    a, b = conformal_parts(F)
    ra = np.linalg.norm(a, axis=-1)
    rb = np.linalg.norm(b, axis=-1)
    return ra + rb, np.abs(ra - rb)


def dist_so2(F):
    """Frobenius distance from F to SO(2).

    With singular values s1 >= s2 the nearest rotation gives
    dist^2 = (s1 - 1)^2 + (sign(det F) s2 - 1)^2, which covers det F <= 0 too.
    """
    F = np.asarray(F, dtype=float)
    s1, s2 = singular_values_2x2(F)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    s2 = np.where(det < 0, -s2, s2)
    out = np.sqrt((s1 - 1.0) ** 2 + (s2 - 1.0) ** 2)
    return out if out.ndim else float(out)


def nearest_rotation_angle(F):
    """Angle of the rotation closest to F (polar factor for det F > 0)."""
    a, _ = conformal_parts(F)
    out = np.arctan2(a[..., 1], a[..., 0])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class EnergyDensity:
    """Reference mixed-growth density W(F) = h(dist(F, SO(2))).

    h(t) = t^2/2 for t <= 1 and t^p/p + 1/2 - 1/p beyond, which is C^1 at t = 1.
    The growth sandwich c (d^2 ^ d^p) <= W <= C (d^2 ^ d^p) holds with
    c = 1/2 and C = 1/p.
    """

    p: float = 1.5

    def __post_init__(self):
        _check_exponent(self.p)

    @property
    def lower_constant(self) -> float:
        return 0.5

    @property
    def upper_constant(self) -> float:
        return 1.0 / self.p

    def profile(self, t):
        t = np.asarray(t, dtype=float)
        p = self.p
        far = np.maximum(t, 1.0) ** p / p + 0.5 - 1.0 / p
        out = np.where(t <= 1.0, 0.5 * t * t, far)
        return out if out.ndim else float(out)

    def __call__(self, F):
        return self.profile(dist_so2(F))


def energy_w(F, density: EnergyDensity):
    return density(F)


@dataclass(frozen=True)
class ElasticTensor:
    """Fourth-order tensor acting on 2x2 matrices, stored densely."""

    entries: np.ndarray

    def __post_init__(self):
        C = np.array(self.entries, dtype=float).reshape(2, 2, 2, 2)
        C.setflags(write=False)
        object.__setattr__(self, "entries", C)
        if not np.allclose(C, C.transpose(2, 3, 0, 1), atol=1e-12):
            raise ValueError("elastic tensor lacks major symmetry")

    @classmethod
    def from_lame(cls, lam: float, mu: float) -> "ElasticTensor":
        d = np.eye(2)
        C = (lam * np.einsum("ij,kl->ijkl", d, d)
             + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))
        return cls(C)

    @classmethod
    def reference(cls) -> "ElasticTensor":
        """Hessian of the reference density at the identity: CG:G = |sym G|^2."""
        return cls.from_lame(0.0, 0.5)

    def apply(self, G) -> np.ndarray:
        return np.einsum("ijkl,...kl->...ij", self.entries, np.asarray(G, dtype=float))

    def quadratic(self, G):
        G = np.asarray(G, dtype=float)
        out = np.einsum("...ij,...ij->...", self.apply(G), G)
        return out if out.ndim else float(out)

    def is_isotropic(self, tol: float = 1e-12) -> bool:
        lam, mu = self.lame()
        return np.allclose(self.entries, ElasticTensor.from_lame(lam, mu).entries, atol=tol)

    def lame(self) -> tuple[float, float]:
        """Lame pair read off the entries (meaningful when isotropic)."""
        C = self.entries
        return float(C[0, 0, 1, 1]), float(C[0, 1, 0, 1])

    def poisson_ratio(self) -> float:
        """Plane-strain Poisson ratio lambda / (2 (lambda + mu))."""
        lam, mu = self.lame()
        return lam / (2.0 * (lam + mu))


def hessian_at_identity(density: EnergyDensity) -> ElasticTensor:
    """Second derivative of W at Id.

    Near Id the density equals dist^2/2 = (|a| - 1)^2 + |b|^2 in conformal
    coordinates, whose Hessian is the quadratic form |sym G|^2 for every p.
    """
    return ElasticTensor.reference()


@dataclass(frozen=True)
class BurgersLattice:
    b1: tuple[float, float] = (1.0, 0.0)
    b2: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "b1", tuple(float(v) for v in self.b1))
        object.__setattr__(self, "b2", tuple(float(v) for v in self.b2))
        if abs(np.linalg.det(self.basis)) < 1e-12:
            raise ValueError("lattice basis vectors are linearly dependent")

    @property
    def basis(self) -> np.ndarray:
        """Basis vectors as columns."""
        return np.array([self.b1, self.b2]).T

    def coordinates(self, v) -> np.ndarray:
        return np.linalg.solve(self.basis, np.asarray(v, dtype=float).T).T

    def contains(self, v, tol: float = 1e-9) -> bool:
        c = self.coordinates(v)
        return bool(np.all(np.abs(c - np.round(c)) <= tol))

    def vectors_within(self, radius: float, include_zero: bool = False) -> np.ndarray:
        """All lattice vectors with norm <= radius, sorted by (norm, x, y)."""
        B = self.basis
        # coefficient bound from the smallest singular value of the basis
        smin = np.linalg.svd(B, compute_uv=False)[-1]
        kmax = int(math.ceil(radius / smin)) + 1
        k = np.arange(-kmax, kmax + 1)
        c1, c2 = np.meshgrid(k, k, indexing="ij")
        coeffs = np.stack([c1.ravel(), c2.ravel()], -1)
        vecs = coeffs @ B.T
        norms = np.linalg.norm(vecs, axis=1)
        keep = norms <= radius + 1e-12
        if not include_zero:
            keep &= norms > 0
        vecs = vecs[keep]
        vecs = np.where(np.abs(vecs) < 1e-14, 0.0, vecs)
        order = np.lexsort((vecs[:, 1], vecs[:, 0], np.round(np.linalg.norm(vecs, axis=1), 12)))
        return vecs[order]

    def min_norm(self) -> float:
        """Shortest nonzero lattice vector length."""
        r = max(np.linalg.norm(self.b1), np.linalg.norm(self.b2))
        return float(np.linalg.norm(self.vectors_within(r)[0]))


@dataclass(frozen=True)
class DislocationMeasure:
    """Finite sum of atoms eps * xi_i * delta_{x_i} on a rectangle."""

    points: np.ndarray
    weights: np.ndarray
    eps: float
    rho: float
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1, 2)
        if len(pts) != len(w):
            raise ValueError("points and weights differ in length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, eps: float, rho: float, domain=(0.0, 1.0, 0.0, 1.0)) -> "DislocationMeasure":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), eps, rho, domain)

    def __len__(self) -> int:
        return len(self.points)

    def total_variation(self) -> float:
        return float(np.linalg.norm(self.weights, axis=1).sum())

    def total_weight(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def violations(self, lattice: BurgersLattice | None = None, tol: float = 1e-9) -> list[str]:
        """Reasons why the measure is not admissible (empty when it is)."""
        out = []
        x0, x1, y0, y1 = self.domain
        p, r = self.points, self.rho
        inside = (p[:, 0] - r >= x0 - tol) & (p[:, 0] + r <= x1 + tol) \
            & (p[:, 1] - r >= y0 - tol) & (p[:, 1] + r <= y1 + tol)
        if not inside.all():
            out.append(f"{int((~inside).sum())} core balls leave the domain")
        if len(p) > 1:
            from scipy.spatial import cKDTree
            pairs = cKDTree(p).query_pairs(2 * r * (1 - 1e-12))
            if pairs:
                out.append(f"{len(pairs)} atom pairs closer than 2*rho = {2 * r:g}")
        if lattice is not None and len(p):
            xi = self.weights / self.eps
            if not lattice.contains(xi, tol=1e-6):
                out.append("some weights are not eps times a lattice vector")
            if np.any(np.linalg.norm(xi, axis=1) < 1e-12):
                out.append("zero Burgers vector among the atoms")
        return out

    def is_admissible(self, lattice: BurgersLattice | None = None) -> bool:
        return not self.violations(lattice)

    def validate(self, lattice: BurgersLattice | None = None) -> "DislocationMeasure":
        problems = self.violations(lattice)
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "xi1", "xi2"])
            for (a, b), (c, d) in zip(self.points, self.weights):
                w.writerow([f"{v:.17g}" for v in (a, b, c, d)])

    @classmethod
    def from_csv(cls, path, eps: float, rho: float, domain=(0.0, 1.0, 0.0, 1.0)) -> "DislocationMeasure":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.size == 0:
            return cls.empty(eps, rho, domain)
        return cls(rows[:, :2], rows[:, 2:4], eps, rho, domain)


def default_rho(eps: float) -> float:
    return 1.0 / abs(math.log(eps))


@dataclass(frozen=True)
class MixedGrowthParams:
    """Growth exponent, core scale and the separation rule rho(eps).

    The default rule rho = eps^s0 / |log eps| with s0 = 0 satisfies both
    rho / eps^s -> infinity for every s in (0, 1) and |log eps| rho^2 -> 0.
    """

    p: float = 1.5
    eps: float = 1e-3
    rho_exponent: float = 0.0
    rho_rule: Callable[[float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_exponent(self.p)
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    def rho(self, eps: float | None = None) -> float:
        e = self.eps if eps is None else eps
        if self.rho_rule is not None:
            return float(self.rho_rule(e))
        return e ** self.rho_exponent / abs(math.log(e))

    def check_rho_rule(self, schedule, s_values=(0.25, 0.5, 0.75, 0.9)) -> dict:
        """Numerical check of the two separation-scale limits on a schedule.

        Both monitored sequences must be monotone along the decreasing
        schedule: rho/eps^s increasing, |log eps| rho^2 decreasing.
        """
        eps = np.sort(np.asarray(schedule, dtype=float))[::-1]
        rho = np.array([self.rho(e) for e in eps])
        ratios = {s: rho / eps ** s for s in s_values}
        logmass = np.abs(np.log(eps)) * rho ** 2
        grows = all(bool(np.all(np.diff(r) > 0)) for r in ratios.values())
        shrinks = bool(np.all(np.diff(logmass) < 0))
        return {"separation_grows": grows, "log_mass_vanishes": shrinks,
                "ratios": {s: r.tolist() for s, r in ratios.items()},
                "log_mass": logmass.tolist()}


def load_config(path) -> dict:
    """Read a TOML config; missing file raises FileNotFoundError."""
    with open(Path(path), "rb") as fh:
        return tomllib.load(fh)


def lattice_from_config(cfg: dict) -> BurgersLattice:
    sec = cfg.get("lattice", {})
    kind = sec.get("kind", "square")
    if kind == "square":
        return BurgersLattice()
    if kind == "triangular":
        return BurgersLattice((1.0, 0.0), (0.5, math.sqrt(3) / 2))
    if kind == "custom":
        return BurgersLattice(tuple(sec["b1"]), tuple(sec["b2"]))
    raise ValueError(f"unknown lattice kind {kind!r}")


def tensor_from_config(cfg: dict) -> ElasticTensor:
    sec = cfg.get("elastic", {})
    if "entries" in sec:
        return ElasticTensor(np.array(sec["entries"], dtype=float))
    return ElasticTensor.from_lame(float(sec.get("lambda", 0.0)), float(sec.get("mu", 0.5)))


def density_from_config(cfg: dict) -> EnergyDensity:
    return EnergyDensity(float(cfg.get("energy", {}).get("p", 1.5)))
