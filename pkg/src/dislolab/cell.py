"""Dislocation self-energy cell problems on annuli.

The admissible strains with circulation xi around the origin are written as
eta = eta_star + grad u with the carrier eta_star = xi (x) x_perp / (2 pi |x|^2)
and a single-valued displacement u. In log-polar coordinates s = log r,

    eta = (Gamma_star(theta) + d_s u (x) e_r + d_theta u (x) e_theta) / r,

so the energy 1/2 int C eta : eta dx becomes 1/2 int int C(...):(...) ds dtheta,
which no longer depends on the position of the annulus along s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ElasticTensor

_GAUSS = np.array([-1.0, 1.0]) / math.sqrt(3.0)


def _frame(theta):
    theta = np.asarray(theta, dtype=float)
    er = np.stack([np.cos(theta), np.sin(theta)], -1)
    et = np.stack([-np.sin(theta), np.cos(theta)], -1)
    return er, et


def carrier_profile(xi, theta) -> np.ndarray:
    """Gamma_star(theta) = xi (x) e_theta / (2 pi), so eta_star = Gamma_star / r."""
    _, et = _frame(theta)
    return np.einsum("i,...j->...ij", np.asarray(xi, dtype=float), et) / (2 * np.pi)


def isotropic_edge_strain(xi, x, poisson: float) -> np.ndarray:
    """Displacement gradient of the straight dislocation in an isotropic medium.

    Volterra solution for Burgers vector b e_1, rotated to xi; rows are
    gradients of the displacement components, so the circulation on a
    counterclockwise circle equals xi.
    """
    xi = np.asarray(xi, dtype=float)
    x = np.asarray(x, dtype=float)
    b = float(np.hypot(*xi))
    if b == 0:
        return np.zeros(x.shape[:-1] + (2, 2))
    c_, s_ = xi / b
    Q = np.array([[c_, -s_], [s_, c_]])
    y = x @ Q  # coordinates in the frame where the Burgers vector is e_1
    X, Y = y[..., 0], y[..., 1]
    r2 = X * X + Y * Y
    c = b / (4 * np.pi * (1 - poisson) * r2 * r2)
    t = Y * Y - X * X
    G = np.empty(x.shape[:-1] + (2, 2))
    G[..., 0, 0] = c * Y * (t - 2 * (1 - poisson) * r2)
    G[..., 0, 1] = -c * X * (t - 2 * (1 - poisson) * r2)
    G[..., 1, 0] = c * X * (-t - 2 * (1 - poisson) * r2)
    G[..., 1, 1] = c * Y * (-t + 2 * poisson * r2)
    return np.einsum("ij,...jk,lk->...il", Q, G, Q)


@dataclass(frozen=True)
class AngularProfile:
    """Gamma(theta) = Gamma_star + a (x) e_r + w'(theta) (x) e_theta for one xi.

    w is a trigonometric polynomial; a and w minimize the energy per unit log r.
    """

    xi: tuple[float, float]
    drift: np.ndarray
    cos_coeffs: np.ndarray   # shape (K, 2): coefficients of -k sin(k theta) in w'
    sin_coeffs: np.ndarray   # shape (K, 2): coefficients of k cos(k theta) in w'

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        er, et = _frame(theta)
        k = np.arange(1, len(self.cos_coeffs) + 1)
        kt = np.multiply.outer(theta, k)
        dw = (-np.sin(kt) * k) @ self.cos_coeffs + (np.cos(kt) * k) @ self.sin_coeffs
        return (carrier_profile(self.xi, theta)
                + np.einsum("i,...j->...ij", self.drift, er)
                + np.einsum("...i,...j->...ij", dw, et))


def _angular_solve(entries: bytes, xi: tuple[float, float], modes: int) -> AngularProfile:
    C = np.frombuffer(entries).reshape(2, 2, 2, 2)
    nq = 4 * modes + 16
    theta = 2 * np.pi * np.arange(nq) / nq
    er, et = _frame(theta)
    k = np.arange(1, modes + 1)
    kt = np.multiply.outer(theta, k)
    e = np.eye(2)
    basis = [np.einsum("i,qj->qij", e[i], er) for i in range(2)]
    for trig in (-np.sin(kt) * k, np.cos(kt) * k):
        for m in range(modes):
            for i in range(2):
                basis.append(np.einsum("q,i,qj->qij", trig[:, m], e[i], et))
    B = np.stack(basis)  # (n, q, 2, 2)
    CB = np.einsum("ijkl,nqkl->nqij", C, B)
    A = np.einsum("nqij,mqij->nm", CB, B) / nq
    g = np.einsum("nqij,qij->n", CB, carrier_profile(xi, theta)) / nq
    z = np.linalg.lstsq(A, -g, rcond=1e-13)[0]
    drift = z[:2]
    rest = z[2:].reshape(2, modes, 2)
    return AngularProfile(tuple(xi), drift, rest[0], rest[1])


@lru_cache(maxsize=256)
def _cached_profile(entries: bytes, xi: tuple[float, float], modes: int) -> AngularProfile:
    return _angular_solve(entries, xi, modes)


def angular_profile(tensor: ElasticTensor, xi, modes: int = 24) -> AngularProfile:
    xi = tuple(float(v) for v in xi)
    return _cached_profile(np.ascontiguousarray(tensor.entries).tobytes(), xi, modes)


def fundamental_strain(tensor: ElasticTensor, xi, x) -> np.ndarray:
    """eta_0(x) = Gamma_xi(x/|x|) / |x| with curl eta_0 = xi delta_0, div C eta_0 = 0.

    Isotropic tensors use the closed form, others the cached angular solve.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("the fundamental strain is singular at the origin")
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return np.zeros(x.shape[:-1] + (2, 2))
    if tensor.is_isotropic():
        return isotropic_edge_strain(xi, x, tensor.poisson_ratio())
    prof = angular_profile(tensor, xi)
    return prof(np.arctan2(x[..., 1], x[..., 0])) / r[..., None, None]


def prelog_quadrature(tensor: ElasticTensor, xi, n: int = 4096) -> float:
    """1/2 int_0^{2pi} C Gamma : Gamma dtheta for eta_0 = Gamma / r.

    Equals the energy of eta_0 on any annulus (delta, 1) divided by |log delta|.
    """
    theta = 2 * np.pi * (np.arange(n) + 0.5) / n
    x = np.stack([np.cos(theta), np.sin(theta)], -1)
    G = fundamental_strain(tensor, xi, x)
    return float(0.5 * tensor.quadratic(G).mean() * 2 * np.pi)


def circulation(strain_fn, radius: float, n: int = 2048, center=(0.0, 0.0)) -> np.ndarray:
    """Counterclockwise line integral of eta . tau over a circle."""
    theta = 2 * np.pi * np.arange(n) / n
    er, et = _frame(theta)
    pts = np.asarray(center) + radius * er
    eta = strain_fn(pts)
    return np.einsum("qij,qj->i", eta, et) * (2 * np.pi * radius / n)


@dataclass(frozen=True)
class CellProblem:
    xi: tuple[float, float]
    delta: float
    r2: float = 1.0
    tensor: ElasticTensor = field(default_factory=ElasticTensor.reference)
    n_theta: int = 128
    ds: float | None = None
    tol: float = 1e-13
    method: str = "cg"

    def __post_init__(self):
        if not 0 < self.delta < self.r2:
            raise ValueError("need 0 < delta < r2")
        if self.n_theta < 4 or self.n_theta % 2:
            raise ValueError("n_theta must be even and >= 4")
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("Burgers vector must be finite")
        if self.method not in ("cg", "direct"):
            raise ValueError("method is 'cg' or 'direct'")

    @property
    def step_s(self) -> float:
        return self.ds if self.ds is not None else 2 * np.pi / self.n_theta

    @property
    def n_s(self) -> int:
        return max(1, int(round(math.log(self.r2 / self.delta) / self.step_s)))


@dataclass
class CellSolution:
    psi: float
    displacement: np.ndarray      # nodal u, shape (n_s + 1, n_theta, 2)
    s_nodes: np.ndarray
    theta_nodes: np.ndarray
    circulation: np.ndarray       # one row per node circle
    radii: np.ndarray             # element-row midpoints
    shell_energy: np.ndarray      # dE/dr at those radii
    iterations: int


@lru_cache(maxsize=32)
def _element_matrices(entries: bytes, n_theta: int, ds: float):
    """Stiffness and load densities for one element column per angle index.

    Returns K (n_theta, 8, 8), b (n_theta, 8, 2, 2) mapping xi to loads, and
    c (n_theta, 2, 2, 2, 2) with energy density 1/2 xi C_col xi per column.
    """
    C = np.frombuffer(entries).reshape(2, 2, 2, 2)
    dt = 2 * np.pi / n_theta
    K = np.zeros((n_theta, 8, 8))
    Bfull = np.zeros((n_theta, 8, 2))  # load per unit xi component
    c = np.zeros((n_theta, 2, 2))
    e = np.eye(2)
    cols = np.arange(n_theta)
    for gs in _GAUSS:
        for gt in _GAUSS:
            a_s, a_t = (gs + 1) / 2, (gt + 1) / 2  # local coordinates in [0, 1]
            theta = (cols + a_t) * dt
            er, et = _frame(theta)
            # local nodes: (s0,t0), (s1,t0), (s0,t1), (s1,t1)
            dNs = np.array([-(1 - a_t), (1 - a_t), -a_t, a_t]) / ds
            dNt = np.array([-(1 - a_s), -a_s, (1 - a_s), a_s]) / dt
            g = dNs[None, :, None] * er[:, None, :] + dNt[None, :, None] * et[:, None, :]  # (col, node, j)
            # strain basis for dof (node, i): e_i (x) g_node
            Bm = np.einsum("ik,cnj->cnikj", e, g).reshape(n_theta, 8, 2, 2)
            CB = np.einsum("ijkl,cnkl->cnij", C, Bm)
            w = ds * dt / 4
            K += w * np.einsum("cnij,cmij->cnm", CB, Bm)
            # carrier Gamma_star = xi (x) e_theta / 2pi, linear in xi
            for p in range(2):
                G = np.einsum("i,cj->cij", e[p], et) / (2 * np.pi)
                Bfull[:, :, p] += w * np.einsum("cnij,cij->cn", CB, G)
                CG = np.einsum("ijkl,ckl->cij", C, G)
                for q in range(2):
                    Gq = np.einsum("i,cj->cij", e[q], et) / (2 * np.pi)
                    c[:, p, q] += 0.5 * w * np.einsum("cij,cij->c", CG, Gq)
    return K, Bfull, c


def _assemble(problem: CellProblem):
    nt, ns = problem.n_theta, problem.n_s
    ds = math.log(problem.r2 / problem.delta) / ns
    K_el, B_el, c_el = _element_matrices(np.ascontiguousarray(problem.tensor.entries).tobytes(), nt, ds)
    xi = np.asarray(problem.xi, dtype=float)
    n_nodes = (ns + 1) * nt
    i_s, i_t = np.meshgrid(np.arange(ns), np.arange(nt), indexing="ij")
    corners = np.stack([i_s * nt + i_t, (i_s + 1) * nt + i_t,
                        i_s * nt + (i_t + 1) % nt, (i_s + 1) * nt + (i_t + 1) % nt], -1)
    dofs = np.stack([2 * corners, 2 * corners + 1], -1).reshape(ns, nt, 8)
    Ke = np.broadcast_to(K_el[None], (ns, nt, 8, 8))
    rows = np.broadcast_to(dofs[..., :, None], Ke.shape).ravel()
    cols_ = np.broadcast_to(dofs[..., None, :], Ke.shape).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols_)), shape=(2 * n_nodes, 2 * n_nodes)).tocsr()
    be = np.broadcast_to((B_el @ xi)[None], (ns, nt, 8))
    b = np.bincount(dofs.ravel(), weights=be.ravel(), minlength=2 * n_nodes)
    const = ns * float(np.einsum("p,cpq,q->", xi, c_el, xi))
    row_const = float(np.einsum("p,cpq,q->", xi, c_el, xi))
    return K, b, const, row_const, ds, dofs, K_el, B_el @ xi


def _solve_pinned(K, b, tol: float, method: str) -> tuple[np.ndarray, int]:
    n = K.shape[0]
    keep = np.arange(2, n)  # node 0 pinned: removes the two translations
    Kr = K[keep][:, keep].tocsr()
    br = -b[keep]
    u = np.zeros(n)
    if not np.any(br):
        return u, 0
    if method == "direct":
        u[keep] = spla.spsolve(Kr.tocsc(), br)
        return u, 0
    import pyamg
    # row-sum weighting avoids the randomized spectral-radius estimate, so reruns are bit-identical
    ml = pyamg.smoothed_aggregation_solver(Kr, B=None, max_coarse=200,
                                           smooth=("jacobi", {"weighting": "local"}))
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(Kr, br, rtol=tol, atol=0.0, maxiter=2000, M=ml.aspreconditioner(), callback=cb)
    if info != 0:
        raise RuntimeError(f"conjugate gradients did not converge (info={info})")
    u[keep] = x
    return u, count[0]


def solve_cell(problem: CellProblem) -> CellSolution:
    """Minimize 1/2 int C eta : eta over eta = eta_star + grad u on the annulus."""
    nt, ns = problem.n_theta, problem.n_s
    s_nodes = np.linspace(math.log(problem.delta), math.log(problem.r2), ns + 1)
    theta = 2 * np.pi * np.arange(nt) / nt
    if not np.any(problem.xi):
        zero = np.zeros((ns + 1, nt, 2))
        mids = np.exp((s_nodes[:-1] + s_nodes[1:]) / 2)
        return CellSolution(0.0, zero, s_nodes, theta, np.zeros((ns + 1, 2)), mids, np.zeros(ns), 0)
    K, b, const, row_const, ds, dofs, K_el, b_el = _assemble(problem)
    u, its = _solve_pinned(K, b, problem.tol, problem.method)
    psi = const + b @ u + 0.5 * u @ (K @ u)
    ue = u[dofs]  # (ns, nt, 8)
    per_el = 0.5 * np.einsum("stn,tnm,stm->st", ue, K_el, ue) + np.einsum("tn,stn->st", b_el, ue)
    row_energy = per_el.sum(axis=1) + row_const
    mids = np.exp((s_nodes[:-1] + s_nodes[1:]) / 2)
    U = u.reshape(ns + 1, nt, 2)
    # eta . e_theta on node circles integrates to xi + int d_theta u = xi exactly
    xi = np.asarray(problem.xi, dtype=float)
    dU = np.roll(U, -1, axis=1) - U
    circ = xi[None, :] + dU.sum(axis=1)
    return CellSolution(float(psi), U, s_nodes, theta, circ, mids, row_energy / ds / mids, its)


def psi_scaled(tensor: ElasticTensor, xi, r1: float, r2: float, n_theta: int = 128,
               ds: float | None = None, method: str = "cg") -> float:
    """Self-energy on the annulus (r1, r2)."""
    if not np.any(xi):
        return 0.0
    return solve_cell(CellProblem(tuple(xi), r1, r2, tensor, n_theta, ds, method=method)).psi


def psi_delta(tensor: ElasticTensor, xi, delta: float, **grid) -> float:
    return psi_scaled(tensor, xi, delta, 1.0, **grid)


def psi_form(tensor: ElasticTensor, delta: float, **grid) -> np.ndarray:
    """2x2 matrix A with psi(xi, delta) = xi . A xi (polarization)."""
    e1 = psi_delta(tensor, (1.0, 0.0), delta, **grid)
    e2 = psi_delta(tensor, (0.0, 1.0), delta, **grid)
    d = psi_delta(tensor, (1.0, 1.0), delta, **grid)
    off = 0.5 * (d - e1 - e2)
    return np.array([[e1, off], [off, e2]])


@dataclass
class PrelogResult:
    psi_limit: float
    K_fit: float
    deltas: list[float]
    psi_values: list[float]
    scaled: list[float]
    fit_residual: float
    quadrature_value: float
    flagged: bool

    @property
    def rows(self):
        return list(zip(self.deltas, self.psi_values, self.scaled))


def prelog_limit(tensor: ElasticTensor, xi, deltas=(1e-2, 1e-3, 1e-4, 1e-5),
                 n_theta: int = 128, fit_tol: float = 0.01, method: str = "cg") -> PrelogResult:
    """Fit psi(xi, delta)/|log delta| = a + b/|log delta| and compare with the eta_0 quadrature."""
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("need at least three strictly decreasing radii")
    if not np.any(xi):
        z = [0.0] * len(deltas)
        return PrelogResult(0.0, 0.0, deltas, z, z, 0.0, 0.0, False)
    psi = [psi_delta(tensor, xi, d, n_theta=n_theta, method=method) for d in deltas]
    L = np.abs(np.log(deltas))
    y = np.array(psi) / L
    A = np.stack([np.ones_like(L), 1 / L], -1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([a, b]) - y) / np.abs(y)))
    quad = prelog_quadrature(tensor, xi)
    return PrelogResult(float(a), float(b), deltas, psi, y.tolist(), resid, quad, resid > fit_tol)


def psi_variant_tilde(tensor: ElasticTensor, xi, delta: float, r_delta: float,
                      n_theta: int = 128, method: str = "cg") -> tuple[float, float]:
    """Energy on the annulus (delta, r_delta) and its ratio to psi(xi, delta)."""
    if not delta < r_delta <= 1:
        raise ValueError("need delta < r_delta <= 1")
    if not np.any(xi):
        return 0.0, 0.0
    tilde = psi_scaled(tensor, xi, delta, r_delta, n_theta, method=method)
    full = psi_scaled(tensor, xi, delta, 1.0, n_theta, method=method)
    return tilde, tilde / full
