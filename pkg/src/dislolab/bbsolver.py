"""Constructive solver for div F = f on the torus with L-infinity control.

One step splits f into dyadic shells, builds the shell antiderivatives F_j,
their stripe majorants G_j and the damped sum Y = sum_j F_j prod_{k>j}(1 - G_k)
for each coordinate direction. Iterating the step on the residual gives an
exact solution whose sup norm is controlled by the L2 norm of f.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .spectral import (
    FourierField,
    fejer_weights,
    mode_grid,
    resize_coeffs,
    shell_arrays,
    sobolev_norm,
    stripe_arrays,
)


class SmallnessError(ValueError):
    """The damped product needs every majorant below one."""


class NonContractionError(RuntimeError):
    """Residuals stopped shrinking."""


@dataclass(frozen=True)
class BBParams:
    """Solver knobs.

    A step rescales its input to L2 norm c_small, or further down until the
    largest majorant equals g_target, whichever is smaller.
    """

    eps_stripe: float = 0.25
    q: float = 4.0
    c_small: float = 1.0
    g_target: float = 0.5
    delta_iter: float = 0.5
    max_iter: int = 60
    tol_residual: float = 1e-10
    pad: int = 2
    majorant_constant: float = 9.0
    stall_steps: int = 3

    def __post_init__(self):
        if not 0 < self.eps_stripe < 1:
            raise ValueError("eps_stripe must lie in (0, 1)")
        if self.q <= 2:
            raise ValueError("q must exceed 2")
        if not 0 < self.delta_iter < 1:
            raise ValueError("delta_iter must lie in (0, 1)")
        if not 0 < self.g_target < 1:
            raise ValueError("g_target must lie in (0, 1)")
        if self.c_small <= 0 or self.pad < 2 or self.pad & (self.pad - 1):
            raise ValueError("c_small must be positive and pad a power of two >= 2")


@dataclass
class ShellData:
    """Per-shell pieces of one direction, stored spectrally."""

    level: int
    antiderivative: np.ndarray   # F_j on the N grid
    majorant: np.ndarray         # G_j on its own grid of size 4 * 2^(j+1) or more
    majorant_max: float


def _shell_pieces(coeffs: np.ndarray, alpha: int, params: BBParams, M: int) -> list[ShellData]:
    N = coeffs.shape[-1]
    shell, level = shell_arrays(N)
    stripe, _ = stripe_arrays(N, params.eps_stripe)
    n1, n2 = mode_grid(N)
    lead = n1 if alpha == 1 else n2
    safe = np.where(lead == 0, 1, lead)
    out = []
    for j in np.unique(level[shell == alpha]):
        sel = (shell == alpha) & (level == j)
        Fh = np.where(sel, coeffs / (1j * safe), 0.0)
        if not np.any(Fh):
            continue
        L = 2 ** (int(j) + 1)
        size = min(M, max(8, 4 * L))
        rs = np.unique(stripe[sel])
        stack = np.stack([np.where(sel & (stripe == r), Fh, 0.0) for r in rs])
        pieces = np.fft.ifft2(resize_coeffs(stack, size)) * (size * size)
        Ft = np.abs(pieces).sum(axis=0)
        w = fejer_weights(size, L)
        Gh = params.majorant_constant * np.fft.fft2(Ft) / (size * size) * np.outer(w, w)
        gmax = float(np.real(np.fft.ifft2(Gh)).max() * size * size)
        out.append(ShellData(int(j), Fh, Gh, gmax))
    return out


@dataclass
class DirectionReport:
    sup_Y: float = 0.0
    max_G: float = 0.0
    majorant_margin: float = math.inf
    support_offset: int | None = None
    identity_defect: float | None = None


def _assemble(pieces: list[ShellData], scale: float, N: int, M: int,
              diagnostics: bool = False) -> tuple[np.ndarray, DirectionReport]:
    """Horner evaluation of sum_j F_j prod_{k>j} (1 - G_k) on the padded grid."""
    rep = DirectionReport()
    T = np.zeros((M, M))
    naive = np.zeros((M, M))
    H = np.zeros((M, M))
    corr = np.zeros((M, M))
    offsets = []
    for piece in pieces:
        Fj = np.real(np.fft.ifft2(resize_coeffs(scale * piece.antiderivative, M))) * (M * M)
        Gj = np.real(np.fft.ifft2(resize_coeffs(scale * piece.majorant, M))) * (M * M)
        rep.max_G = max(rep.max_G, float(Gj.max()))
        rep.majorant_margin = min(rep.majorant_margin, float((Gj - np.abs(Fj)).min()))
        T = T * (1.0 - Gj) + Fj
        if diagnostics:
            GH = Gj * H
            corr += GH
            naive += Fj
            spec = np.abs(np.fft.fft2(GH))
            if spec.max() > 0:
                k1, k2 = mode_grid(M)
                rad = np.hypot(k1, k2)[spec > 1e-10 * spec.max()].max()
                offsets.append(math.ceil(math.log2(max(rad, 1.0))) - piece.level)
            H = Fj + (1.0 - Gj) * H
    rep.sup_Y = float(np.abs(T).max())
    if diagnostics:
        rep.support_offset = max(offsets) if offsets else 0
        scale_ref = max(float(np.abs(T).max()), 1e-300)
        rep.identity_defect = float(np.abs(T - (naive - corr)).max() / scale_ref)
    coeffs = resize_coeffs(np.fft.fft2(T) / (M * M), N)
    return coeffs, rep


@dataclass
class StepReport:
    scale: float
    input_norm: float
    defect_ratio: float
    directions: list[DirectionReport] = field(default_factory=list)
    nyquist_dropped: float = 0.0

    @property
    def max_G(self) -> float:
        return max(d.max_G for d in self.directions)

    @property
    def sup_Y(self) -> float:
        return max(d.sup_Y for d in self.directions)


def _prepare(f: FourierField) -> tuple[FourierField, float]:
    if f.components != "scalar":
        raise ValueError("divergence data must be a scalar field")
    if not f.is_mean_zero(1e-10):
        raise ValueError("divergence data must have zero mean")
    dropped = f.nyquist_norm()
    return f.without_nyquist().without_mean(), dropped


def _construct(f: FourierField, params: BBParams, scale: float | None,
               diagnostics: bool) -> tuple[FourierField, StepReport]:
    N = f.N
    M = params.pad * N
    norm = f.l2_norm()
    pieces = [_shell_pieces(f.coeffs / norm, a, params, M) for a in (1, 2)]
    unit_max = max((p.majorant_max for ps in pieces for p in ps), default=0.0)
    if scale is None:
        scale = params.c_small
        if unit_max > 0:
            scale = min(scale, params.g_target / unit_max)
        amplitude = scale / norm
    else:
        amplitude = scale
        scale = scale * norm
    Y = np.zeros((2, N, N), dtype=complex)
    reports = []
    for a in (0, 1):
        Y[a], rep = _assemble(pieces[a], scale, N, M, diagnostics)
        reports.append(rep)
    Yf = FourierField(Y, "vector")
    target = f * amplitude
    defect = (Yf.divergence() - target).l2_norm()
    report = StepReport(scale=scale, input_norm=target.l2_norm(),
                        defect_ratio=defect / max(target.l2_norm(), 1e-300), directions=reports)
    return Yf, report


def nonlinear_approx(f: FourierField, params: BBParams | None = None,
                     diagnostics: bool = True) -> tuple[FourierField, StepReport]:
    """Build Y = (Y_1, Y_2) with div Y close to f for small f.

    No rescaling happens here: the caller is responsible for smallness, and a
    SmallnessError is raised when some majorant reaches 1.
    """
    params = params or BBParams()
    f, dropped = _prepare(f)
    if f.l2_norm() == 0:
        return FourierField.zeros(f.N, "vector"), StepReport(0.0, 0.0, 0.0, [DirectionReport()] * 2)
    Y, rep = _construct(f, params, scale=1.0, diagnostics=diagnostics)
    rep.nyquist_dropped = dropped
    if rep.max_G >= 1.0:
        raise SmallnessError(f"majorant reaches {rep.max_G:.3g}; shrink the input")
    return Y, rep


def _linear_step(f: FourierField, params: BBParams) -> tuple[FourierField, StepReport]:
    norm = f.l2_norm()
    if norm == 0:
        raise ValueError("zero input: the rescaling step is undefined")
    Y, rep = _construct(f, params, scale=None, diagnostics=False)
    if rep.max_G >= 1.0:
        raise SmallnessError(f"majorant reaches {rep.max_G:.3g} after rescaling")
    return Y * (norm / rep.scale), rep


def step_report(f: FourierField, params: BBParams | None = None) -> StepReport:
    """Diagnostics of one linear step: working scale, majorant size, defect ratio."""
    params = params or BBParams()
    f, _ = _prepare(f)
    return _linear_step(f, params)[1]


def linear_step(f: FourierField, params: BBParams | None = None) -> FourierField:
    """Rescale f to the smallness target, build Y and scale back."""
    params = params or BBParams()
    f, _ = _prepare(f)
    return _linear_step(f, params)[0]


@dataclass
class BBSolution:
    F: FourierField
    residual_l2: list[float]
    residual_lq: list[float]
    norm_report: dict
    steps: list[dict]
    converged: bool
    nyquist_dropped: float
    seconds: float

    @property
    def ratios(self) -> list[float]:
        h = self.residual_l2
        return [b / a for a, b in zip(h[:-1], h[1:]) if a > 0]

    def to_dict(self) -> dict:
        return {"residual_l2": self.residual_l2, "residual_lq": self.residual_lq,
                "ratios": self.ratios, "norm_report": self.norm_report, "steps": self.steps,
                "converged": self.converged, "nyquist_dropped": self.nyquist_dropped,
                "seconds": self.seconds}


def _norm_report(F: FourierField, f: FourierField, q: float) -> dict:
    fl2 = f.l2_norm()
    flq = sobolev_norm(f, 0.0, q)
    sup = F.sup_norm()
    h1 = math.hypot(F.l2_norm(), sobolev_norm(F, 1.0))
    w1q = sobolev_norm(F, 1.0, q)
    safe = lambda a, b: a / b if b > 0 else 0.0
    return {"sup": sup, "h1": h1, "w1q": w1q, "f_l2": fl2, "f_lq": flq,
            "sup_over_l2": safe(sup, fl2), "h1_over_l2": safe(h1, fl2), "w1q_over_lq": safe(w1q, flq)}


def solve_div(f: FourierField, params: BBParams | None = None) -> BBSolution:
    """Iterate the linear step on residuals until div F = f to tolerance."""
    params = params or BBParams()
    start = time.perf_counter()
    f, dropped = _prepare(f)
    F = FourierField.zeros(f.N, "vector")
    base = f.l2_norm()
    hist = [base]
    hist_q = [sobolev_norm(f, 0.0, params.q)]
    steps = []
    converged = base == 0
    stalls = 0
    residual = f
    for _ in range(params.max_iter):
        if converged or hist[-1] <= params.tol_residual * base:
            converged = True
            break
        dF, rep = _linear_step(residual, params)
        F = F + dF
        residual = (f - F.divergence()).without_nyquist()
        hist.append(residual.l2_norm())
        hist_q.append(sobolev_norm(residual, 0.0, params.q))
        steps.append({"scale": rep.scale, "max_G": rep.max_G, "sup_Y": rep.sup_Y,
                      "defect_ratio": rep.defect_ratio})
        stalls = stalls + 1 if hist[-1] >= hist[-2] else 0
        if stalls >= params.stall_steps:
            raise NonContractionError(
                f"residual failed to shrink for {stalls} steps: {hist[-stalls - 1:]}")
    else:
        converged = hist[-1] <= params.tol_residual * base
    F = F.without_mean()
    return BBSolution(F, hist, hist_q, _norm_report(F, f, params.q), steps, converged,
                      dropped, time.perf_counter() - start)


def naive_div_inverse(f: FourierField) -> FourierField:
    """Gradient of the inverse Laplacian: F = grad(Delta^{-1} f)."""
    n1, n2 = mode_grid(f.N)
    r2 = n1 * n1 + n2 * n2
    w = np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1), 0.0)
    c = f.coeffs * w
    return FourierField(np.stack([-1j * n1 * c, -1j * n2 * c]), "vector")


def poisson_periodic(rhs: FourierField) -> FourierField:
    """Mean-zero solution h of Delta h = rhs."""
    n1, n2 = mode_grid(rhs.N)
    r2 = n1 * n1 + n2 * n2
    return FourierField(np.where(r2 > 0, -rhs.coeffs / np.where(r2 > 0, r2, 1), 0.0), "scalar")


@dataclass
class PrimalDecomposition:
    g: FourierField
    h: FourierField
    residual: float
    report: dict
    solution: BBSolution | None


def primal_decompose(phi: FourierField, params: BBParams | None = None) -> PrimalDecomposition:
    """Write phi = g + grad h with g bounded by the H^1 norm of phi.

    g rotates the bounded solution Y of div Y = curl phi by a quarter turn, so
    curl g = curl phi; h then absorbs the gradient part.
    """
    params = params or BBParams()
    if phi.components != "vector":
        raise ValueError("primal_decompose takes a vector field")
    phi = phi.without_nyquist()
    if np.any(np.abs(phi.mean()) > 1e-10 * max(1.0, phi.l2_norm())):
        raise ValueError("phi must have mean-zero components")
    phi = phi.without_mean()
    vort = phi.curl()
    if vort.l2_norm() <= 1e-14 * max(phi.l2_norm(), 1e-300):
        g = FourierField.zeros(phi.N, "vector")
        sol = None
    else:
        sol = solve_div(vort, params)
        Y = sol.F.coeffs
        g = FourierField(np.stack([-Y[1], Y[0]]), "vector")
    h = poisson_periodic((phi - g).divergence())
    rest = phi - g - h.gradient()
    scale = max(phi.l2_norm(), 1e-300)
    phi_h1 = math.hypot(phi.l2_norm(), sobolev_norm(phi, 1.0))
    report = {"g_sup": g.sup_norm(), "g_h1": math.hypot(g.l2_norm(), sobolev_norm(g, 1.0)),
              "h_h2": math.sqrt(h.l2_norm() ** 2 + sobolev_norm(h, 1.0) ** 2 + sobolev_norm(h, 2.0) ** 2),
              "phi_h1": phi_h1}
    report["g_sup_over_phi_h1"] = report["g_sup"] / phi_h1 if phi_h1 > 0 else 0.0
    return PrimalDecomposition(g, h, rest.l2_norm() / scale, report, sol)


def calibration_family(N: int, seed: int) -> FourierField:
    """Seeded mean-zero test field: Gaussian modes damped by |n|^(-1/2), unit L2 norm."""
    rng = np.random.default_rng(seed)
    f = FourierField.from_samples(rng.standard_normal((N, N)), "scalar")
    n1, n2 = mode_grid(N)
    rad = np.hypot(n1, n2)
    c = f.coeffs * np.where(rad > 0, 1.0 / np.sqrt(np.maximum(rad, 1.0)), 0.0)
    g = FourierField(c, "scalar").without_nyquist()
    return g * (1.0 / g.l2_norm())


def lacunary_family(M: int, N: int = 512, band: int = 4) -> FourierField:
    """f_M = M^(-1/2) sum_{j<M} cos(2^j x1) chi(x2) with chi a band-limited bump."""
    if 2 ** (M - 1) + band >= N // 2:
        raise ValueError(f"grid {N} too small for lacunary order {M}")
    x1, x2 = np.meshgrid(2 * np.pi * np.arange(N) / N, 2 * np.pi * np.arange(N) / N, indexing="ij")
    # Fejer-type bump in x2 with modes |n2| < band, peaked at x2 = pi
    chi = (1 - np.cos(band * (x2 - np.pi))) / (1 - np.cos(x2 - np.pi) + 1e-300) / band
    chi = np.where(np.abs(np.cos(x2 - np.pi) - 1) < 1e-14, float(band), chi)
    total = sum(np.cos(2 ** j * x1) for j in range(M)) * chi / math.sqrt(M)
    return FourierField.from_samples(total, "scalar").without_mean()


def params_dict(params: BBParams) -> dict:
    return asdict(params)


def smooth_vector_family(N: int, seed: int, decay: float = 3.0) -> FourierField:
    """Seeded mean-zero vector field with spectrum damped like |n|^(-decay), unit H^1 seminorm."""
    rng = np.random.default_rng(seed)
    v = FourierField.from_samples(rng.standard_normal((2, N, N)), "vector")
    n1, n2 = mode_grid(N)
    rad = np.hypot(n1, n2)
    c = v.coeffs * np.where(rad > 0, np.maximum(rad, 1.0) ** -decay, 0.0)
    g = FourierField(c, "vector").without_nyquist()
    return g * (1.0 / sobolev_norm(g, 1.0))
