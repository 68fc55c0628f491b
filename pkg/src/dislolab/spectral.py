"""Fourier fields on the torus and the dyadic toolbox: shells, stripes, Fejer
kernels, smooth Littlewood-Paley projections and Sobolev norms.

Conventions: the torus is [0, 2pi)^2 sampled at x_k = 2 pi k / N, a field is
f(x) = sum_n c(n) exp(i n.x) and all norms use the normalized measure, so
||f||_{L^2}^2 = mean(f^2) = sum |c(n)|^2.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

COMPONENT_SHAPES = {"scalar": (), "vector": (2,), "matrix": (2, 2)}
_MAGIC = b"DLF1"


def wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers in FFT order: 0, 1, ..., N/2-1, -N/2, ..., -1."""
    return np.rint(np.fft.fftfreq(N, 1.0 / N)).astype(np.int64)


def mode_grid(N: int) -> tuple[np.ndarray, np.ndarray]:
    k = wavenumbers(N)
    return np.meshgrid(k, k, indexing="ij")


def grid_points(N: int) -> tuple[np.ndarray, np.ndarray]:
    x = 2 * np.pi * np.arange(N) / N
    return np.meshgrid(x, x, indexing="ij")


def _check_grid(N: int) -> None:
    if N < 2 or N & (N - 1):
        raise ValueError(f"grid size must be a power of two, got {N}")


def resize_coeffs(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Zero-pad or truncate the trailing two spectral axes to size M.

    Only modes with |n_i| < min(N, M)/2 are carried over, so Nyquist lines
    never survive a resize and real fields stay real.
    """
    N = coeffs.shape[-1]
    out = np.zeros(coeffs.shape[:-2] + (M, M), dtype=complex)
    h = min(N, M) // 2
    k = np.r_[0:h, -h + 1:0]
    src = k % N
    dst = k % M
    out[..., dst[:, None], dst[None, :]] = coeffs[..., src[:, None], src[None, :]]
    return out


@dataclass(frozen=True)
class FourierField:
    """Real field on the torus stored as normalized Fourier coefficients.

    coeffs has shape components + (N, N) in FFT order.
    """

    coeffs: np.ndarray
    components: str = "scalar"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        shape = COMPONENT_SHAPES[self.components]
        if c.ndim != len(shape) + 2 or c.shape[:-2] != shape or c.shape[-1] != c.shape[-2]:
            raise ValueError(f"coefficient shape {c.shape} does not fit {self.components}")
        _check_grid(c.shape[-1])
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_samples(cls, values, components: str | None = None) -> "FourierField":
        values = np.asarray(values, dtype=float)
        if components is None:
            components = {2: "scalar", 3: "vector", 4: "matrix"}[values.ndim]
        N = values.shape[-1]
        return cls(np.fft.fft2(values) / (N * N), components)

    @classmethod
    def zeros(cls, N: int, components: str = "scalar") -> "FourierField":
        return cls(np.zeros(COMPONENT_SHAPES[components] + (N, N), dtype=complex), components)

    @classmethod
    def from_function(cls, func, N: int, components: str | None = None) -> "FourierField":
        x1, x2 = grid_points(N)
        return cls.from_samples(func(x1, x2), components)

    @property
    def N(self) -> int:
        return self.coeffs.shape[-1]

    def samples(self) -> np.ndarray:
        N = self.N
        return np.real(np.fft.ifft2(self.coeffs)) * (N * N)

    def mode(self, n1: int, n2: int) -> complex:
        N = self.N
        if not (-N // 2 <= n1 < N // 2 and -N // 2 <= n2 < N // 2):
            raise IndexError(f"mode ({n1}, {n2}) outside grid {N}")
        return self.coeffs[..., n1 % N, n2 % N]

    def mean(self):
        return np.real(self.coeffs[..., 0, 0])

    def is_mean_zero(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.coeffs[..., 0, 0]) <= tol * max(1.0, self.l2_norm())))

    def hermitian_defect(self) -> float:
        """Size of the anti-Hermitian part (zero for real fields)."""
        c = self.coeffs
        flipped = np.conj(np.roll(np.flip(c, (-2, -1)), 1, axis=(-2, -1)))
        return float(np.max(np.abs(c - flipped))) if c.size else 0.0

    def nyquist_norm(self) -> float:
        """L2 mass sitting on the Nyquist lines n_i = -N/2."""
        h = self.N // 2
        c = self.coeffs
        row = np.sum(np.abs(c[..., h, :]) ** 2)
        col = np.sum(np.abs(c[..., :, h]) ** 2)
        return float(np.sqrt(row + col - np.sum(np.abs(c[..., h, h]) ** 2)))

    def without_nyquist(self) -> "FourierField":
        h = self.N // 2
        c = self.coeffs.copy()
        c[..., h, :] = 0
        c[..., :, h] = 0
        return FourierField(c, self.components)

    def without_mean(self) -> "FourierField":
        c = self.coeffs.copy()
        c[..., 0, 0] = 0
        return FourierField(c, self.components)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def sup_norm(self) -> float:
        v = self.samples()
        lead = len(COMPONENT_SHAPES[self.components])
        mag = np.sqrt(np.sum(v.reshape((-1,) + v.shape[-2:]) ** 2, axis=0)) if lead else np.abs(v)
        return float(mag.max())

    def resized(self, M: int) -> "FourierField":
        _check_grid(M)
        return FourierField(resize_coeffs(self.coeffs, M), self.components)

    def derivative(self, axis: int) -> "FourierField":
        n = mode_grid(self.N)[axis]
        return FourierField(1j * n * self.coeffs, self.components)

    def gradient(self) -> "FourierField":
        if self.components != "scalar":
            raise ValueError("gradient of a scalar field only")
        n1, n2 = mode_grid(self.N)
        return FourierField(np.stack([1j * n1 * self.coeffs, 1j * n2 * self.coeffs]), "vector")

    def divergence(self) -> "FourierField":
        n1, n2 = mode_grid(self.N)
        if self.components == "vector":
            c = 1j * n1 * self.coeffs[0] + 1j * n2 * self.coeffs[1]
            return FourierField(c, "scalar")
        if self.components == "matrix":
            c = 1j * n1 * self.coeffs[:, 0] + 1j * n2 * self.coeffs[:, 1]
            return FourierField(c, "vector")
        raise ValueError("divergence needs a vector or matrix field")

    def curl(self) -> "FourierField":
        """Scalar curl d1 v2 - d2 v1 (row-wise for matrix fields)."""
        n1, n2 = mode_grid(self.N)
        if self.components == "vector":
            return FourierField(1j * n1 * self.coeffs[1] - 1j * n2 * self.coeffs[0], "scalar")
        if self.components == "matrix":
            c = 1j * n1 * self.coeffs[:, 1] - 1j * n2 * self.coeffs[:, 0]
            return FourierField(c, "vector")
        raise ValueError("curl needs a vector or matrix field")

    def component(self, *index) -> "FourierField":
        return FourierField(self.coeffs[index], "scalar")

    def __add__(self, other: "FourierField") -> "FourierField":
        return FourierField(self.coeffs + other.coeffs, self.components)

    def __sub__(self, other: "FourierField") -> "FourierField":
        return FourierField(self.coeffs - other.coeffs, self.components)

    def __mul__(self, scalar: float) -> "FourierField":
        return FourierField(self.coeffs * scalar, self.components)

    __rmul__ = __mul__

    def __neg__(self) -> "FourierField":
        return FourierField(-self.coeffs, self.components)

    def to_bytes(self) -> bytes:
        v = self.samples()
        ncomp = int(np.prod(COMPONENT_SHAPES[self.components], dtype=int))
        header = _MAGIC + struct.pack("<IIcc", self.N, ncomp, b"R", b"<")
        return header + np.ascontiguousarray(v, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FourierField":
        if data[:4] != _MAGIC:
            raise ValueError("not a field file (bad magic)")
        N, ncomp, layout, endian = struct.unpack("<IIcc", data[4:14])
        if layout != b"R" or endian != b"<":
            raise ValueError("unsupported field layout")
        kind = {1: "scalar", 2: "vector", 4: "matrix"}[ncomp]
        v = np.frombuffer(data[14:], dtype="<f8")
        if v.size != ncomp * N * N:
            raise ValueError("field file is truncated")
        return cls.from_samples(v.reshape(COMPONENT_SHAPES[kind] + (N, N)), kind)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FourierField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        """Sample table with columns x1, x2 and one column per component."""
        v = self.samples().reshape((-1, self.N, self.N))
        x1, x2 = grid_points(self.N)
        names = [f"f{i}" for i in range(len(v))] if len(v) > 1 else ["f"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2"] + names)
            for idx in np.ndindex(self.N, self.N):
                w.writerow([f"{x1[idx]:.17g}", f"{x2[idx]:.17g}"] + [f"{c[idx]:.17g}" for c in v])


class ShellIndex(NamedTuple):
    alpha: int
    j: int


class StripeIndex(NamedTuple):
    alpha: int
    j: int
    r: int
    eps: float
    anchor: float


def _ceil_log2(a: int) -> int:
    return (int(a) - 1).bit_length()


def shell_of(n) -> ShellIndex:
    """Dyadic shell containing the nonzero mode n.

    Shell 1 at level j: 2^(j-1) < |n1| <= 2^j and |n2| <= 2^j.
    Shell 2 at level j: 2^(j-1) < |n2| <= 2^j and |n1| <= 2^(j-1).
    Levels start at j = 0 so that modes with |n1| = 1 are covered.
    """
    n1, n2 = (int(v) for v in n)
    if n1 == 0 and n2 == 0:
        raise ValueError("the zero mode belongs to no shell")
    if n1 != 0:
        j = _ceil_log2(abs(n1))
        if abs(n2) <= 2 ** j:
            return ShellIndex(1, j)
    return ShellIndex(2, _ceil_log2(abs(n2)))


def shell_arrays(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized shell_of over the FFT grid; the zero mode gets (0, -1)."""
    n1, n2 = mode_grid(N)
    a1, a2 = np.abs(n1), np.abs(n2)
    j1 = np.ceil(np.log2(np.maximum(a1, 1))).astype(np.int64)
    j2 = np.ceil(np.log2(np.maximum(a2, 1))).astype(np.int64)
    first = (a1 > 0) & (a2 <= 2.0 ** j1)
    second = ~first & (a2 > 0)
    alpha = np.where(first, 1, np.where(second, 2, 0))
    level = np.where(first, j1, np.where(second, j2, -1))
    return alpha, level


def _stripe_along(m: np.ndarray, j: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Stripe number and anchor for the leading coordinate m of shell level j."""
    K = int(math.floor(1.0 / eps))
    lo = np.ldexp(1.0, np.asarray(j) - 1)
    width = eps * lo
    a = np.abs(m)
    # I^r = (lo + r w, lo + (r+1) w]; the last stripe I^K runs up to 2 lo
    r = np.ceil((a - lo) / width - 1e-9).astype(np.int64) - 1
    r = np.clip(r, 0, K)
    anchor = lo + r * width
    neg = m < 0
    return np.where(neg, r + K + 1, r), np.where(neg, -anchor, anchor)


def stripe_of(n, eps: float) -> StripeIndex:
    """Stripe of the shell containing n, with its anchor.

    Positive leading coordinates use I^r (open left, closed right) with the
    left endpoint as anchor; negative ones use the mirror intervals J^r
    (closed left, open right), numbered r + floor(1/eps) + 1, anchored at the
    right endpoint. Shell-2 modes reuse this with coordinates swapped.
    """
    if not 0 < eps < 1:
        raise ValueError("stripe parameter must lie in (0, 1)")
    alpha, j = shell_of(n)
    lead = int(n[0]) if alpha == 1 else int(n[1])
    r, anchor = _stripe_along(np.array(lead), np.array(j), eps)
    return StripeIndex(alpha, j, int(r), eps, float(anchor))


def stripe_arrays(N: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Stripe numbers and anchors over the FFT grid (zero mode: -1, 0)."""
    alpha, level = shell_arrays(N)
    n1, n2 = mode_grid(N)
    lead = np.where(alpha == 2, n2, n1)
    r, anchor = _stripe_along(lead, np.maximum(level, 0), eps)
    r = np.where(alpha == 0, -1, r)
    anchor = np.where(alpha == 0, 0.0, anchor)
    return r, anchor


def fejer(n: int, t):
    """Fejer kernel K_n(t) = (1/n)(1 - cos nt)/(1 - cos t), value n at t = 0 mod 2pi."""
    if n < 1:
        raise ValueError("Fejer order must be >= 1")
    t = np.asarray(t, dtype=float)
    # sin form avoids cancellation: (1/n) (sin(nt/2) / sin(t/2))^2
    s = np.sin(t / 2)
    small = np.abs(s) < 1e-8
    ratio = np.sin(n * t / 2) / np.where(small, 1.0, s)
    out = np.where(small, float(n), ratio * ratio / n)
    return out if out.ndim else float(out)


def fejer_weights(N: int, order: int) -> np.ndarray:
    """Fourier multiplier (1 - |k|/order)_+ of K_order on an N-point axis."""
    k = wavenumbers(N)
    return np.clip(1.0 - np.abs(k) / order, 0.0, None)


def fejer_majorant(Ftilde, j: int, constant: float = 9.0) -> FourierField:
    """G_j = constant * Ftilde * (K_L x K_L) with L = 2^(j+1).

    Ftilde may be a FourierField or a real sample array; the convolution uses
    the normalized torus measure so that Ftilde = 1 gives G = constant.
    """
    if not isinstance(Ftilde, FourierField):
        Ftilde = FourierField.from_samples(Ftilde, "scalar")
    L = 2 ** (j + 1)
    if Ftilde.N // 2 < L:
        raise ValueError(f"grid {Ftilde.N} cannot hold the majorant support 2^{j + 1}")
    w = fejer_weights(Ftilde.N, L)
    return FourierField(constant * Ftilde.coeffs * np.outer(w, w), "scalar")


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class DyadicBump:
    """Radial cutoff chi(r): 1 for r <= 1, 0 for r >= 2, smooth in log2 r.

    The k-th Littlewood-Paley multiplier is chi(|n|/2^k) - chi(|n|/2^(k-1))
    (just chi(|n|) at k = 0), so the projections telescope.
    """

    def cutoff(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 - smooth_step(np.log2(np.maximum(r, 1e-300)))

    def multiplier(self, radius, k: int):
        if k < 0:
            raise ValueError("Littlewood-Paley index must be >= 0")
        top = self.cutoff(radius / 2.0 ** k)
        if k == 0:
            return np.where(radius > 0, top, 0.0)
        return top - self.cutoff(radius / 2.0 ** (k - 1))


def lp_project(field: FourierField, k: int, bump: DyadicBump | None = None) -> FourierField:
    bump = bump or DyadicBump()
    n1, n2 = mode_grid(field.N)
    m = bump.multiplier(np.hypot(n1, n2), k)
    return FourierField(field.coeffs * m, field.components)


def lp_levels(N: int) -> int:
    """Number of projections needed to exhaust an N-grid."""
    return int(math.ceil(math.log2(N))) + 1


def support_radius(field: FourierField, rel_tol: float = 1e-12) -> float:
    """Largest |n| carrying a coefficient above rel_tol times the maximum."""
    n1, n2 = mode_grid(field.N)
    mag = np.abs(field.coeffs).reshape((-1,) + n1.shape).max(axis=0)
    if mag.max() == 0:
        return 0.0
    return float(np.hypot(n1, n2)[mag > rel_tol * mag.max()].max())


def sobolev_norm(field: FourierField, s: float = 0.0, p: float = 2.0) -> float:
    """Diagnostic norms.

    p = 2: homogeneous H^s norm, ||(|n|^s c(n))||_{l^2} (requires mean zero
    when s < 0). s = 0: L^p norm of the samples. s = 1, p != 2: full W^{1,p}
    norm (||f||_p^p + ||grad f||_p^p)^(1/p). Vector fields use the pointwise
    Euclidean magnitude.
    """
    if p == 2.0:
        if s < 0 and not field.is_mean_zero():
            raise ValueError("negative Sobolev norms need a mean-zero field")
        n1, n2 = mode_grid(field.N)
        rad = np.hypot(n1, n2)
        w = np.where(rad > 0, np.where(rad > 0, rad, 1.0) ** s, 0.0) if s != 0 else np.ones_like(rad)
        return float(np.sqrt(np.sum(np.abs(field.coeffs * w) ** 2)))
    if s == 0:
        return _lp_samples(field, p)
    if s == 1:
        comps = field.coeffs.reshape((-1,) + field.coeffs.shape[-2:])
        vals = _stack_magnitude(np.concatenate([FourierField(c).gradient().coeffs for c in comps]))
        base = _lp_samples(field, p)
        return float((base ** p + np.mean(vals ** p)) ** (1.0 / p))
    raise ValueError("sobolev_norm supports p = 2, or s in {0, 1} for other p")


def _stack_magnitude(coeffs: np.ndarray) -> np.ndarray:
    N = coeffs.shape[-1]
    v = np.real(np.fft.ifft2(coeffs)) * N * N
    return np.sqrt(np.sum(v ** 2, axis=0))


def _magnitude(field: FourierField) -> np.ndarray:
    v = field.samples()
    if v.ndim == 2:
        return np.abs(v)
    return np.sqrt(np.sum(v.reshape((-1,) + v.shape[-2:]) ** 2, axis=0))


def _lp_samples(field: FourierField, p: float) -> float:
    mag = _magnitude(field)
    if math.isinf(p):
        return float(mag.max())
    return float(np.mean(mag ** p) ** (1.0 / p))
