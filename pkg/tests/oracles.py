"""Independent reference values shared by the test modules."""
import numpy as np
import sympy as sp

from dislolab.core import ElasticTensor


def volterra_gradient(poisson: float):
    """Displacement gradient of the classical edge dislocation (Burgers vector e1), by sympy."""
    x, y, b, nu = sp.symbols("x y b nu", real=True)
    r2 = x ** 2 + y ** 2
    u1 = b / (2 * sp.pi) * (sp.atan2(y, x) + x * y / (2 * (1 - nu) * r2))
    u2 = -b / (2 * sp.pi) * ((1 - 2 * nu) / (4 * (1 - nu)) * sp.log(r2) + (x ** 2 - y ** 2) / (4 * (1 - nu) * r2))
    grad = sp.Matrix([[sp.diff(u, v) for v in (x, y)] for u in (u1, u2)])
    f = sp.lambdify((x, y), grad.subs({b: 1, nu: poisson}), "numpy")
    return lambda px, py: np.moveaxis(np.array(f(px, py), dtype=float), (0, 1), (-2, -1))


def oracle_prelog(tensor: ElasticTensor, n: int = 20000) -> float:
    """1/2 int_0^2pi C eta0 : eta0 dtheta at unit radius, eta0 from the sympy gradient."""
    lam, mu = tensor.lame()
    grad = volterra_gradient(lam / (2 * (lam + mu)))
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    G = grad(np.cos(t), np.sin(t))
    dens = lam * np.trace(G, axis1=-2, axis2=-1) ** 2 + 2 * mu * np.sum(((G + np.swapaxes(G, -1, -2)) / 2) ** 2, axis=(-2, -1))
    return 0.5 * float(np.mean(dens)) * 2 * np.pi
