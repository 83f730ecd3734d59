"""Graph moving-average signals and graph autocorrelation analytics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .exceptions import DegenerateError, NumericalError, ParameterError
from .graphs import Graph


def as_matrix(W) -> np.ndarray:
    return W.adj if isinstance(W, Graph) else np.asarray(W, dtype=float)


def shift_power(W, x: np.ndarray, k: int) -> np.ndarray:
    """W^k x by repeated multiplication."""
    M = as_matrix(W)
    out = x
    for _ in range(k):
        out = M @ out
    return out


@dataclass
class GmaModel:
    """z = y + sum_l thetas[l-1] A^l y with y ~ N(0, sigma_y2 I)."""

    thetas: Sequence[float] = field(default_factory=list)
    sigma_y2: float = 1.0

    def __post_init__(self):
        self.thetas = [float(t) for t in self.thetas]
        if not self.sigma_y2 > 0:
            raise ParameterError("sigma_y2 must be positive")

    @property
    def order(self) -> int:
        return len(self.thetas)


def gma_generate(A, model: GmaModel, rng: np.random.Generator | None = None,
                 y: np.ndarray | None = None) -> np.ndarray:
    """Draw a GMA(m) signal on ``A``. Pass ``y`` to reuse an innovation vector."""
    M = as_matrix(A)
    if y is None:
        rng = np.random.default_rng() if rng is None else rng
        y = rng.standard_normal(M.shape[0]) * np.sqrt(model.sigma_y2)
    z = np.array(y, dtype=float, copy=True)
    v = y
    for theta in model.thetas:
        v = M @ v
        z += theta * v
    return z


def _centered(z, n, k):
    z = np.asarray(z, dtype=float)
    if z.shape != (n,):
        raise ParameterError(f"signal length {z.shape} does not match n={n}")
    if int(k) != k or k < 1 or k >= n:
        raise ParameterError(f"lag must satisfy 1 <= k < n, got {k}")
    return z - z.mean()


def graph_autocovariance(z, W, k: int = 1) -> float:
    """z^T W^k z / (N - k) for the mean-removed signal."""
    M = as_matrix(W)
    zc = _centered(z, M.shape[0], k)
    return float(zc @ shift_power(M, zc, k)) / (M.shape[0] - k)


def graph_autocorrelation(z, W, k: int = 1) -> float:
    """Single-realisation graph autocorrelation z^T W^k z / (|z| |W^k z|).

    Invariant to positive rescaling of either the signal or the shift.
    """
    M = as_matrix(W)
    zc = _centered(z, M.shape[0], k)
    wz = shift_power(M, zc, k)
    den = np.linalg.norm(zc) * np.linalg.norm(wz)
    if den == 0:
        raise DegenerateError("graph autocorrelation undefined: zero signal or zero shifted signal")
    return float(zc @ wz) / den


@dataclass
class AutocorrTheoryParams:
    """Parameters of the ER / GMA(1) / M2 autocorrelation approximation."""

    n: int
    alpha: float
    theta: float
    eps1: float = 0.0
    eps2: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError("n must be at least 2")
        for name in ("alpha", "eps1", "eps2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")


def _energy_brackets(N, al, th, a):
    first = (al - al ** 2) * th ** 2 * a ** 2 * N - 2 * al * th * a + 1
    second = ((al ** 2 - al ** 3) * th ** 2 * a ** 4 * N ** 2
              - 2 * al ** 2 * th * a ** 3 * N + (al - al ** 2) * a ** 2 * N)
    return first, second


def expected_signal_energy(n, alpha, theta, a, sigma_y2) -> float:
    """Leading-order (1/N) E|z|^2 of a centred GMA(1) signal on the a-scaled ER matrix."""
    return sigma_y2 * _energy_brackets(n, alpha, theta, a)[0]


def _w_inverse_square(p: AutocorrTheoryParams, a: float, s2: float) -> float:
    N, al, th, e1, e2 = p.n, p.alpha, p.theta, p.eps1, p.eps2
    t2 = th ** 2 * a ** 2
    s = e1 + e2 - 1
    return s2 * (-al ** 3 * N ** 2 * t2 * s ** 2
                 + al ** 2 * N ** 2 * t2 * (1 - e1 + e2 * (2 * (e1 + e2) - 3))
                 + al * N ** 2 * t2 * (e2 - e2 ** 2)
                 + al ** 2 * N * (t2 * s - s ** 2)
                 + al * N * (1 - e1 + e2 * (2 * (e1 + e2) - t2 - 3))
                 + N * (e2 - e2 ** 2) + al * s - e2)


def solve_scaling(params: AutocorrTheoryParams):
    """Return (a, w, sigma_y2) normalising the three signal energies to one.

    Dividing the two energy equations eliminates sigma_y2 and leaves a
    quartic in ``a``; its smallest positive root is refined by Brent's
    method. ``w`` then follows in closed form.
    """
    N, al, th = params.n, params.alpha, params.theta
    if not 0.0 < al < 1.0:
        raise ParameterError("alpha must lie strictly inside (0, 1)")
    g = al - al ** 2
    coeffs = [(al ** 2 - al ** 3) * th ** 2 * N ** 2,
              -2 * al ** 2 * th * N,
              g * N - g * th ** 2 * N,
              2 * al * th,
              -1.0]
    poly = np.poly1d(np.trim_zeros(coeffs, "f"))
    roots = poly.roots
    cand = np.sort(roots.real[(np.abs(roots.imag) <= 1e-8 * np.maximum(1, np.abs(roots))) & (roots.real > 0)])
    a = None
    for r in cand:
        lo, hi = r * (1 - 1e-6), r * (1 + 1e-6)
        for _ in range(60):
            if poly(lo) * poly(hi) <= 0:
                break
            lo, hi = lo * 0.9, hi * 1.1
        if poly(lo) * poly(hi) <= 0:
            a = brentq(poly, lo, hi, xtol=1e-15, rtol=1e-12, maxiter=500)
            break
    if a is None:
        raise NumericalError("no positive real root for the scaling parameter a")
    first, _ = _energy_brackets(N, al, th, a)
    if first <= 0:
        raise NumericalError("scaling system gives a non-positive innovation variance")
    s2 = 1.0 / first
    inv = _w_inverse_square(params, a, s2)
    if not inv > 0:
        raise NumericalError("closed form for w has no real solution")
    return a, inv ** -0.5, s2


def scaling_residuals(params: AutocorrTheoryParams, a: float, sigma_y2: float):
    """Residuals of the two (a, sigma_y2) energy equations."""
    first, second = _energy_brackets(params.n, params.alpha, params.theta, a)
    return sigma_y2 * first - 1.0, sigma_y2 * second - 1.0


def expected_autocorrelation(params: AutocorrTheoryParams) -> float:
    """Closed-form approximation of the expected lag-1 graph autocorrelation under M2.

    At eps1 = 1, eps2 = 0 the perturbed graph is empty and w is unbounded;
    the expression behaves like sqrt(1 - eps1) there, so its limit 0 is returned.
    """
    if params.eps1 == 1.0 and params.eps2 == 0.0:
        return 0.0
    a, w, s2 = solve_scaling(params)
    N, al, th, e1, e2 = params.n, params.alpha, params.theta, params.eps1, params.eps2
    return s2 * (th * a * w * N * (al - al ** 2) - al * w) * (1 - e1 - e2) - w * e2


def scaled_gma_model(params: AutocorrTheoryParams) -> GmaModel:
    """GMA(1) model driven by the rescaled adjacency a*A, as assumed by the approximation."""
    a, _, s2 = solve_scaling(params)
    return GmaModel([params.theta * a], s2)
