"""Graph filters on symmetric shift matrices.

Polynomial filters are fitted by least squares on the graph frequencies;
GARMA filters realise a rational response c + sum_k psi_k / (1 - phi_k lam)
with parallel first-order recursions on a translated normalised Laplacian.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .exceptions import DesignError, InstabilityError, ParameterError
from .graphs import Graph
from .ioutil import atomic_write_text
from .signals import as_matrix


def _symmetric(W, what="shift matrix") -> np.ndarray:
    M = as_matrix(W)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"{what} must be square")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * scale:
        raise ParameterError(f"{what} must be symmetric")
    return M


@dataclass
class SpectralDecomposition:
    """Eigenpairs sorted from the lowest to the highest graph frequency.

    ``distances[n] = |max_m |lam_m| - lam_n|``; ascending distance means
    ascending frequency. Eigenvectors are the columns of ``vectors``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size


def frequency_order(W) -> SpectralDecomposition:
    M = _symmetric(W)
    lam, V = np.linalg.eigh(M)
    d = np.abs(np.abs(lam).max(initial=0.0) - lam)
    order = np.lexsort((lam, d))
    return SpectralDecomposition(lam[order], V[:, order], d[order])


@dataclass
class FilterSpec:
    """Polynomial filter h_0 I + h_1 W + ... + h_K W^K and the responses it was fitted to."""

    coeffs: np.ndarray
    responses: np.ndarray | None = None
    residual: float = 0.0
    rank: int = 0
    rank_deficient: bool = False

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def response(self, lam) -> np.ndarray:
        return np.polyval(self.coeffs[::-1], np.asarray(lam, dtype=float))

    def to_json(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "responses": None if self.responses is None else self.responses.tolist(),
            "residual": self.residual,
            "rank": self.rank,
            "rank_deficient": self.rank_deficient,
        }


def design_polynomial_filter(dec: SpectralDecomposition, responses, K: int) -> FilterSpec:
    """Least-squares fit of a degree-K polynomial to the responses at the graph frequencies.

    Solved by SVD of the column-normalised Vandermonde matrix; a
    rank-deficient system (repeated eigenvalues, large K) yields the
    minimum-norm solution and sets ``rank_deficient``.
    """
    responses = np.asarray(responses, dtype=float)
    N = dec.n
    if responses.shape != (N,):
        raise ParameterError(f"need {N} responses, got {responses.shape}")
    if int(K) != K or K < 0 or K > N - 1:
        raise ParameterError(f"order K must satisfy 0 <= K <= N-1, got {K}")
    V = np.vander(dec.eigenvalues, K + 1, increasing=True)
    norms = np.linalg.norm(V, axis=0)
    norms[norms == 0] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(V / norms, responses, rcond=None)
    h = sol / norms
    resid = float(np.linalg.norm(V @ h - responses))
    return FilterSpec(h, responses, resid, int(rank), bool(rank < K + 1))


def apply_polynomial_filter(W, spec: FilterSpec, x) -> np.ndarray:
    """Horner evaluation: K matrix-vector products, no explicit powers.

    ``x`` may be a vector or a matrix of column signals.
    """
    M = as_matrix(W)
    x = np.asarray(x, dtype=float)
    h = spec.coeffs
    out = h[-1] * x
    for hk in h[-2::-1]:
        out = M @ out + hk * x
    return out


def gft(dec: SpectralDecomposition, x) -> np.ndarray:
    return dec.vectors.T @ np.asarray(x, dtype=float)


def inverse_gft(dec: SpectralDecomposition, coeffs) -> np.ndarray:
    return dec.vectors @ np.asarray(coeffs, dtype=float)


def highpass_response(dec: SpectralDecomposition) -> np.ndarray:
    """1 for frequencies whose distance strictly exceeds the median distance, else 0."""
    return (dec.distances > np.median(dec.distances)).astype(float)


@dataclass
class DetectionResult:
    """Outlier flags for days 4..T (1-based day numbers in ``days``)."""

    days: np.ndarray
    flags: np.ndarray
    max_gft: np.ndarray
    thresholds: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", "flag", "max_gft", "threshold"])
        for row in zip(self.days, self.flags, self.max_gft, self.thresholds):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3]))])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def max_filtered_gft(history, W, spec: FilterSpec, dec: SpectralDecomposition | None = None) -> np.ndarray:
    """Largest absolute GFT coefficient of each filtered day (days are rows)."""
    X = np.atleast_2d(np.asarray(history, dtype=float))
    dec = frequency_order(W) if dec is None else dec
    G = gft(dec, apply_polynomial_filter(W, spec, np.eye(X.shape[1])))
    # one product per day so identical days score identically regardless of BLAS blocking
    return np.array([np.abs(G @ x).max() for x in X])


def detect_outliers(history, W, spec: FilterSpec,
                    dec: SpectralDecomposition | None = None) -> DetectionResult:
    """Flag day t when its largest |GFT| of the high-passed signal exceeds that of days t-3..t-1."""
    X = np.atleast_2d(np.asarray(history, dtype=float))
    if X.shape[0] < 4:
        raise ParameterError("outlier detection needs at least four days of history")
    m = max_filtered_gft(X, W, spec, dec)
    thresholds = np.array([m[t - 3:t].max() for t in range(3, m.size)])
    today = m[3:]
    return DetectionResult(np.arange(4, m.size + 1), today > thresholds, today, thresholds)


def translated_normalized_laplacian(W) -> np.ndarray:
    """L = -T^{-1/2} W T^{-1/2}; isolated nodes get zero rows and columns."""
    M = _symmetric(W, "adjacency")
    if np.any(M < 0):
        raise ParameterError("translated normalised Laplacian needs non-negative weights")
    deg = M.sum(axis=1)
    tinv = np.zeros_like(deg)
    pos = deg > 0
    tinv[pos] = deg[pos] ** -0.5
    return -(tinv[:, None] * M * tinv[None, :])


def filter_rmse(z_e, z_d) -> float:
    """sqrt(|z_e - z_d|^2 / N)."""
    z_e = np.asarray(z_e, dtype=float)
    z_d = np.asarray(z_d, dtype=float)
    if z_e.shape != z_d.shape:
        raise ParameterError("signals must have equal length")
    return float(np.linalg.norm(z_e - z_d) / np.sqrt(z_e.size))


def _spectral_radius(L: np.ndarray) -> float:
    if np.array_equal(L, L.T):
        return float(np.abs(np.linalg.eigvalsh(L)).max(initial=0.0))
    return float(np.abs(np.linalg.eigvals(L)).max(initial=0.0))


def garma_states(L, phis, psis, x, tol: float = 1e-10, max_iters: int = 10000,
                 check_stability: bool = True) -> np.ndarray:
    """Run y_{t+1} = phi_k L y_t + psi_k x for every branch k in parallel from y_0 = 0.

    Returns the N x K matrix of final states. A branch stops contributing
    to the stopping rule once |y_{t+1} - y_t| <= tol |y_t|. Divergence is
    declared when the step norm of some branch grows for 10 consecutive
    iterations.
    """
    L = as_matrix(L)
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    psis = np.atleast_1d(np.asarray(psis, dtype=float))
    x = np.asarray(x, dtype=float)
    if phis.shape != psis.shape:
        raise ParameterError("phis and psis must have the same length")
    if check_stability and phis.size:
        rho = _spectral_radius(L)
        bad = np.abs(phis) * rho >= 1
        if np.any(bad):
            raise InstabilityError(f"|phi| * rho(L) >= 1 for phi={phis[bad]} (rho={rho:.6g})")
    Y = np.zeros((x.size, phis.size))
    drive = np.outer(x, psis)
    prev_step = np.full(phis.size, np.inf)
    growth = np.zeros(phis.size, dtype=int)
    for _ in range(max_iters):
        Y_next = L @ Y
        Y_next *= phis
        Y_next += drive
        diff = Y_next - Y
        step = np.sqrt(np.einsum("ij,ij->j", diff, diff))
        size = np.sqrt(np.einsum("ij,ij->j", Y, Y))
        growth = (growth + 1) * (step > prev_step)
        if growth.max() >= 10:
            raise InstabilityError("GARMA recursion diverged")
        prev_step = step
        Y = Y_next
        if np.all(step <= tol * size):
            break
    return Y


def garma1_run(L, phi: float, psi: float, c: float, x, tol: float = 1e-10,
               max_iters: int = 10000, check_stability: bool = True) -> np.ndarray:
    """GARMA(1) output: converged state of y <- phi L y + psi x, plus c x."""
    y = garma_states(L, [phi], [psi], x, tol, max_iters, check_stability)[:, 0]
    return y + c * np.asarray(x, dtype=float)


@dataclass
class GarmaSpec:
    """K parallel first-order branches (phi_k, psi_k) plus feedthrough c."""

    branches: list = field(default_factory=list)
    c: float = 0.0
    tol: float = 1e-10
    max_iters: int = 10000
    residual: float = float("nan")

    def __post_init__(self):
        self.branches = [(float(p), float(q)) for p, q in self.branches]
        for phi, _ in self.branches:
            if not abs(phi) < 1:
                raise ParameterError(f"branch pole phi={phi} must satisfy |phi| < 1")

    @property
    def order(self) -> int:
        return len(self.branches)

    @property
    def phis(self) -> np.ndarray:
        return np.array([b[0] for b in self.branches])

    @property
    def psis(self) -> np.ndarray:
        return np.array([b[1] for b in self.branches])

    def response(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        out = np.full(lam.shape, self.c)
        for phi, psi in self.branches:
            out = out + psi / (1 - phi * lam)
        return out

    def to_json(self) -> dict:
        return asdict(self)


def _rational_basis(lam, phis):
    return np.column_stack([np.ones_like(lam)] + [1.0 / (1.0 - p * lam) for p in phis])


def _linear_part(lam, target, phis):
    """Optimal (c, psi) for fixed poles; branches with phi ~ 0 duplicate c and are pinned to 0."""
    phis = np.asarray(phis, dtype=float)
    live = np.abs(phis) > 1e-8
    B = _rational_basis(lam, phis[live])
    coef, *_ = np.linalg.lstsq(B, target, rcond=None)
    psi = np.zeros(phis.size)
    psi[live] = coef[1:]
    return coef[0], psi, B @ coef - target


def garma_k_design(dec, desired_response: Callable | Sequence[float], K: int,
                   n_starts: int = 8, rng: np.random.Generator | None = None,
                   phi_max: float = 0.99, init_phis: Sequence[float] | None = None,
                   tol: float = 1e-10, max_iters: int = 10000) -> GarmaSpec:
    """Fit c + sum_k psi_k / (1 - phi_k lam) to a desired response at the eigenvalues of L.

    Variable projection: the poles are optimised by bounded nonlinear least
    squares (|phi| <= phi_max) while (c, psi) are solved linearly for every
    trial set of poles. ``n_starts`` random pole sets are tried, plus
    ``init_phis`` (padded with random poles up to K) when given; the best
    fit wins. ``dec`` is a SpectralDecomposition or an array of eigenvalues.
    """
    if int(K) != K or K < 1:
        raise ParameterError(f"GARMA order must be >= 1, got {K}")
    if not 0 < phi_max < 1:
        raise ParameterError("phi_max must lie in (0, 1)")
    lam = np.asarray(dec.eigenvalues if isinstance(dec, SpectralDecomposition) else dec, dtype=float)
    target = np.asarray(desired_response(lam) if callable(desired_response) else desired_response,
                        dtype=float)
    if target.shape != lam.shape:
        raise ParameterError("desired response must have one value per eigenvalue")
    rng = np.random.default_rng(0) if rng is None else rng

    starts = []
    if init_phis is not None:
        init = list(np.clip(np.asarray(init_phis, dtype=float)[:K], -phi_max, phi_max))
        init += list(rng.uniform(-phi_max, phi_max, K - len(init)))
        starts.append(np.array(init))
    for _ in range(n_starts):
        starts.append(rng.uniform(-phi_max, phi_max, K))
    if not starts:
        raise ParameterError("need at least one start (n_starts >= 1 or init_phis)")

    def resid(phis):
        return _linear_part(lam, target, phis)[2]

    best = None
    for x0 in starts:
        try:
            fit = least_squares(resid, x0, bounds=(-phi_max, phi_max), method="trf",
                                xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=200 * (K + 1))
        except (ValueError, np.linalg.LinAlgError):
            continue
        cost = float(np.sum(fit.fun ** 2))
        if best is None or cost < best[0]:
            best = (cost, fit.x)
    if best is None or not np.isfinite(best[0]):
        raise DesignError("GARMA design failed for every start", residual=None)
    phis = best[1]
    c, psi, r = _linear_part(lam, target, phis)
    rms = float(np.linalg.norm(r) / np.sqrt(lam.size))
    return GarmaSpec(list(zip(phis, psi)), float(c), tol, max_iters, rms)


def garma_k_run(L, spec: GarmaSpec, x) -> np.ndarray:
    """c x plus the converged state of every branch."""
    x = np.asarray(x, dtype=float)
    if spec.order == 0:
        return spec.c * x
    Y = garma_states(L, spec.phis, spec.psis, x, spec.tol, spec.max_iters)
    return Y.sum(axis=1) + spec.c * x


def garma_spectral_output(dec: SpectralDecomposition, spec: GarmaSpec, x) -> np.ndarray:
    """Exact fixed point of :func:`garma_k_run` via the eigenbasis of L."""
    return inverse_gft(dec, spec.response(dec.eigenvalues) * gft(dec, x))


def save_filter_json(spec, path) -> None:
    atomic_write_text(path, json.dumps(spec.to_json(), indent=2) + "\n")
