"""Graph decorrelation (GraDe) ICA and separation-quality metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .exceptions import DegenerateError, NumericalError, ParameterError
from .signals import as_matrix


@dataclass
class IcaDataset:
    mixing: np.ndarray
    sources: np.ndarray
    observed: np.ndarray


@dataclass
class UnmixingEstimate:
    """gamma = rotation @ whitener."""

    gamma: np.ndarray
    rotation: np.ndarray
    whitener: np.ndarray


def whiten(X):
    """Centre the rows and apply the symmetric inverse square root of the 1/N covariance."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xc = X - X.mean(axis=1, keepdims=True)
    S0 = Xc @ Xc.T / Xc.shape[1]
    d, V = np.linalg.eigh(S0)
    if d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise NumericalError("sample covariance is singular; cannot whiten")
    whitener = (V * d ** -0.5) @ V.T
    return whitener @ Xc, whitener


def autocorr_matrices(Xw, W, K: int = 1) -> list:
    """Symmetrised S_k = X_w W^k X_w^T / (N - k) for k = 1..K."""
    if K < 1:
        raise ParameterError("need K >= 1")
    M = as_matrix(W)
    Xw = np.atleast_2d(np.asarray(Xw, dtype=float))
    N = Xw.shape[1]
    out = []
    shifted = Xw.T
    for k in range(1, K + 1):
        shifted = M @ shifted
        S = Xw @ shifted / (N - k)
        out.append((S + S.T) / 2)
    return out


def diag_objective(U, mats) -> float:
    """sum_k |diag(U S_k U^T)|^2."""
    return float(sum(np.sum(np.diag(U @ S @ U.T) ** 2) for S in mats))


def _givens_angle(mats, i, j):
    """Angle maximising the pivot (i, j) contribution of the joint-diagonality criterion."""
    g = np.array([[S[i, i] - S[j, j], 2 * S[i, j]] for S in mats])
    G = g.T @ g
    # maximise [cos 2t, sin 2t] G [cos 2t, sin 2t]^T: leading eigenvector of G
    w, v = np.linalg.eigh(G)
    x, y = v[:, -1]
    if x < 0:
        x, y = -x, -y
    return 0.5 * np.arctan2(y, x)


def joint_diagonalize(mats: Sequence[np.ndarray], tol: float = 1e-8, max_sweeps: int = 100,
                      return_trace: bool = False):
    """Orthogonal U maximising sum_k |diag(U S_k U^T)|^2 by cyclic Givens sweeps.

    Each pivot rotation uses the closed-form optimal angle, so the
    criterion never decreases. Stops once every angle in a sweep is below
    ``tol`` (radians) or after ``max_sweeps``. With ``return_trace`` the
    objective after each sweep is returned too.
    """
    mats = [np.array(S, dtype=float) for S in mats]
    if not mats:
        raise ParameterError("need at least one matrix")
    P = mats[0].shape[0]
    for S in mats:
        if S.shape != (P, P):
            raise ParameterError("matrices must share one square shape")
        if np.abs(S - S.T).max() > 1e-10 * max(1.0, np.abs(S).max()):
            raise ParameterError("joint diagonalisation needs symmetric matrices")
    V = np.eye(P)  # accumulates U^T
    trace = [diag_objective(V, mats)]
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(P - 1):
            for j in range(i + 1, P):
                t = _givens_angle(mats, i, j)
                biggest = max(biggest, abs(t))
                if abs(t) < tol:
                    continue
                c, s = np.cos(t), np.sin(t)
                R = np.eye(P)
                R[i, i], R[j, j], R[i, j], R[j, i] = c, c, -s, s
                mats = [R.T @ S @ R for S in mats]
                V = V @ R
        trace.append(float(sum(np.sum(np.diag(S) ** 2) for S in mats)))
        if biggest < tol:
            break
    U = V.T
    return (U, trace) if return_trace else U


def grade(X, W, K: int = 1, tol: float = 1e-8, max_sweeps: int = 100) -> UnmixingEstimate:
    """GraDe unmixing estimate U S_0^{-1/2}."""
    Xw, whitener = whiten(X)
    U = joint_diagonalize(autocorr_matrices(Xw, W, K), tol, max_sweeps)
    return UnmixingEstimate(U @ whitener, U, whitener)


@lru_cache(maxsize=8)
def _perms(P):
    return np.array(list(itertools.permutations(range(P))))


def md_index_squared(gamma, mixing) -> float:
    """Squared minimum-distance index of gamma @ mixing (P <= 8)."""
    G = np.asarray(gamma, dtype=float) @ np.asarray(mixing, dtype=float)
    P = G.shape[0]
    if P < 2:
        raise ParameterError("MD index needs P >= 2")
    if P > 8:
        raise ParameterError("MD index by permutation search supports P <= 8")
    norms = np.sum(G ** 2, axis=1)
    if np.any(norms == 0):
        raise DegenerateError("gamma @ mixing has a zero row")
    # fit[r, i]: share of row r's energy on column i
    fit = G ** 2 / norms[:, None]
    perms = _perms(P)
    best = np.max(fit[perms, np.arange(P)].sum(axis=1))
    return max(0.0, float(P - best)) / (P - 1)


def md_index(gamma, mixing) -> float:
    """Minimum-distance index in [0, 1]; invariant to row scaling and permutation of gamma."""
    return float(np.sqrt(md_index_squared(gamma, mixing)))


def sov_from_md(md_squares, N: int, P: int) -> float:
    md_squares = np.asarray(md_squares, dtype=float)
    if md_squares.size == 0:
        raise ParameterError("need at least one MD value")
    return float(N * (P - 1) * md_squares.mean())


def ratio_hat(md_squares_1, md_squares_2) -> float:
    """ave(D^2 for W_1) / ave(D^2 for W_2)."""
    a = np.asarray(md_squares_1, dtype=float)
    b = np.asarray(md_squares_2, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ParameterError("both samples must be non-empty")
    if b.mean() == 0:
        raise DegenerateError("denominator average is zero")
    return float(a.mean() / b.mean())
