"""Stochastic graph-error models W = A + E for adjacency matrices.

Unweighted models flip edge indicators; weighted models additionally jitter
surviving weights with Gaussian noise and draw weights for spurious edges.
Undirected graphs get one decision per unordered pair (lower triangle,
mirrored), including the Gaussian jitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ModelDomainError, ParameterError, PartitionError
from .graphs import Graph, SbmSpec, bernoulli_adjacency, pairwise_distances

RESAMPLE = "resample_from_existing"
GENERATOR_RULE = "generator_rule"


def _check_prob(name, p):
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def _require_unweighted(A: Graph):
    if A.weighted:
        raise ModelDomainError("model expects an unweighted graph")


def _require_weighted(A: Graph):
    if not A.weighted:
        raise ModelDomainError("model expects a weighted graph")


@dataclass
class ErrorPartition:
    """Disjoint node-pair masks D_1..D_K with per-mask error probabilities.

    ``remove_probs[k]`` / ``add_probs[k]`` are the removal / addition
    probabilities inside mask k; ``var_multipliers[k]`` scales the weight
    jitter variance (weighted models only).
    """

    masks: Sequence[np.ndarray]
    remove_probs: Sequence[float]
    add_probs: Sequence[float]
    var_multipliers: Sequence[float] | None = None
    weight_source: str = RESAMPLE

    def __post_init__(self):
        self.masks = [np.asarray(m) for m in self.masks]
        K = len(self.masks)
        if K == 0:
            raise PartitionError("partition needs at least one mask")
        if self.var_multipliers is None:
            self.var_multipliers = [0.0] * K
        self.remove_probs = [float(p) for p in self.remove_probs]
        self.add_probs = [float(p) for p in self.add_probs]
        self.var_multipliers = [float(c) for c in self.var_multipliers]
        if not (len(self.remove_probs) == len(self.add_probs) == len(self.var_multipliers) == K):
            raise PartitionError("one probability pair and multiplier per mask is required")
        for p in self.remove_probs + self.add_probs:
            if not (0.0 <= p <= 1.0):
                raise PartitionError(f"probabilities must lie in [0, 1], got {p}")
        if any(c < 0 for c in self.var_multipliers):
            raise PartitionError("variance multipliers must be non-negative")
        if self.weight_source not in (RESAMPLE, GENERATOR_RULE):
            raise PartitionError(f"unknown weight_source {self.weight_source!r}")
        n = self.masks[0].shape[0]
        total = np.zeros((n, n))
        for m in self.masks:
            if m.shape != (n, n):
                raise PartitionError("masks must all be n x n")
            if not np.all((m == 0) | (m == 1)):
                raise PartitionError("masks must be binary")
            if np.any(np.diag(m) != 0):
                raise PartitionError("masks must have zero diagonal")
            total += m
        if not np.array_equal(total, 1.0 - np.eye(n)):
            raise PartitionError("masks must be disjoint and cover every off-diagonal pair")
        self.masks = [m.astype(float) for m in self.masks]

    @property
    def n(self) -> int:
        return self.masks[0].shape[0]

    @property
    def symmetric(self) -> bool:
        return all(np.array_equal(m, m.T) for m in self.masks)

    def entry_matrix(self, values: Sequence[float]) -> np.ndarray:
        """Spread one value per mask onto the pairs that mask covers."""
        return sum(v * m for v, m in zip(values, self.masks))

    @classmethod
    def uniform(cls, n, eps1, eps2, c=0.0, weight_source=RESAMPLE):
        """K = 1 with D_1 = 1 - I; reduces M3/M3w to M2/M2w."""
        return cls([1.0 - np.eye(n)], [eps1], [eps2], [c], weight_source)

    @classmethod
    def sbm_blocks(cls, spec: SbmSpec, eps1, eps2, c=None, weight_source=RESAMPLE):
        """One mask per ordered community pair (k, m), K = r^2, row-major.

        ``eps1``/``eps2``/``c`` are r x r arrays or scalars.
        """
        r = len(spec.sizes)
        lab = spec.labels()
        e1 = np.broadcast_to(np.asarray(eps1, dtype=float), (r, r))
        e2 = np.broadcast_to(np.asarray(eps2, dtype=float), (r, r))
        cc = np.broadcast_to(np.asarray(0.0 if c is None else c, dtype=float), (r, r))
        off = 1.0 - np.eye(spec.n)
        masks, p1, p2, cs = [], [], [], []
        for k in range(r):
            for m in range(r):
                masks.append(np.outer(lab == k, lab == m) * off)
                p1.append(e1[k, m])
                p2.append(e2[k, m])
                cs.append(cc[k, m])
        return cls(masks, p1, p2, cs, weight_source)

    @classmethod
    def ppm_blocks(cls, spec: SbmSpec, within, between, c=(0.0, 0.0), weight_source=RESAMPLE):
        """K = 2: within-community pairs and between-community pairs.

        ``within`` and ``between`` are (eps1, eps2) tuples.
        """
        lab = spec.labels()
        same = (lab[:, None] == lab[None, :]).astype(float)
        off = 1.0 - np.eye(spec.n)
        d1 = same * off
        return cls([d1, off - d1], [within[0], between[0]], [within[1], between[1]],
                   list(c), weight_source)

    @classmethod
    def distance_threshold(cls, dist, threshold, near, far=(0.0, 0.0), c=(0.0, 0.0),
                           weight_source=RESAMPLE):
        """D_1: pairs with distance <= threshold; D_2: pairs farther apart."""
        dist = np.asarray(dist, dtype=float)
        off = 1.0 - np.eye(dist.shape[0])
        d1 = (dist <= threshold) * off
        return cls([d1, off - d1], [near[0], far[0]], [near[1], far[1]], list(c), weight_source)

    def to_json(self) -> dict:
        return {
            "masks": [m.astype(int).tolist() for m in self.masks],
            "remove_probs": self.remove_probs,
            "add_probs": self.add_probs,
            "var_multipliers": self.var_multipliers,
            "weight_source": self.weight_source,
        }

    @classmethod
    def from_json(cls, obj: dict, dist=None, sbm_spec: SbmSpec | None = None) -> "ErrorPartition":
        """Build from a JSON object.

        ``masks`` is either a list of explicit 0/1 matrices or a named rule:
        ``{"distance_threshold": 250}`` (needs ``dist``) or ``"sbm_blocks"``
        (needs ``sbm_spec``). Rule-based partitions take their probabilities
        in mask order, like explicit ones.
        """
        masks = obj["masks"]
        e1, e2 = obj["remove_probs"], obj["add_probs"]
        cs = obj.get("var_multipliers")
        src = obj.get("weight_source", RESAMPLE)
        if isinstance(masks, dict) and "distance_threshold" in masks:
            if dist is None:
                raise PartitionError("distance_threshold rule needs a distance matrix")
            dist = np.asarray(dist, dtype=float)
            off = 1.0 - np.eye(dist.shape[0])
            d1 = (dist <= float(masks["distance_threshold"])) * off
            return cls([d1, off - d1], e1, e2, cs, src)
        if masks == "sbm_blocks":
            if sbm_spec is None:
                raise PartitionError("sbm_blocks rule needs an SbmSpec")
            base = cls.sbm_blocks(sbm_spec, 0.0, 0.0)
            return cls(base.masks, e1, e2, cs, src)
        if isinstance(masks, list):
            return cls([np.asarray(m, dtype=float) for m in masks], e1, e2, cs, src)
        raise PartitionError(f"unrecognised mask specification {masks!r}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path, **context) -> "ErrorPartition":
        return cls.from_json(json.loads(Path(path).read_text()), **context)


def _flip_draws(n, directed, rng):
    """Uniforms shared by the removal/addition decisions of each pair."""
    if directed:
        return rng.random((n, n))
    rows, cols = np.tril_indices(n, -1)
    u = np.ones((n, n))
    vals = rng.random(rows.size)
    u[rows, cols] = vals
    u[cols, rows] = vals
    return u


def _edge_switch(present, remove, add, directed, rng):
    """Indicator of the perturbed edge set plus the survivor and added masks.

    ``remove``/``add`` are per-entry probabilities. Each pair uses a single
    uniform: an existing edge is dropped when u < remove, a non-edge is
    added when u < add. Since a pair is either an edge or not, this has the
    same law as independent removal and addition matrices.
    """
    n = present.shape[0]
    u = _flip_draws(n, directed, rng)
    survive = present & (u >= remove)
    added = ~present & (u < add)
    np.fill_diagonal(survive, False)
    np.fill_diagonal(added, False)
    return survive, added


def _check_partition(A: Graph, part: ErrorPartition):
    if part.n != A.n:
        raise PartitionError(f"partition is for n={part.n}, graph has n={A.n}")
    if not A.directed and not part.symmetric:
        raise PartitionError("undirected graphs need symmetric masks")


def perturb_m1(A: Graph, eps: float, rng: np.random.Generator) -> Graph:
    """Flip every off-diagonal indicator independently with probability ``eps``."""
    _require_unweighted(A)
    _check_prob("eps", eps)
    delta = bernoulli_adjacency(eps, A.n, A.directed, rng)
    return A.with_adj(A.adj + delta * (1.0 - 2.0 * A.adj))


def perturb_m2(A: Graph, eps1: float, eps2: float, rng: np.random.Generator) -> Graph:
    """Remove each edge w.p. ``eps1``; add each missing edge w.p. ``eps2``."""
    _require_unweighted(A)
    _check_prob("eps1", eps1)
    _check_prob("eps2", eps2)
    survive, added = _edge_switch(A.adj != 0, eps1, eps2, A.directed, rng)
    return A.with_adj((survive | added).astype(float))


def perturb_m3(A: Graph, part: ErrorPartition, rng: np.random.Generator) -> Graph:
    """Removal/addition probabilities that depend on the mask a pair belongs to."""
    _require_unweighted(A)
    _check_partition(A, part)
    survive, added = _edge_switch(A.adj != 0, part.entry_matrix(part.remove_probs),
                                  part.entry_matrix(part.add_probs), A.directed, rng)
    return A.with_adj((survive | added).astype(float))


def nonzero_weight_variance(A: Graph) -> float:
    """Population variance (denominator |set|) of the nonzero weights."""
    vals = A.adj[A.adj != 0]
    return float(vals.var()) if vals.size else 0.0


def per_node_weight_variance(A: Graph) -> np.ndarray:
    """Variance of the incoming (row) nonzero weights of every node; 0 for isolated nodes."""
    out = np.zeros(A.n)
    for i, row in enumerate(A.adj):
        vals = row[row != 0]
        if vals.size:
            out[i] = vals.var()
    return out


def _gaussian_jitter(std: np.ndarray, directed: bool, rng) -> np.ndarray:
    n = std.shape[0]
    if directed:
        return rng.standard_normal((n, n)) * std
    rows, cols = np.tril_indices(n, -1)
    noise = np.zeros((n, n))
    noise[rows, cols] = rng.standard_normal(rows.size) * std[rows, cols]
    return noise + noise.T


def _spurious_weights(A: Graph, added: np.ndarray, source: str, weight_rule, rng):
    n = A.n
    if source == GENERATOR_RULE:
        if weight_rule is None:
            raise ParameterError("generator_rule weights need a weight_rule matrix")
        rule = np.asarray(weight_rule, dtype=float)
        if rule.shape != (n, n):
            raise ParameterError("weight_rule must be n x n")
        return np.where(added, rule, 0.0)
    pool = A.adj[A.adj != 0]
    if pool.size == 0:
        raise ParameterError("cannot resample weights from a graph without edges")
    if A.directed:
        return np.where(added, rng.choice(pool, size=(n, n)), 0.0)
    rows, cols = np.tril_indices(n, -1)
    B = np.zeros((n, n))
    B[rows, cols] = rng.choice(pool, size=rows.size)
    B = B + B.T
    return np.where(added, B, 0.0)


def _weighted_perturb(A, remove, add, var, source, weight_rule, rng):
    survive, added = _edge_switch(A.adj != 0, remove, add, A.directed, rng)
    jitter = _gaussian_jitter(np.sqrt(var), A.directed, rng)
    W = np.where(survive, A.adj + jitter, 0.0)
    W = W + _spurious_weights(A, added, source, weight_rule, rng)
    W = np.maximum(W, 0.0)
    np.fill_diagonal(W, 0.0)
    return A.with_adj(W)


def _variance_matrix(A: Graph, multipliers: np.ndarray, per_node: bool) -> np.ndarray:
    if not per_node:
        return multipliers * nonzero_weight_variance(A)
    node_var = per_node_weight_variance(A)
    if A.directed:
        base = np.repeat(node_var[:, None], A.n, axis=1)
    else:
        # a symmetric jitter cannot honour two different row variances; use their mean
        base = 0.5 * (node_var[:, None] + node_var[None, :])
    return multipliers * base


def perturb_m2w(A: Graph, eps1: float, eps2: float, c: float, rng: np.random.Generator,
                weight_source: str = RESAMPLE, weight_rule=None, per_node_variance: bool = False) -> Graph:
    """Weighted removal/addition plus N(0, c sigma^2) jitter on surviving edges.

    sigma^2 is the population variance of the nonzero weights of ``A``.
    Spurious edges take weights resampled from the existing ones, or from
    ``weight_rule[i, j]`` when ``weight_source="generator_rule"``. Negative
    results are clipped to zero.
    """
    _require_weighted(A)
    _check_prob("eps1", eps1)
    _check_prob("eps2", eps2)
    if c < 0:
        raise ParameterError("variance multiplier must be non-negative")
    part = ErrorPartition.uniform(A.n, eps1, eps2, c, weight_source)
    return perturb_m3w(A, part, rng, weight_rule=weight_rule, per_node_variance=per_node_variance)


def perturb_m3w(A: Graph, part: ErrorPartition, rng: np.random.Generator,
                weight_rule=None, per_node_variance: bool = False) -> Graph:
    """Mask-wise version of :func:`perturb_m2w`.

    With ``per_node_variance`` the jitter variance of entry (i, j) is
    c_k times the variance of node i's incoming weights (the mean over both
    endpoints for undirected graphs).
    """
    _require_weighted(A)
    _check_partition(A, part)
    var = _variance_matrix(A, part.entry_matrix(part.var_multipliers), per_node_variance)
    return _weighted_perturb(A, part.entry_matrix(part.remove_probs),
                             part.entry_matrix(part.add_probs), var,
                             part.weight_source, weight_rule, rng)


def effective_er_parameter(alpha: float, eps1: float, eps2: float) -> float:
    """Edge probability of an ER(alpha) graph after M2 perturbation."""
    return alpha * (1.0 - eps1) + (1.0 - alpha) * eps2


def ppm_eigen_shift(n: int, M: int, p: float, q: float, eps1: float, eps2: float):
    """Expected drop of the leading eigenvalue, and of eigenvalues 2..M, under M2 on a PPM."""
    if M < 1 or n % M != 0:
        raise ParameterError(f"n={n} must be divisible by the community count M={M}")
    for name, v in (("p", p), ("q", q), ("eps1", eps1), ("eps2", eps2)):
        _check_prob(name, v)
    s = eps1 + eps2
    first = n * (s * (p + (M - 1) * q) - M * eps2) / M
    rest = n * s * (p - q) / M
    return first, rest
