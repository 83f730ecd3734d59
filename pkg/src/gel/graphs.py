"""Random graph generators and the dense Graph container.

Convention: ``adj[i, j] != 0`` means an edge *from* node ``j`` *to* node ``i``.
For undirected graphs only the strict lower triangle is sampled and then
mirrored, so every unordered pair gets exactly one Bernoulli decision.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import KernelDomainError, ParameterError
from .ioutil import atomic_write_text

EARTH_RADIUS_KM = 6371.0


@dataclass
class Graph:
    """Dense adjacency matrix with directedness/weightedness flags.

    ``coords`` is only populated by generators that place nodes in space
    (random geometric and k-NN graphs).
    """

    adj: np.ndarray
    directed: bool = False
    weighted: bool = False
    coords: np.ndarray | None = None

    def __post_init__(self):
        adj = np.asarray(self.adj, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ParameterError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 1:
            raise ParameterError("graph must have at least one node")
        if np.any(np.diag(adj) != 0):
            raise ParameterError("adjacency diagonal must be zero")
        if not self.directed and not np.array_equal(adj, adj.T):
            raise ParameterError("undirected graph requires a symmetric adjacency")
        if not self.weighted and not np.all((adj == 0) | (adj == 1)):
            raise ParameterError("unweighted graph requires 0/1 entries")
        self.adj = adj

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def with_adj(self, adj: np.ndarray) -> "Graph":
        """Copy of this graph (same flags and coords) with a new adjacency."""
        return Graph(adj, directed=self.directed, weighted=self.weighted, coords=self.coords)


def _check_prob(name: str, p: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def _check_n(n: int) -> None:
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n}")


def bernoulli_adjacency(prob: np.ndarray | float, n: int, directed: bool,
                        rng: np.random.Generator) -> np.ndarray:
    """Sample a 0/1 matrix with independent entries ``P(adj[i,j]=1) = prob[i,j]``.

    The diagonal is always zero. Undirected sampling draws the strict lower
    triangle and mirrors it (``prob`` is read from the lower triangle).
    """
    prob = np.broadcast_to(np.asarray(prob, dtype=float), (n, n))
    if directed:
        out = (rng.random((n, n)) < prob).astype(float)
        np.fill_diagonal(out, 0.0)
        return out
    rows, cols = np.tril_indices(n, -1)
    hits = rng.random(rows.size) < prob[rows, cols]
    out = np.zeros((n, n))
    out[rows[hits], cols[hits]] = 1.0
    return out + out.T


def erdos_renyi(n: int, eps: float, directed: bool = False,
                rng: np.random.Generator | None = None) -> Graph:
    _check_n(n)
    _check_prob("eps", eps)
    rng = np.random.default_rng() if rng is None else rng
    return Graph(bernoulli_adjacency(eps, n, directed, rng), directed=directed)


@dataclass
class SbmSpec:
    """Community sizes and the r x r matrix of edge probabilities.

    ``probs[i][j]`` is the probability of an edge from a node of community
    ``j`` to a node of community ``i``. Nodes are numbered community by
    community, in the order of ``sizes``.
    """

    sizes: Sequence[int]
    probs: np.ndarray

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        r = len(self.sizes)
        if r == 0 or any(s < 1 for s in self.sizes):
            raise ParameterError("community sizes must be positive")
        if self.probs.shape != (r, r):
            raise ParameterError(f"probs must be {r}x{r}, got {self.probs.shape}")
        if np.any((self.probs < 0) | (self.probs > 1)):
            raise ParameterError("SBM probabilities must lie in [0, 1]")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sizes)), self.sizes)

    def edge_probabilities(self) -> np.ndarray:
        lab = self.labels()
        return self.probs[np.ix_(lab, lab)]


def ppm_spec(sizes: Sequence[int], p: float, q: float) -> SbmSpec:
    """Planted partition: ``p`` inside communities, ``q`` between them."""
    r = len(sizes)
    probs = np.full((r, r), float(q))
    np.fill_diagonal(probs, float(p))
    return SbmSpec(sizes, probs)


def sbm(spec: SbmSpec, directed: bool = False,
        rng: np.random.Generator | None = None) -> Graph:
    rng = np.random.default_rng() if rng is None else rng
    if not directed and not np.array_equal(spec.probs, spec.probs.T):
        raise ParameterError("undirected SBM requires a symmetric probability matrix")
    return Graph(bernoulli_adjacency(spec.edge_probabilities(), spec.n, directed, rng),
                 directed=directed)


def pairwise_distances(coords: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Distance matrix; ``metric="haversine"`` expects (lat, lon) degrees and returns km."""
    coords = np.asarray(coords, dtype=float)
    if metric == "euclidean":
        diff = coords[:, None, :] - coords[None, :, :]
        return np.sqrt(np.sum(diff ** 2, axis=-1))
    if metric == "haversine":
        lat = np.radians(coords[:, 0])
        lon = np.radians(coords[:, 1])
        dlat = lat[:, None] - lat[None, :]
        dlon = lon[:, None] - lon[None, :]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
        return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    raise ParameterError(f"unknown metric {metric!r}")


def random_geometric(n: int, radius: float, rng: np.random.Generator | None = None,
                     coords: np.ndarray | None = None) -> Graph:
    """Unit-square random geometric graph: edge iff distance < radius.

    Passing ``coords`` skips the uniform placement.
    """
    _check_n(n)
    if radius <= 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    if coords is None:
        rng = np.random.default_rng() if rng is None else rng
        coords = rng.random((n, 2))
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (n, 2):
        raise ParameterError(f"coords must have shape ({n}, 2)")
    adj = (pairwise_distances(coords) < radius).astype(float)
    np.fill_diagonal(adj, 0.0)
    return Graph(adj, coords=coords)


def knn_sets(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbours of each node (self excluded).

    Ties are broken by the lowest node index (stable sort).
    """
    n = dist.shape[0]
    if not (1 <= k < n):
        raise ParameterError(f"k must satisfy 1 <= k < n={n}, got {k}")
    d = dist.astype(float).copy()
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def knn_weight_rule(dist: np.ndarray, k: int, scale: float) -> np.ndarray:
    """Gaussian-kernel weights normalised by the neighbourhood sums, for every pair.

    Entry (k, l) is exp(-(d_kl/scale)^2) / sqrt(S_k S_l) with S_k the kernel
    sum over the k-NN set of node k. Evaluated in log space so that large
    distances relative to ``scale`` do not underflow to 0/0.
    """
    if scale <= 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    nbrs = knn_sets(dist, k)
    logk = -(dist / scale) ** 2
    np.fill_diagonal(logk, -np.inf)
    log_s = logsumexp(np.take_along_axis(logk, nbrs, axis=1), axis=1)
    weights = np.exp(logk - 0.5 * (log_s[:, None] + log_s[None, :]))
    np.fill_diagonal(weights, 0.0)
    return weights


def knn_weighted(coords: np.ndarray, k: int, scale: float, metric: str = "euclidean") -> Graph:
    """Symmetric weighted k-NN graph with normalised Gaussian weights.

    Nodes k and l are joined when either is among the other's k nearest.
    """
    coords = np.asarray(coords, dtype=float)
    dist = pairwise_distances(coords, metric)
    nbrs = knn_sets(dist, k)
    mask = np.zeros(dist.shape, dtype=bool)
    np.put_along_axis(mask, nbrs, True, axis=1)
    mask |= mask.T
    adj = np.where(mask, knn_weight_rule(dist, k, scale), 0.0)
    return Graph(adj, weighted=True, coords=coords)


def cycle_graph(n: int) -> Graph:
    """Directed n-cycle: node i-1 feeds node i, i.e. ``adj[i, i-1 mod n] = 1``."""
    if int(n) != n or n < 2:
        raise ParameterError(f"cycle needs n >= 2, got {n}")
    return Graph(np.roll(np.eye(n), 1, axis=0), directed=True)


@dataclass
class GraphonSpec:
    """A kernel graph model: kernel W(x, y), latent-position sampler and parameters.

    ``kernel`` must be vectorised over numpy arrays.
    """

    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    node_sampling: str = "uniform"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.node_sampling not in ("uniform", "deterministic_grid"):
            raise ParameterError(f"unknown node_sampling {self.node_sampling!r}")


def constant_graphon(eps: float, node_sampling: str = "uniform") -> GraphonSpec:
    _check_prob("eps", eps)
    return GraphonSpec(lambda x, y: np.full(np.broadcast(x, y).shape, float(eps)),
                       node_sampling, {"eps": eps})


def exponential_graphon(beta0: float, beta1: float, node_sampling: str = "uniform") -> GraphonSpec:
    """W(x, y) = exp(-(beta1 (x + y) + beta0)) with beta0, beta1 >= 0."""
    if beta0 < 0 or beta1 < 0:
        raise ParameterError("exponential graphon needs beta0, beta1 >= 0")
    return GraphonSpec(lambda x, y: np.exp(-(beta1 * (x + y) + beta0)),
                       node_sampling, {"beta0": beta0, "beta1": beta1})


def block_graphon(sizes: Sequence[int], probs: np.ndarray,
                  node_sampling: str = "deterministic_grid") -> GraphonSpec:
    """Piecewise-constant kernel of an SBM; with the grid sampler it reproduces the SBM exactly."""
    sizes = np.asarray(sizes, dtype=float)
    probs = np.asarray(probs, dtype=float)
    edges = np.cumsum(sizes) / sizes.sum()

    def kernel(x, y):
        # block k holds (edges[k-1], edges[k]]
        bx = np.clip(np.searchsorted(edges, x, side="left"), 0, len(sizes) - 1)
        by = np.clip(np.searchsorted(edges, y, side="left"), 0, len(sizes) - 1)
        return probs[bx, by]

    return GraphonSpec(kernel, node_sampling, {"sizes": sizes.tolist()})


def sample_graphon(spec: GraphonSpec, n: int, rng: np.random.Generator | None = None,
                   directed: bool = False) -> Graph:
    _check_n(n)
    rng = np.random.default_rng() if rng is None else rng
    if spec.node_sampling == "uniform":
        u = rng.random(n)
    else:
        u = np.arange(1, n + 1) / n
    prob = np.asarray(spec.kernel(u[:, None], u[None, :]), dtype=float)
    prob = np.broadcast_to(prob, (n, n))
    off = ~np.eye(n, dtype=bool)
    if np.any(~np.isfinite(prob[off])) or np.any((prob[off] < 0) | (prob[off] > 1)):
        raise KernelDomainError("kernel values must lie in [0, 1]")
    return Graph(bernoulli_adjacency(prob, n, directed, rng), directed=directed)


def average_graphons(kernels: Sequence[Callable], coeffs: Sequence[float], x, y):
    """(1/M) sum_i c_i W_i(x, y)."""
    if len(kernels) == 0:
        raise ParameterError("need at least one kernel")
    if len(kernels) != len(coeffs):
        raise ParameterError("kernels and coeffs must have the same length")
    total = 0.0
    for c, kern in zip(coeffs, kernels):
        total = total + c * np.asarray(kern(x, y), dtype=float)
    return total / len(kernels)


def random_step_graphon(eps: float, rng: np.random.Generator, blocks: int = 4):
    """A random symmetric block-constant kernel whose integral over [0,1]^2 equals eps.

    Used to draw samples from the set of graphons with edge density eps.
    Block widths are random; block values are a random symmetric matrix
    rescaled to the target mean and redrawn until every value is in [0, 1].
    """
    _check_prob("eps", eps)
    while True:
        widths = rng.dirichlet(np.ones(blocks))
        raw = rng.random((blocks, blocks))
        raw = (raw + raw.T) / 2
        mass = widths @ raw @ widths
        vals = raw * (eps / mass)
        if vals.max() <= 1.0:
            break
    edges = np.cumsum(widths)
    edges[-1] = 1.0

    def kernel(x, y):
        bx = np.clip(np.searchsorted(edges, x, side="left"), 0, blocks - 1)
        by = np.clip(np.searchsorted(edges, y, side="left"), 0, blocks - 1)
        return vals[bx, by]

    return kernel


def save_graph(graph: Graph, path: str | Path, seed: int | None = None) -> None:
    """Write ``path`` as a ``src,dst,weight`` edge list plus a ``.json`` sidecar.

    Undirected graphs list each pair once with src < dst.
    """
    path = Path(path)
    adj = graph.adj
    if graph.directed:
        dst, src = np.nonzero(adj)
    else:
        dst, src = np.nonzero(np.triu(adj))
        src, dst = dst, src
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["src", "dst", "weight"])
    for s, d in zip(src, dst):
        writer.writerow([int(s), int(d), repr(float(adj[d, s]))])
    atomic_write_text(path, buf.getvalue())
    meta = {"n": graph.n, "directed": graph.directed, "weighted": graph.weighted, "seed": seed}
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, indent=2) + "\n")


def load_graph(path: str | Path) -> Graph:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n = int(meta["n"])
    adj = np.zeros((n, n))
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            s, d, w = int(row["src"]), int(row["dst"]), float(row["weight"])
            adj[d, s] = w
            if not meta["directed"]:
                adj[s, d] = w
    return Graph(adj, directed=bool(meta["directed"]), weighted=bool(meta["weighted"]))
