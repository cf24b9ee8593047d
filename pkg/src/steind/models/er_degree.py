"""Number of vertices of degree ``d`` in the Erdos-Renyi graph ``G(n, p)``, ``p = theta/(n-1)``.

Size bias: pick a vertex ``I`` uniformly. If ``deg(I) > d``, delete
``deg(I) - d`` of its edges chosen uniformly; if ``deg(I) < d``, attach it to
``d - deg(I)`` uniformly chosen non-neighbours.

Let ``A`` be ``I`` together with every vertex joined to ``I`` before or after
the surgery. Conditioning on all edges incident to ``A`` leaves an independent
``G(n_free, p)`` on the other vertices, each of which carries ``x_u`` fixed
edges into ``A``. A free vertex counts towards ``S`` iff
``x_u + deg_free(u) = d``, so the conditional law only needs ``n_free`` and
the histogram of ``x_u`` over ``1..d`` (larger offsets never reach ``d``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import binom

from ..couplings import PairBatch
from ..dist import IntegerPMF, shift_tv_exact
from ..estimators import rollin_ross_bound
from ..rng import DEFAULT_CHUNK, RandomStream, generate

BRUTE_MAX_N = 6
EXHAUSTIVE_MAX_N = 5
EXACT_FREE_EDGES = 15
_CELL_BUDGET = 1 << 22


@dataclass(frozen=True)
class ErdosRenyiDegreeParams:
    n: int
    theta: float
    d: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two vertices")
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if not 0 < self.p < 1:
            raise ValueError("p = theta/(n-1) must lie strictly inside (0, 1)")

    @property
    def p(self) -> float:
        return self.theta / (self.n - 1)

    @classmethod
    def from_p(cls, n: int, p: float, d: int) -> "ErdosRenyiDegreeParams":
        return cls(n, p * (n - 1), d)


def er_exact_moments(params: ErdosRenyiDegreeParams) -> tuple[float, float]:
    """Mean and variance of ``S`` from one- and two-vertex degree probabilities."""
    n, p, d = params.n, params.p, params.d
    one = binom.pmf(d, n - 1, p)
    both = p * binom.pmf(d - 1, n - 2, p) ** 2 + (1 - p) * binom.pmf(d, n - 2, p) ** 2
    mu = n * one
    return float(mu), float(n * one * (1 - one) + n * (n - 1) * (both - one ** 2))


def _edge_list(n: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(n), 2))


def _all_adjacency(n: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    edges = _edge_list(n)
    k = len(edges)
    codes = np.arange(1 << k, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(k)) & 1
    adj = np.zeros((1 << k, n, n), dtype=np.int64)
    for e, (u, v) in enumerate(edges):
        adj[:, u, v] = adj[:, v, u] = bits[:, e]
    ne = bits.sum(axis=1)
    return adj, p ** ne * (1 - p) ** (k - ne)


def er_bruteforce_pmf(params: ErdosRenyiDegreeParams) -> IntegerPMF:
    """Exact law of ``S`` over all ``2**C(n,2)`` graphs."""
    if params.n > BRUTE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_MAX_N}")
    adj, w = _all_adjacency(params.n, params.p)
    s = (adj.sum(axis=2) == params.d).sum(axis=1)
    return IntegerPMF(0, np.bincount(s, weights=w, minlength=params.n + 1))


def _sample_adjacency(n: int, p: float, rng: np.random.Generator, size: int) -> np.ndarray:
    upper = np.triu(rng.random((size, n, n)) < p, k=1)
    return (upper | upper.transpose(0, 2, 1)).astype(np.int64)


def _sub_batches(n: int, size: int):
    step = max(1, _CELL_BUDGET // (n * n))
    for start in range(0, size, step):
        yield min(step, size - start)


def er_sample_chunk(params: ErdosRenyiDegreeParams, rng: np.random.Generator, size: int) -> np.ndarray:
    out = [(_sample_adjacency(params.n, params.p, rng, k).sum(axis=2) == params.d).sum(axis=1)
           for k in _sub_batches(params.n, size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def er_degree_sample(params: ErdosRenyiDegreeParams, stream: RandomStream, size: int = 1, *,
                     workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """Draws of ``S`` from fresh ``G(n, p)`` graphs."""
    return np.concatenate(generate(er_sample_chunk, (params,), size, stream,
                                   chunk_size=chunk_size, workers=workers))


def ctx_fields(d: int) -> tuple[str, ...]:
    return ("I", "deg_I", "a_size", "b_size", "dcount_g", "dcount_gs") + tuple(
        f"x{k}" for k in range(1, d + 1)) + ("x_over",)


def _surgery(adj: np.ndarray, index: np.ndarray, chosen: np.ndarray, d: int):
    """Apply the size-bias surgery and build context rows.

    ``chosen[k, v]`` marks the vertices whose edge with ``I`` is removed or added.
    """
    size, n, _ = adj.shape
    rows = np.arange(size)
    deg = adj.sum(axis=2)
    deg_i = deg[rows, index]
    nbr = adj[rows, index].astype(bool)
    sign = np.where(deg_i > d, -1, 1)[:, None]
    deg_s = deg + sign * chosen
    deg_s[rows, index] = np.where(deg_i == d, deg_i, d)
    in_a = nbr | chosen.astype(bool)
    in_a[rows, index] = True
    s = (deg == d).sum(axis=1)
    ss = (deg_s == d).sum(axis=1)
    if np.any(np.abs(ss - s) > np.abs(deg_i - d) + 1):
        raise AssertionError("size-bias displacement exceeds |deg(I) - d| + 1")
    x = np.einsum("kuv,kv->ku", adj, in_a.astype(np.int64))
    free = ~in_a
    hist = [((x == k) & free).sum(axis=1) for k in range(1, d + 1)]
    ctx = np.column_stack([
        index, deg_i, in_a.sum(axis=1), ((x > 0) & free).sum(axis=1),
        ((deg == d) & in_a).sum(axis=1), ((deg_s == d) & in_a).sum(axis=1),
        *hist, ((x > d) & free).sum(axis=1),
    ])
    return s, ss, ctx


def _choose(adj, index, d, rng):
    """Uniform subsets: ``deg(I)-d`` neighbours or ``d-deg(I)`` non-neighbours of ``I``."""
    size, n, _ = adj.shape
    rows = np.arange(size)
    nbr = adj[rows, index].astype(bool)
    deg_i = nbr.sum(axis=1)
    remove = deg_i > d
    eligible = np.where(remove[:, None], nbr, ~nbr)
    eligible[rows, index] = False
    need = np.abs(deg_i - d)
    keys = np.where(eligible, rng.random((size, n)), np.inf)
    rank = keys.argsort(axis=1).argsort(axis=1)
    return (rank < need[:, None]) & eligible


def er_size_bias_chunk(params: ErdosRenyiDegreeParams, rng: np.random.Generator, size: int):
    outs = []
    for k in _sub_batches(params.n, size):
        adj = _sample_adjacency(params.n, params.p, rng, k)
        index = rng.integers(0, params.n, k)
        chosen = _choose(adj, index, params.d, rng).astype(np.int64)
        outs.append(_surgery(adj, index, chosen, params.d))
    return tuple(np.concatenate(col) for col in zip(*outs))


def er_size_bias_exhaustive(params: ErdosRenyiDegreeParams):
    """Every graph, every ``I`` and every surgery subset, with probabilities."""
    n, d = params.n, params.d
    if n > EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive construction limited to n <= {EXHAUSTIVE_MAX_N}")
    adj_all, w_all = _all_adjacency(n, params.p)
    adjs, idx, chosen, weights = [], [], [], []
    for g in range(len(w_all)):
        adj = adj_all[g]
        for i in range(n):
            nbrs = [v for v in range(n) if adj[i, v]]
            deg_i = len(nbrs)
            pool = nbrs if deg_i > d else [v for v in range(n) if v != i and not adj[i, v]]
            subsets = list(itertools.combinations(pool, abs(deg_i - d)))
            for sub in subsets:
                mark = np.zeros(n, dtype=np.int64)
                mark[list(sub)] = 1
                adjs.append(adj)
                idx.append(i)
                chosen.append(mark)
                weights.append(w_all[g] / n / len(subsets))
    s, ss, ctx = _surgery(np.array(adjs), np.array(idx), np.array(chosen), d)
    return s, ss, ctx, np.array(weights)


def conditional_free_model(params: ErdosRenyiDegreeParams, ctx) -> tuple[int, tuple[int, ...]]:
    """``(n_free, offsets)`` where ``offsets`` lists ``x_u`` for each free vertex (``d+1`` for larger)."""
    c = dict(zip(ctx_fields(params.d), (int(v) for v in ctx)))
    n_free = params.n - c["a_size"]
    hist = [c[f"x{k}"] for k in range(1, params.d + 1)] + [c["x_over"]]
    offsets = [k for k, cnt in zip(range(1, params.d + 2), hist) for _ in range(cnt)]
    offsets += [0] * (n_free - len(offsets))
    return n_free, tuple(sorted(offsets))


@lru_cache(maxsize=4096)
def free_graph_pmf(n_free: int, offsets: tuple[int, ...], p: float, d: int) -> IntegerPMF:
    """Exact law of ``#{u : x_u + deg(u) = d}`` on ``G(n_free, p)`` by enumeration."""
    if n_free * (n_free - 1) // 2 > EXACT_FREE_EDGES:
        raise ValueError("free graph too large to enumerate")
    if n_free < 2:
        return IntegerPMF.point_mass(sum(1 for x in offsets if x == d))
    adj, w = _all_adjacency(n_free, p)
    v = ((adj.sum(axis=2) + np.array(offsets)) == d).sum(axis=1)
    return IntegerPMF(0, np.bincount(v, weights=w, minlength=n_free + 1))


def _free_edge_pair_chunk(n_free: int, offsets: tuple[int, ...], p: float, d: int,
                          rng: np.random.Generator, size: int) -> PairBatch:
    off = np.array(offsets)
    vs, vps = [], []
    for k in _sub_batches(n_free, size):
        adj = _sample_adjacency(n_free, p, rng, k)
        deg = adj.sum(axis=2)
        edges = np.array(_edge_list(n_free))
        pick = edges[rng.integers(0, len(edges), k)]
        new = (rng.random(k) < p).astype(np.int64)
        rows = np.arange(k)
        old = adj[rows, pick[:, 0], pick[:, 1]]
        delta = new - old
        deg2 = deg.copy()
        deg2[rows, pick[:, 0]] += delta
        deg2[rows, pick[:, 1]] += delta
        vs.append(((deg + off) == d).sum(axis=1))
        vps.append(((deg2 + off) == d).sum(axis=1))
    return PairBatch(np.concatenate(vs), np.concatenate(vps))


def free_edge_pair(n_free: int, offsets: tuple[int, ...], p: float, d: int, stream: RandomStream,
                   size: int, *, workers: int = 1) -> PairBatch:
    """Exchangeable pair on the free graph: resample one uniformly chosen edge."""
    return PairBatch.concat(generate(_free_edge_pair_chunk, (n_free, offsets, p, d), size, stream,
                                     workers=workers))


@lru_cache(maxsize=4096)
def _nested_free_shift_tv(n_free, offsets, p, d, stream, samples) -> float:
    pairs = free_edge_pair(n_free, offsets, p, d, stream.child(f"{n_free}:{offsets}"), samples)
    try:
        est = rollin_ross_bound(pairs.v, pairs.v_prime, n_boot=0)
    except ValueError:
        return 1.0
    return min(est.value, 1.0)


class ErdosRenyiDegree:
    """Size-bias view of the degree-``d`` count."""

    name = "er_degree"

    def __init__(self, params: ErdosRenyiDegreeParams):
        self.params = params
        self.ctx_fields = ctx_fields(params.d)

    def mean(self) -> float:
        return er_exact_moments(self.params)[0]

    def size_bias_chunk(self, rng, size):
        return er_size_bias_chunk(self.params, rng, size)

    def size_bias_exhaustive(self):
        return er_size_bias_exhaustive(self.params)

    def context_shift_tv(self, ctx, mode: str = "exact", *, stream=None,
                         nested_samples: int = 20000) -> float:
        if mode == "upper":
            return 1.0
        n_free, offsets = conditional_free_model(self.params, ctx)
        p, d = self.params.p, self.params.d
        if n_free < 2:
            return 1.0
        if mode == "exact":
            return shift_tv_exact(free_graph_pmf(n_free, offsets, p, d))
        if mode == "nested":
            stream = stream or RandomStream(name="er_degree/nested")
            return _nested_free_shift_tv(n_free, offsets, p, d, stream, nested_samples)
        raise ValueError(f"unknown conditional mode {mode!r}")

    @staticmethod
    def exact_free_feasible(n_free: int) -> bool:
        return n_free * (n_free - 1) // 2 <= EXACT_FREE_EDGES

