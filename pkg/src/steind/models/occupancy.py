"""Uniform multinomial occupancy: ``S`` counts urns holding exactly ``d`` of ``n`` balls in ``m`` urns.

The size-bias construction picks an urn ``I`` and draws ``M(I) ~ Bin(n, 1/m)``.
The other urns get a multinomial ``M'`` on ``n - max(M(I), d)`` balls plus
an extra multinomial ``R`` on ``|d - M(I)|`` balls. ``R`` is added to ``M``
when ``M(I) < d`` and to the biased vector (where urn ``I`` holds ``d``)
when ``M(I) > d``.

Given ``I``, ``M(I)``, ``R`` and the counts of the urns ``R`` touches, the
untouched urns hold a uniform multinomial of ``n1`` balls over ``m1`` urns.
So the conditional law of ``S`` is a shift of the occupancy law with
parameters ``(n1, m1, d)``, and the context arrays only keep the numbers
that determine ``(n1, m1)`` and ``S^s - S``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from ..couplings import PairBatch
from ..dist import IntegerPMF, shift_tv_exact
from ..estimators import rollin_ross_bound
from ..rng import DEFAULT_CHUNK, RandomStream, generate

DP_MAX = 300
EXHAUSTIVE_MAX_OUTCOMES = 2_000_000


@dataclass(frozen=True)
class OccupancyParams:
    n: int
    m: int
    d: int

    def __post_init__(self):
        if not (self.n >= self.d >= 2):
            raise ValueError("occupancy needs n >= d >= 2")
        if self.m < 2:
            raise ValueError("occupancy needs m >= 2")


def occupancy_exact_moments(params: OccupancyParams) -> tuple[float, float]:
    """Closed-form mean and variance, with ``0**0 = 1``."""
    n, m, d = params.n, params.m, params.d
    mu = m * math.comb(n, d) * m ** (-d) * (1 - 1 / m) ** (n - d)
    pair = 0.0
    if n >= 2 * d:
        multi = math.factorial(n) // (math.factorial(d) ** 2 * math.factorial(n - 2 * d))
        pair = m * (m - 1) * multi * m ** (-2 * d) * (1 - 2 / m) ** (n - 2 * d)
    return mu, mu - mu ** 2 + pair


@lru_cache(maxsize=64)
def _avoid_table(n: int, m: int, d: int) -> np.ndarray:
    """``q[N, K]``: probability that ``N`` balls in ``K`` urns leave no urn at exactly ``d``.

    Built urn by urn: the first urn takes ``Bin(N, 1/K)`` balls.
    """
    q = np.zeros((n + 1, m + 1))
    q[0, 0] = 1.0
    big_n = np.arange(n + 1)[:, None]
    k = np.arange(n + 1)[None, :]
    valid = k <= big_n
    gather = np.where(valid, big_n - k, 0)
    for K in range(1, m + 1):
        w = np.where(valid, binom.pmf(k, big_n, 1.0 / K), 0.0)
        w[:, d] = 0.0
        q[:, K] = (w * q[gather, K - 1]).sum(axis=1)
    return q


def _occupancy_pmf(n: int, m: int, d: int, q: np.ndarray | None = None) -> IntegerPMF:
    """Occupancy law for any ``n, m >= 0`` (no parameter restrictions).

    ``q`` may be a larger avoidance table; its entries do not depend on ``n, m``.
    """
    if m == 0:
        return IntegerPMF.point_mass(0)
    if q is None or q.shape[0] <= n or q.shape[1] <= m:
        q = _avoid_table(n, m, d)
    top = min(m, n // d) if d > 0 else m
    probs = np.zeros(top + 1)
    for s in range(top + 1):
        rest_n, rest_m = n - s * d, m - s
        tail = q[rest_n, rest_m]
        if tail == 0.0:
            continue
        log_w = (gammaln(m + 1) - gammaln(s + 1) - gammaln(rest_m + 1)
                 + gammaln(n + 1) - s * gammaln(d + 1) - gammaln(rest_n + 1)
                 - s * d * math.log(m))
        if rest_n > 0:
            log_w += rest_n * math.log(rest_m / m) if rest_m > 0 else -math.inf
        probs[s] = math.exp(log_w) * tail
    return IntegerPMF(0, probs / math.fsum(probs))


def occupancy_exact_pmf(params: OccupancyParams, max_size: int = DP_MAX) -> IntegerPMF:
    if params.n > max_size or params.m > max_size:
        raise ValueError(f"n and m must be <= {max_size} for the exact DP; use Monte Carlo")
    return _occupancy_pmf(params.n, params.m, params.d)


def compositions(total: int, parts: int):
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + cut + (total + parts - 1,)
        yield tuple(edges[i + 1] - edges[i] - 1 for i in range(parts))


def _multinomial_prob(counts, parts: int) -> float:
    total = sum(counts)
    log_p = gammaln(total + 1) - sum(gammaln(c + 1) for c in counts) - total * math.log(parts)
    return math.exp(log_p)


def occupancy_bruteforce_pmf(params: OccupancyParams) -> IntegerPMF:
    """Enumerate all ``m**n`` ball assignments."""
    n, m, d = params.n, params.m, params.d
    if m ** n > EXHAUSTIVE_MAX_OUTCOMES:
        raise ValueError("too many assignments to enumerate")
    codes = np.arange(m ** n)
    balls = (codes[:, None] // m ** np.arange(n)) % m
    counts = np.stack([(balls == j).sum(axis=1) for j in range(m)], axis=1)
    s = (counts == d).sum(axis=1)
    return IntegerPMF(0, np.bincount(s, minlength=m + 1) / m ** n)


CTX_FIELDS = ("I", "M_I", "n_touched", "touched_mass", "dcount_touched", "dcount_touched_s")


def _summarize(params, index, m_i, rest, rest_s, r):
    """Statistics and context columns from the urns other than ``I``."""
    d = params.d
    touched = r > 0
    hit = rest == d
    hit_s = rest_s == d
    s = (m_i == d).astype(np.int64) + hit.sum(axis=1)
    ss = 1 + hit_s.sum(axis=1)
    ctx = np.column_stack([
        index, m_i, touched.sum(axis=1), np.where(touched, rest, 0).sum(axis=1),
        (hit & touched).sum(axis=1), (hit_s & touched).sum(axis=1),
    ])
    if np.any(np.abs(ss - s) > np.abs(m_i - d) + 1):
        raise AssertionError("size-bias displacement exceeds |M(I) - d| + 1")
    return s, ss, ctx


def occupancy_size_bias_chunk(params: OccupancyParams, rng: np.random.Generator, size: int):
    n, m, d = params.n, params.m, params.d
    index = rng.integers(0, m, size)
    m_i = rng.binomial(n, 1.0 / m, size)
    pv = np.full(m - 1, 1.0 / (m - 1))
    base = rng.multinomial(n - np.maximum(m_i, d), pv)
    r = rng.multinomial(np.abs(d - m_i), pv)
    rest = base + (m_i < d)[:, None] * r
    rest_s = base + (m_i > d)[:, None] * r
    return _summarize(params, index, m_i, rest, rest_s, r)


def occupancy_size_bias_exhaustive(params: OccupancyParams):
    """Every outcome of the construction randomness with its probability."""
    n, m, d = params.n, params.m, params.d
    rows_m, rows_base, rows_r, weights = [], [], [], []
    for m_i in range(n + 1):
        w_i = binom.pmf(m_i, n, 1.0 / m)
        for base in compositions(n - max(m_i, d), m - 1):
            w_b = _multinomial_prob(base, m - 1)
            for r in compositions(abs(d - m_i), m - 1):
                rows_m.append(m_i)
                rows_base.append(base)
                rows_r.append(r)
                weights.append(w_i * w_b * _multinomial_prob(r, m - 1))
    if len(weights) * m > EXHAUSTIVE_MAX_OUTCOMES:
        raise ValueError("construction too large to enumerate")
    k = len(weights)
    m_i = np.tile(np.array(rows_m, dtype=np.int64), m)
    base = np.tile(np.array(rows_base, dtype=np.int64).reshape(k, m - 1), (m, 1))
    r = np.tile(np.array(rows_r, dtype=np.int64).reshape(k, m - 1), (m, 1))
    index = np.repeat(np.arange(m), k)
    rest = base + (m_i < d)[:, None] * r
    rest_s = base + (m_i > d)[:, None] * r
    s, ss, ctx = _summarize(params, index, m_i, rest, rest_s, r)
    return s, ss, ctx, np.tile(np.array(weights), m) / m


def conditional_size(params: OccupancyParams, ctx) -> tuple[int, int]:
    """``(n1, m1)`` of the free sub-model for one context row."""
    c = dict(zip(CTX_FIELDS, (int(v) for v in ctx)))
    return params.n - c["M_I"] - c["touched_mass"], params.m - 1 - c["n_touched"]


def _ball_move_chunk(n: int, m: int, d: int, rng: np.random.Generator, size: int) -> PairBatch:
    if m == 0 or n == 0:
        zero = np.zeros(size, dtype=np.int64)
        return PairBatch(zero, zero)
    counts = rng.multinomial(n, np.full(m, 1.0 / m), size)
    # the ball's urn J is chosen with probability M(j)/n
    u = rng.integers(0, n, size)
    j = (np.cumsum(counts, axis=1) <= u[:, None]).sum(axis=1)
    k = rng.integers(0, m, size)
    rows = np.arange(size)
    moved = counts.copy()
    moved[rows, j] -= 1
    moved[rows, k] += 1
    return PairBatch((counts == d).sum(axis=1), (moved == d).sum(axis=1))


def occupancy_ball_move_pair(n: int, m: int, d: int, stream: RandomStream, size: int, *,
                             workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> PairBatch:
    """Exchangeable pair: move a uniformly chosen ball to a uniformly chosen urn.

    Works for any ``n, m >= 0`` so it also serves the conditional sub-models.
    """
    return PairBatch.concat(generate(_ball_move_chunk, (n, m, d), size, stream,
                                     chunk_size=chunk_size, workers=workers))


@lru_cache(maxsize=4096)
def _exact_sub_shift_tv(n1: int, m1: int, d: int, n: int, m: int) -> float:
    return shift_tv_exact(_occupancy_pmf(n1, m1, d, _avoid_table(n, m, d)))


@lru_cache(maxsize=4096)
def _nested_sub_shift_tv(n1: int, m1: int, d: int, stream: RandomStream, samples: int) -> float:
    pairs = occupancy_ball_move_pair(n1, m1, d, stream.child(f"{n1},{m1}"), samples)
    try:
        est = rollin_ross_bound(pairs.v, pairs.v_prime, n_boot=0)
    except ValueError:
        return 1.0
    return min(est.value, 1.0)


class Occupancy:
    """Size-bias view of the occupancy count."""

    name = "occupancy"
    ctx_fields = CTX_FIELDS

    def __init__(self, params: OccupancyParams):
        self.params = params

    def mean(self) -> float:
        return occupancy_exact_moments(self.params)[0]

    def size_bias_chunk(self, rng, size):
        return occupancy_size_bias_chunk(self.params, rng, size)

    def size_bias_exhaustive(self):
        return occupancy_size_bias_exhaustive(self.params)

    def context_shift_tv(self, ctx, mode: str = "exact", *, stream=None,
                         nested_samples: int = 20000) -> float:
        n1, m1 = conditional_size(self.params, ctx)
        d = self.params.d
        if mode == "upper":
            return 1.0
        if mode == "exact":
            return _exact_sub_shift_tv(n1, m1, d, self.params.n, self.params.m)
        if mode == "nested":
            stream = stream or RandomStream(name="occupancy/nested")
            return _nested_sub_shift_tv(n1, m1, d, stream, nested_samples)
        raise ValueError(f"unknown conditional mode {mode!r}")

