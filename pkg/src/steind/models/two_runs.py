"""2-runs on a cycle: ``S = sum_i zeta_i zeta_{i+1}`` with i.i.d. Bernoulli(p) bits.

Indices wrap around mod ``n``. The coupling is the local-dependence one with
``A_i = {i-1, i, i+1}`` and ``B_i = {i-2, ..., i+2}``; the conditioning
information for index ``i`` is the window ``(zeta_{i-1}, ..., zeta_{i+2})``.
Given the window, ``S`` is a constant plus

    V = a zeta'_1 + sum_{j=2}^{m} zeta'_{j-1} zeta'_j + b zeta'_m

over the ``m = n - 4`` free bits, with ``a = zeta_{i+2}`` and
``b = zeta_{i-1}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np

from ..bounds import IndexShiftTerms, LocalDepIngredients
from ..couplings import PairBatch, coordinate_resample_pair
from ..dist import IntegerPMF, shift_tv_exact
from ..estimators import rollin_ross_bound
from ..rng import RandomStream

DP_STATE_BUDGET = 1 << 15
ENUM_MAX_N = 20


@dataclass(frozen=True)
class TwoRunsParams:
    n: int
    p: float

    def __post_init__(self):
        if self.n < 7:
            raise ValueError("2-runs needs n >= 7")
        if not 0 < self.p < 1:
            raise ValueError("p must lie strictly inside (0, 1)")


def two_runs_exact_moments(params: TwoRunsParams) -> tuple[float, float]:
    n, p = params.n, params.p
    return n * p ** 2, n * (p ** 2 + 2 * p ** 3 - 3 * p ** 4)


def _advance(state: list[np.ndarray], p: float) -> list[np.ndarray]:
    """One more bit: ``state[b][k]`` is P(last bit b, count k)."""
    q = 1 - p
    s0, s1 = state
    new0 = q * (s0 + s1)
    new1 = p * s0 + p * np.concatenate(([0.0], s1[:-1]))
    return [new0, new1]


def two_runs_exact_pmf(params: TwoRunsParams, max_states: int = DP_STATE_BUDGET) -> IntegerPMF:
    """Exact law of ``S`` by a transfer-matrix pass around the cycle.

    The first bit is fixed to each value in turn; the wrap-around term
    ``zeta_n zeta_1`` is added at the end.
    """
    n, p = params.n, params.p
    if 4 * (n + 1) > max_states:
        raise ValueError(f"n={n} exceeds the DP budget; use Monte Carlo")
    total = np.zeros(n + 1)
    for first, w in ((0, 1 - p), (1, p)):
        state = [np.zeros(n + 1), np.zeros(n + 1)]
        state[first][0] = w
        for _ in range(n - 1):
            state = _advance(state, p)
        total += state[0]
        if first:
            total[1:] += state[1][:-1]
        else:
            total += state[1]
    return IntegerPMF(0, total)


@lru_cache(maxsize=None)
def path_pmf(m: int, a: int, b: int, p: float) -> IntegerPMF:
    """Law of ``a z_1 + sum_{j=2}^m z_{j-1} z_j + b z_m`` for i.i.d. Bernoulli(p) bits."""
    if m < 1:
        raise ValueError("need at least one free bit")
    size = m + 2
    state = [np.zeros(size), np.zeros(size)]
    state[0][0] = 1 - p
    state[1][a] = p
    for _ in range(m - 1):
        state = _advance(state, p)
    out = state[0].copy()
    if b:
        out[1:] += state[1][:-1]
    else:
        out += state[1]
    return IntegerPMF(0, out)


def two_runs_bruteforce_pmf(params: TwoRunsParams) -> IntegerPMF:
    if params.n > ENUM_MAX_N:
        raise ValueError("brute force limited to n <= 20")
    bits, w = enumerate_bits(params.n, params.p)
    s = (bits * np.roll(bits, -1, axis=1)).sum(axis=1)
    probs = np.bincount(s, weights=w, minlength=params.n + 1)
    return IntegerPMF(0, probs)


def enumerate_bits(n: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    codes = np.arange(1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int64)
    k = bits.sum(axis=1)
    return bits, p ** k * (1 - p) ** (n - k)


def two_runs_conditional_shift_tv(params: TwoRunsParams, clamp: bool = True) -> float:
    """Uniform bound ``sqrt(3(n-4)) / (2(n-6) p^2 (1-p)^2)`` on the conditional shift-TV."""
    n, p = params.n, params.p
    value = math.sqrt(3 * (n - 4)) / (2 * (n - 6) * p ** 2 * (1 - p) ** 2)
    return min(value, 1.0) if clamp else value


def path_run_count(bits: np.ndarray, a: int, b: int) -> np.ndarray:
    """``V`` for each row of free bits (vectorized helper for resampling)."""
    inner = (bits[:, 1:] * bits[:, :-1]).sum(axis=1)
    return a * bits[:, 0] + inner + b * bits[:, -1]


def path_pair(m: int, a: int, b: int, p: float, stream: RandomStream, size: int, *,
              inputs=None, workers: int = 1) -> PairBatch:
    """Coordinate-resampling pair for the path statistic ``V``."""
    law = IntegerPMF(0, [1 - p, p])
    return coordinate_resample_pair(partial(path_run_count, a=a, b=b), [law] * m, stream, size,
                                    inputs=inputs, workers=workers)


class TwoRuns:
    """Local-dependence view of the 2-runs statistic."""

    name = "two_runs"
    ctx_fields = ("I", "w0", "w1", "w2", "w3")

    def __init__(self, params: TwoRunsParams):
        self.params = params
        self.n = params.n
        self.p = params.p

    def term_means(self) -> np.ndarray:
        return np.full(self.n, self.p ** 2)

    def neighborhoods(self) -> list[np.ndarray]:
        n = self.n
        return [np.array([(i - 1) % n, i, (i + 1) % n]) for i in range(n)]

    def second_neighborhoods(self) -> list[np.ndarray]:
        n = self.n
        return [np.array([(i + k) % n for k in range(-2, 3)]) for i in range(n)]

    def theta(self) -> int:
        """``max_i |{j : A_j meets B_i}|``."""
        hoods = [set(a.tolist()) for a in self.neighborhoods()]
        return max(
            sum(1 for a in hoods if a & set(b.tolist()))
            for b in self.second_neighborhoods()
        )

    def sample_raw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return (rng.random((size, self.n)) < self.p).astype(np.int64)

    def enumerate_raw(self) -> tuple[np.ndarray, np.ndarray]:
        return enumerate_bits(self.n, self.p)

    def terms(self, raw: np.ndarray) -> np.ndarray:
        return raw * np.roll(raw, -1, axis=1)

    def context(self, raw: np.ndarray, index: np.ndarray) -> np.ndarray:
        rows = np.arange(len(index))[:, None]
        cols = (index[:, None] + np.arange(-1, 3)) % self.n
        return np.column_stack([index, raw[rows, cols]])

    def window_shift_tv(self, ctx: tuple, mode: str = "exact", *, stream=None,
                        nested_samples: int = 20000) -> float:
        """Conditional shift-TV of ``S`` given the window in ``ctx``."""
        _, w0, _, _, w3 = ctx
        return self.path_shift_tv(w3, w0, mode, stream=stream, nested_samples=nested_samples)

    def path_shift_tv(self, a: int, b: int, mode: str = "exact", *, stream=None,
                      nested_samples: int = 20000) -> float:
        m = self.n - 4
        if mode == "exact":
            return shift_tv_exact(path_pmf(m, a, b, self.p))
        if mode == "analytic":
            return two_runs_conditional_shift_tv(self.params)
        if mode == "nested":
            stream = stream or RandomStream(name="two_runs/nested")
            pairs = path_pair(m, a, b, self.p, stream.child(f"{a}{b}"), nested_samples)
            try:
                est = rollin_ross_bound(pairs.v, pairs.v_prime, n_boot=0)
            except ValueError:
                return 1.0
            return min(est.value, 1.0)
        if mode == "upper":
            return 1.0
        raise ValueError(f"unknown conditional mode {mode!r}")

    def window_probs(self) -> tuple[np.ndarray, np.ndarray]:
        """All 16 windows ``(zeta_{i-1}, ..., zeta_{i+2})`` and their probabilities."""
        wins = np.array(list(itertools.product((0, 1), repeat=4)), dtype=np.int64)
        k = wins.sum(axis=1)
        return wins, self.p ** k * (1 - self.p) ** (4 - k)

    def _window_xi_eta(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        wins, w = self.window_probs()
        _, s2 = two_runs_exact_moments(self.params)
        sigma = math.sqrt(s2)
        mu = self.p ** 2
        x = np.column_stack([wins[:, 0] * wins[:, 1], wins[:, 1] * wins[:, 2], wins[:, 2] * wins[:, 3]])
        xi = (x[:, 1] - mu) / sigma
        eta = (x.sum(axis=1) - 3 * mu) / sigma
        return wins, w, xi, eta

    def local_dep_ingredients(self) -> LocalDepIngredients:
        """Exact per-index moments of ``xi_i`` and ``eta_i`` from the 16 windows."""
        _, w, xi, eta = self._window_xi_eta()
        _, s2 = two_runs_exact_moments(self.params)

        def each(values):
            return np.full(self.n, float(np.dot(w, values)))

        return LocalDepIngredients(
            theta=self.theta(), n=self.n, sigma=math.sqrt(s2),
            e_xi2_eta2=each(xi ** 2 * eta ** 2),
            e_abs_xi_eta2=each(np.abs(xi * eta ** 2)),
            e_xi2_eta4=each(xi ** 2 * eta ** 4),
            e_abs_xi_eta=each(np.abs(xi * eta)),
        )

    def window_shift_terms(self, mode: str = "exact", *, stream=None,
                           nested_samples: int = 20000) -> IndexShiftTerms:
        """``E[|xi eta| delta]`` and ``E[delta]`` per index, ``delta`` the conditional shift-TV."""
        wins, w, xi, eta = self._window_xi_eta()
        delta = np.array([self.path_shift_tv(int(win[3]), int(win[0]), mode, stream=stream,
                                             nested_samples=nested_samples) for win in wins])
        return IndexShiftTerms(
            np.full(self.n, float(np.dot(w, np.abs(xi * eta) * delta))),
            np.full(self.n, float(np.dot(w, delta))),
        )
