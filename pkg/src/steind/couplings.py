"""Stein couplings, exchangeable pairs and their verification.

A Stein coupling is a triple ``(S, S', G)`` with
``E[G f(S') - G f(S)] = E[(S - mu) f(S)]`` for all admissible ``f``.

Draws are held column-wise in :class:`CouplingBatch`. ``D = S' - S`` is kept
as an integer part plus a real offset so that integer differences are exact;
for local-dependence couplings the offset is the sum of term means over the
neighbourhood. ``ctx`` holds, per draw, the integer fields of the
conditioning information: enough to determine ``(G, D)`` and the conditional
law of ``S`` up to a constant shift.

A batch either comes from Monte Carlo (``weights is None``) or enumerates all
outcomes with their probabilities, in which case estimators are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Protocol, Sequence

import numpy as np

from .dist import IntegerPMF
from .estimators import EstimateWithError, mean_estimate
from .rng import DEFAULT_CHUNK, RandomStream, generate

PAD = -1


@dataclass(frozen=True, order=True)
class ContextKey:
    """Canonical, hashable record of one realization of the conditioning information."""

    items: tuple[tuple[str, int], ...]

    @classmethod
    def from_row(cls, fields: Sequence[str], row) -> "ContextKey":
        return cls(tuple(sorted((f, int(v)) for f, v in zip(fields, row))))

    def as_dict(self) -> dict:
        return dict(self.items)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


@dataclass(frozen=True)
class CouplingDraw:
    s: int
    s_prime: float
    g: float
    context: ContextKey

    @property
    def d(self) -> float:
        return self.s_prime - self.s


@dataclass(frozen=True)
class ExchangeablePairDraw:
    v: int
    v_prime: int


def _pad_to(ctx: np.ndarray, width: int) -> np.ndarray:
    if ctx.shape[1] == width:
        return ctx
    out = np.full((ctx.shape[0], width), PAD, dtype=np.int64)
    out[:, :ctx.shape[1]] = ctx
    return out


@dataclass(frozen=True, eq=False)
class CouplingBatch:
    s: np.ndarray
    d_int: np.ndarray
    g: np.ndarray
    ctx: np.ndarray
    ctx_fields: tuple[str, ...]
    d_off: np.ndarray = field(default=None)
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.s)
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.int64))
        object.__setattr__(self, "d_int", np.asarray(self.d_int, dtype=np.int64))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=np.float64))
        ctx = np.asarray(self.ctx, dtype=np.int64)
        if ctx.ndim == 1:
            ctx = ctx[:, None]
        object.__setattr__(self, "ctx", ctx)
        off = np.zeros(n) if self.d_off is None else np.broadcast_to(np.asarray(self.d_off, dtype=np.float64), (n,))
        object.__setattr__(self, "d_off", np.array(off))
        if not (len(self.d_int) == len(self.g) == ctx.shape[0] == n):
            raise ValueError("coupling batch columns must have equal length")
        if len(self.ctx_fields) != ctx.shape[1]:
            raise ValueError("ctx_fields must name every context column")

    def __len__(self):
        return len(self.s)

    @property
    def exact(self) -> bool:
        return self.weights is not None

    @property
    def d(self) -> np.ndarray:
        return self.d_int + self.d_off

    @property
    def s_prime(self) -> np.ndarray:
        return self.s + self.d_int + self.d_off

    def draws(self) -> Iterator[CouplingDraw]:
        sp = self.s_prime
        for k in range(len(self)):
            yield CouplingDraw(int(self.s[k]), float(sp[k]), float(self.g[k]),
                               ContextKey.from_row(self.ctx_fields, self.ctx[k]))

    def to_jsonl(self) -> str:
        sp = self.s_prime
        lines = []
        for k in range(len(self)):
            ctx = {f: int(v) for f, v in sorted(zip(self.ctx_fields, self.ctx[k]))}
            lines.append(json.dumps({"s": int(self.s[k]), "sp": float(repr_float(sp[k])),
                                     "g": float(repr_float(self.g[k])), "ctx": ctx}, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "CouplingBatch":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        fields = tuple(sorted(rows[0]["ctx"]))
        s = np.array([r["s"] for r in rows], dtype=np.int64)
        sp = np.array([r["sp"] for r in rows], dtype=np.float64)
        d_int = np.round(sp - s).astype(np.int64)
        return cls(s, d_int, [r["g"] for r in rows], [[r["ctx"][f] for f in fields] for r in rows],
                   fields, d_off=sp - s - d_int)

    @staticmethod
    def concat(batches: Sequence["CouplingBatch"]) -> "CouplingBatch":
        if not batches:
            raise ValueError("nothing to concatenate")
        fields = max((b.ctx_fields for b in batches), key=len)
        width = len(fields)
        weights = None
        if batches[0].weights is not None:
            weights = np.concatenate([b.weights for b in batches])
        return CouplingBatch(
            np.concatenate([b.s for b in batches]),
            np.concatenate([b.d_int for b in batches]),
            np.concatenate([b.g for b in batches]),
            np.concatenate([_pad_to(b.ctx, width) for b in batches]),
            fields,
            d_off=np.concatenate([b.d_off for b in batches]),
            weights=weights,
        )


def repr_float(x) -> float:
    return float(f"{float(x):.17g}")


@dataclass(frozen=True, eq=False)
class PairBatch:
    """Column-wise exchangeable-pair draws ``(V, V')``."""

    v: np.ndarray
    v_prime: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.int64))
        object.__setattr__(self, "v_prime", np.asarray(self.v_prime, dtype=np.int64))
        if self.v.shape != self.v_prime.shape:
            raise ValueError("pair columns must have equal length")

    def __len__(self):
        return len(self.v)

    def draws(self) -> Iterator[ExchangeablePairDraw]:
        for a, b in zip(self.v, self.v_prime):
            yield ExchangeablePairDraw(int(a), int(b))

    def swapped(self) -> "PairBatch":
        return PairBatch(self.v_prime, self.v, self.weights)

    @staticmethod
    def concat(batches: Sequence["PairBatch"]) -> "PairBatch":
        weights = None
        if batches[0].weights is not None:
            weights = np.concatenate([b.weights for b in batches])
        return PairBatch(np.concatenate([b.v for b in batches]),
                         np.concatenate([b.v_prime for b in batches]), weights)


def _categorical(rng: np.random.Generator, probs: np.ndarray, size: int) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(probs) - 1)


def sample_pmf(pmf: IntegerPMF, rng: np.random.Generator, size) -> np.ndarray:
    """Inverse-CDF sampling from an IntegerPMF."""
    n = int(np.prod(size))
    return (pmf.offset + _categorical(rng, pmf.probs, n)).reshape(size)


# Mineka coupling -----------------------------------------------------------

def mineka_joint(marginal: IntegerPMF) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Outcomes ``(x, x')`` and their probabilities under the Mineka coupling.

    With ``a_j = min(p_j, p_{j+1}) / 2`` the coupling puts ``a_j`` on each of
    ``(j, j+1)`` and ``(j+1, j)`` and ``p_j - a_{j-1} - a_j`` on ``(j, j)``.
    """
    p = marginal.probs
    z = marginal.support()
    alpha = np.minimum(p[:-1], p[1:]) / 2
    a_prev = np.concatenate(([0.0], alpha))
    a_next = np.concatenate((alpha, [0.0]))
    stay = np.clip(p - a_prev - a_next, 0.0, None)
    x = np.concatenate((z, z[:-1], z[1:]))
    xp = np.concatenate((z, z[1:], z[:-1]))
    w = np.concatenate((stay, alpha, alpha))
    keep = w > 0
    return x[keep], xp[keep], w[keep]


def _mineka_chunk(marginal: IntegerPMF, rng: np.random.Generator, size: int) -> PairBatch:
    x, xp, w = mineka_joint(marginal)
    k = _categorical(rng, w, size)
    return PairBatch(x[k], xp[k])


def mineka_pair(marginal: IntegerPMF, stream: RandomStream, size: int = 1, *,
                workers: int = 1) -> PairBatch:
    """``size`` draws of the Mineka coupling of ``marginal`` with itself."""
    return PairBatch.concat(generate(_mineka_chunk, (marginal,), size, stream, workers=workers))


# Coordinate resampling -----------------------------------------------------

def _coordinate_chunk(func, laws, inputs, rng, size):
    n = len(laws)
    if inputs is None:
        x = np.column_stack([sample_pmf(law, rng, size) for law in laws])
    else:
        x = np.broadcast_to(np.asarray(inputs, dtype=np.int64), (size, n)).copy()
    idx = rng.integers(0, n, size)
    fresh = np.column_stack([sample_pmf(law, rng, size) for law in laws])
    xp = x.copy()
    rows = np.arange(size)
    xp[rows, idx] = fresh[rows, idx]
    return PairBatch(func(x), func(xp))


def coordinate_resample_pair(
    func: Callable[[np.ndarray], np.ndarray],
    input_laws: Sequence[IntegerPMF],
    stream: RandomStream,
    size: int = 1,
    *,
    inputs: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> PairBatch:
    """Pairs ``(f(X), f(X with one uniform coordinate resampled))``.

    ``func`` maps an ``(N, n)`` integer array of inputs to ``N`` values. With
    ``inputs`` fixed, every draw starts from that input vector, which samples
    the pair conditionally on ``X``. Resamples equal to the old value are kept.
    """
    if len(input_laws) < 1:
        raise ValueError("need at least one input coordinate")
    return PairBatch.concat(generate(_coordinate_chunk, (func, tuple(input_laws), inputs), size,
                                     stream, workers=workers))


def coordinate_resample_step_probs(
    func: Callable[[np.ndarray], np.ndarray],
    input_laws: Sequence[IntegerPMF],
    inputs: Sequence[int],
) -> dict[int, float]:
    """Exact law of ``V - V'`` given ``X = inputs`` by enumerating index and new value."""
    x = np.asarray(inputs, dtype=np.int64)
    n = len(input_laws)
    v = func(x[None, :])[0]
    out: dict[int, float] = {}
    for i, law in enumerate(input_laws):
        for val, p in zip(law.support(), law.probs):
            y = x.copy()
            y[i] = val
            step = int(v - func(y[None, :])[0])
            out[step] = out.get(step, 0.0) + p / n
    return out


# Local dependence ----------------------------------------------------------

class LocalDependenceModel(Protocol):
    """A sum of integer terms ``X_i`` with dependency neighbourhoods ``A_i``."""

    n: int
    ctx_fields: tuple[str, ...]

    def term_means(self) -> np.ndarray: ...

    def neighborhoods(self) -> list[np.ndarray]: ...

    def sample_raw(self, rng: np.random.Generator, size: int) -> np.ndarray: ...

    def enumerate_raw(self) -> tuple[np.ndarray, np.ndarray]: ...

    def terms(self, raw: np.ndarray) -> np.ndarray: ...

    def context(self, raw: np.ndarray, index: np.ndarray) -> np.ndarray: ...


def _neighborhood_matrix(model: LocalDependenceModel) -> tuple[np.ndarray, np.ndarray]:
    hoods = model.neighborhoods()
    if len(hoods) != model.n:
        raise ValueError("one neighbourhood per term required")
    width = max(len(a) for a in hoods)
    mat = np.zeros((model.n, width), dtype=np.int64)
    mask = np.zeros((model.n, width), dtype=bool)
    for i, a in enumerate(hoods):
        a = np.asarray(a, dtype=np.int64)
        if a.size == 0 or i not in set(a.tolist()):
            raise ValueError(f"neighbourhood A_{i} must contain {i}")
        mat[i, :a.size] = a
        mask[i, :a.size] = True
    return mat, mask


def local_dep_batch(model: LocalDependenceModel, raw: np.ndarray, index: np.ndarray,
                    weights: Optional[np.ndarray] = None) -> CouplingBatch:
    """``(S, S - sum_{A_I}(X_j - mu_j), -n(X_I - mu_I))`` for given inputs and indices."""
    mat, mask = _neighborhood_matrix(model)
    x = model.terms(raw)
    mu = np.asarray(model.term_means(), dtype=np.float64)
    rows = np.arange(len(index))
    hood = mat[index]
    hmask = mask[index]
    xa = np.where(hmask, x[rows[:, None], hood], 0)
    mua = np.where(hmask, mu[hood], 0.0).sum(axis=1)
    s = x.sum(axis=1)
    g = -model.n * (x[rows, index] - mu[index])
    return CouplingBatch(s, -xa.sum(axis=1), g, model.context(raw, index), model.ctx_fields,
                         d_off=mua, weights=weights)


def _local_dep_chunk(model, rng, size):
    raw = model.sample_raw(rng, size)
    index = rng.integers(0, model.n, size)
    return local_dep_batch(model, raw, index)


def local_dep_coupling_draw(model: LocalDependenceModel, stream: RandomStream, size: int, *,
                            workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> CouplingBatch:
    return CouplingBatch.concat(generate(_local_dep_chunk, (model,), size, stream,
                                         chunk_size=chunk_size, workers=workers))


def local_dep_exhaustive(model: LocalDependenceModel) -> CouplingBatch:
    """Every input outcome paired with every index, with exact probabilities."""
    raw, w = model.enumerate_raw()
    n = model.n
    raw_rep = np.repeat(raw, n, axis=0)
    index = np.tile(np.arange(n), len(raw))
    return local_dep_batch(model, raw_rep, index, weights=np.repeat(w, n) / n)


# Size bias -----------------------------------------------------------------

class SizeBiasModel(Protocol):
    ctx_fields: tuple[str, ...]

    def mean(self) -> float: ...

    def size_bias_chunk(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(S, S^s, ctx)`` for ``size`` joint draws."""
        ...

    def size_bias_exhaustive(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(S, S^s, ctx, weights)`` over all outcomes."""
        ...


def size_bias_batch(mu: float, s, ss, ctx, fields, weights=None) -> CouplingBatch:
    if not mu > 0:
        raise ValueError("size bias needs a positive mean")
    s = np.asarray(s, dtype=np.int64)
    ss = np.asarray(ss, dtype=np.int64)
    return CouplingBatch(s, ss - s, np.full(len(s), float(mu)), ctx, fields, weights=weights)


def _size_bias_chunk(model, rng, size):
    s, ss, ctx = model.size_bias_chunk(rng, size)
    return size_bias_batch(model.mean(), s, ss, ctx, model.ctx_fields)


def size_bias_coupling_draw(model: SizeBiasModel, stream: RandomStream, size: int, *,
                            workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> CouplingBatch:
    """Draws ``(S, S^s, mu)`` from the model's joint size-bias construction."""
    if not model.mean() > 0:
        raise ValueError("size bias needs a positive mean")
    return CouplingBatch.concat(generate(_size_bias_chunk, (model,), size, stream,
                                         chunk_size=chunk_size, workers=workers))


def size_bias_exhaustive(model: SizeBiasModel) -> CouplingBatch:
    s, ss, ctx, w = model.size_bias_exhaustive()
    return size_bias_batch(model.mean(), s, ss, ctx, model.ctx_fields, weights=w)


# Verification --------------------------------------------------------------

def stein_identity_residual(batch: CouplingBatch, f: Callable[[np.ndarray], np.ndarray],
                            mu: float) -> EstimateWithError:
    """Estimate of ``E[G f(S') - G f(S)] - E[(S - mu) f(S)]``."""
    if batch.weights is None and len(batch) < 2:
        raise ValueError("need at least two draws")
    s = batch.s.astype(np.float64)
    fs = np.asarray(f(s), dtype=np.float64)
    fsp = np.asarray(f(batch.s_prime), dtype=np.float64)
    vals = batch.g * (fsp - fs) - (s - mu) * fs
    return mean_estimate(vals, batch.weights)


def swap_law_discrepancy(pairs: PairBatch, grid: Sequence[tuple[int, int]]) -> list[tuple[float, float]]:
    """Empirical ``P((V,V') = e) - P((V',V) = e)`` and its SE for each grid event.

    Exchangeability means every difference is zero in expectation.
    """
    out = []
    n = len(pairs)
    for a, b in grid:
        x = ((pairs.v == a) & (pairs.v_prime == b)).astype(np.float64)
        y = ((pairs.v == b) & (pairs.v_prime == a)).astype(np.float64)
        diff = x - y
        se = float(np.std(diff, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append((float(diff.mean()), se))
    return out
