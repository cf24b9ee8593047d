"""Binomial reference model: ``S = X_1 + ... + X_n`` with i.i.d. Bernoulli(p) coordinates.

Resampling one uniformly chosen coordinate gives an exchangeable pair with
``E(S - S' | S) = (S - np)/n`` exactly and ``|S - S'| <= 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..couplings import PairBatch, coordinate_resample_pair
from ..dist import IntegerPMF, binomial_pmf
from ..rng import RandomStream

CERTIFICATE_MAX_N = 12


@dataclass(frozen=True)
class BinomialRefParams:
    n: int
    p: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 < self.p < 1:
            raise ValueError("p must lie strictly inside (0, 1)")


def binomial_exact_moments(params: BinomialRefParams) -> tuple[float, float]:
    return params.n * params.p, params.n * params.p * (1 - params.p)


def binomial_exact_pmf(params: BinomialRefParams) -> IntegerPMF:
    return binomial_pmf(params.n, params.p)


def _row_sum(x: np.ndarray) -> np.ndarray:
    return x.sum(axis=1)


def binomial_ref_pair(params: BinomialRefParams, stream: RandomStream, size: int = 1, *,
                      workers: int = 1) -> PairBatch:
    law = IntegerPMF(0, [1 - params.p, params.p])
    return coordinate_resample_pair(_row_sum, [law] * params.n, stream, size, workers=workers)


def binomial_pair_exact(params: BinomialRefParams) -> PairBatch:
    """Joint law of ``(S, S')`` as a weighted batch."""
    n, p = params.n, params.p
    base = binomial_exact_pmf(params)
    v, vp, w = [], [], []
    for s, ps in zip(base.support(), base.probs):
        s = int(s)
        moves = {s - 1: s / n * (1 - p), s + 1: (n - s) / n * p}
        moves[s] = 1.0 - moves[s - 1] - moves[s + 1]
        for t, q in moves.items():
            if q > 0:
                v.append(s)
                vp.append(t)
                w.append(ps * q)
    return PairBatch(np.array(v), np.array(vp), np.array(w))


@dataclass(frozen=True)
class LinearityCertificate:
    n: int
    lam: Fraction
    remainder_zero: bool
    unit_step: bool


def linearity_certificate(n: int, p: Fraction | float | str = Fraction(1, 2)) -> LinearityCertificate:
    """Check ``E(S - S' | X) = (S - np)/n`` and ``|S - S'| <= 1`` in exact arithmetic.

    Enumerates every input vector, resampled index and new value.
    """
    if n > CERTIFICATE_MAX_N:
        raise ValueError(f"certificate enumeration limited to n <= {CERTIFICATE_MAX_N}")
    p = Fraction(p)
    q = 1 - p
    lam = Fraction(1, n)
    ok_linear = ok_step = True
    for x in itertools.product((0, 1), repeat=n):
        s = sum(x)
        drift = Fraction(0)
        for i in range(n):
            for val, pv in ((0, q), (1, p)):
                step = x[i] - val
                ok_step &= abs(step) <= 1
                drift += lam * pv * step
        ok_linear &= drift == lam * (s - n * p)
    return LinearityCertificate(n, lam, ok_linear, ok_step)


def exact_pair_ingredients(params: BinomialRefParams) -> dict[str, float]:
    """``lam``, ``E R^2`` and ``Var E(D^2 | S)`` in closed form."""
    n, p = params.n, params.p
    base = binomial_exact_pmf(params)
    s = base.support().astype(np.float64)
    cond_d2 = (s * (1 - p) + (n - s) * p) / n
    mean = float(np.dot(base.probs, cond_d2))
    return {
        "lam": 1.0 / n,
        "e_r2": 0.0,
        "var_cond_d2": float(np.dot(base.probs, (cond_d2 - mean) ** 2)),
    }
