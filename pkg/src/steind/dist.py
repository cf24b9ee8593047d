"""Exact probability-mass machinery on the integers.

Everything here is a pure function of immutable values. The discretized
normal ``N^d(mu, sigma2)`` puts mass ``P(z - 1/2 <= Z < z + 1/2)`` on each
integer ``z`` for ``Z ~ N(mu, sigma2)``.

A second discretization with mass ``P(z <= Z < z + 1)`` differs from this one
by a half-unit shift of the mean, so its total-variation distance to ``N^d``
is of order ``1/sigma``. Only ``N^d`` is provided.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy import special

MASS_TOL = 1e-9
DEFAULT_EPS = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class PMFError(ValueError):
    """Raised when a probability vector violates the IntegerPMF invariants."""


@dataclass(frozen=True, eq=False)
class IntegerPMF:
    """Finite-support pmf over the integers, stored in trimmed form.

    ``probs[k]`` is the mass at ``offset + k``. Leading and trailing zeros are
    trimmed on construction; any other invariant violation raises
    :class:`PMFError`.
    """

    offset: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64).ravel()
        if probs.size == 0:
            raise PMFError("empty probability vector")
        if not np.all(np.isfinite(probs)):
            raise PMFError("non-finite probability")
        if np.any(probs < 0):
            raise PMFError(f"negative probability {probs.min()!r}")
        total = math.fsum(probs)
        if abs(total - 1.0) > MASS_TOL:
            raise PMFError(f"probabilities sum to {total!r}, not 1")
        nz = np.flatnonzero(probs)
        lo, hi = int(nz[0]), int(nz[-1])
        probs = probs[lo:hi + 1]
        probs.setflags(write=False)
        object.__setattr__(self, "offset", int(self.offset) + lo)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, z: int) -> "IntegerPMF":
        return cls(z, np.ones(1))

    @classmethod
    def from_dict(cls, masses: dict) -> "IntegerPMF":
        lo, hi = min(masses), max(masses)
        probs = np.zeros(hi - lo + 1)
        for z, w in masses.items():
            probs[z - lo] += w
        return cls(lo, probs)

    @property
    def lo(self) -> int:
        return self.offset

    @property
    def hi(self) -> int:
        return self.offset + self.probs.size - 1

    def support(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def pmf(self, z: int) -> float:
        k = z - self.offset
        if 0 <= k < self.probs.size:
            return float(self.probs[k])
        return 0.0

    def mean(self) -> float:
        return float(np.dot(self.support(), self.probs))

    def var(self) -> float:
        m = self.mean()
        return float(np.dot((self.support() - m) ** 2, self.probs))

    def shifted(self, k: int) -> "IntegerPMF":
        """Law of ``X + k``."""
        return IntegerPMF(self.offset + k, self.probs)

    def size_biased(self) -> "IntegerPMF":
        """Law with mass ``z p(z) / E X``; requires non-negative support."""
        if self.lo < 0:
            raise PMFError("size bias needs non-negative support")
        mu = self.mean()
        if mu <= 0:
            raise PMFError("size bias undefined for mean 0")
        return IntegerPMF(self.offset, self.support() * self.probs / mu)

    def to_json(self) -> str:
        return json.dumps({"offset": self.offset, "probs": [float(p) for p in self.probs]})

    @classmethod
    def from_json(cls, text: str) -> "IntegerPMF":
        obj = json.loads(text)
        return cls(int(obj["offset"]), obj["probs"])

    def __eq__(self, other):
        if not isinstance(other, IntegerPMF):
            return NotImplemented
        return self.offset == other.offset and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"IntegerPMF(offset={self.offset}, size={self.probs.size}, mean={self.mean():.6g})"


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2!r}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu!r}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via ``erfc``, accurate in both tails."""
    if math.isnan(x):
        raise ValueError("x is NaN")
    return 0.5 * math.erfc(-x * _INV_SQRT2)


def std_normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x * _INV_SQRT2)


def dnormal_pmf(params: NormalParams, z: int) -> float:
    """Mass of ``N^d(mu, sigma2)`` at the integer ``z``."""
    s = params.sigma
    a = (z - 0.5 - params.mu) / s
    b = (z + 0.5 - params.mu) / s
    # difference of upper tails above the mean avoids cancellation
    if z >= params.mu:
        return std_normal_sf(a) - std_normal_sf(b)
    return std_normal_cdf(b) - std_normal_cdf(a)


def dnormal_probs(params: NormalParams, zs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`dnormal_pmf`."""
    zs = np.asarray(zs, dtype=np.float64)
    s = params.sigma
    a = (zs - 0.5 - params.mu) / s
    b = (zs + 0.5 - params.mu) / s
    upper = special.ndtr(-a) - special.ndtr(-b)
    lower = special.ndtr(b) - special.ndtr(a)
    return np.where(zs >= params.mu, upper, lower)


def dnormal_pmf_table(params: NormalParams, eps: float = DEFAULT_EPS) -> tuple[IntegerPMF, float]:
    """Truncated table of ``N^d`` with omitted mass below ``eps``.

    Returns ``(pmf, omitted)``. The table is not renormalized, so
    ``1 - sum(pmf.probs) == omitted`` up to rounding. The support is chosen
    with an internal tolerance of ``min(eps, 1e-10)`` so the table always
    satisfies the IntegerPMF mass check.
    """
    if not (0 < eps < 1):
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    eff = min(eps, 1e-10)
    if eff < 1e-300:
        raise ValueError(f"eps={eps!r} too small to represent")
    s = params.sigma
    radius = -NormalDist().inv_cdf(eff / 4) * s
    if radius > max(12 * s, 50.0):
        raise ValueError(f"eps={eps!r} needs support radius {radius:.3g} beyond cap")
    lo = math.floor(params.mu - radius)
    hi = math.ceil(params.mu + radius)
    zs = np.arange(lo, hi + 1)
    probs = dnormal_probs(params, zs)
    omitted = std_normal_cdf((lo - 0.5 - params.mu) / s) + std_normal_sf((hi + 0.5 - params.mu) / s)
    return IntegerPMF(lo, probs), omitted


def _aligned(p: IntegerPMF, q: IntegerPMF) -> tuple[np.ndarray, np.ndarray]:
    lo = min(p.lo, q.lo)
    hi = max(p.hi, q.hi)
    a = np.zeros(hi - lo + 1)
    b = np.zeros(hi - lo + 1)
    a[p.lo - lo:p.hi - lo + 1] = p.probs
    b[q.lo - lo:q.hi - lo + 1] = q.probs
    return a, b


def tv(p: IntegerPMF, q: IntegerPMF) -> float:
    """Total variation distance, half the L1 distance between the pmfs."""
    a, b = _aligned(p, q)
    return 0.5 * math.fsum(np.abs(a - b))


def shift_tv_exact(p: IntegerPMF) -> float:
    """``d_TV(L(V), L(V+1))`` for ``V ~ p``."""
    return tv(p, p.shifted(1))


def tv_to_dnormal(p: IntegerPMF, params: NormalParams, eps: float = DEFAULT_EPS) -> tuple[float, float]:
    """TV between ``p`` and ``N^d(params)``, with an additive error bound.

    The true distance lies within half the omitted normal mass of the
    returned value.
    """
    table, omitted = dnormal_pmf_table(params, eps)
    return tv(p, table), 0.5 * omitted


def kolmogorov(p: IntegerPMF, params: NormalParams) -> float:
    """Sup over real ``z`` of ``|P(X <= z) - Phi((z - mu) / sigma)|``."""
    ks = np.arange(p.lo - 1, p.hi + 1)
    cdf = np.concatenate(([0.0], np.cumsum(p.probs)))
    cdf = np.minimum(cdf, 1.0)
    s = params.sigma
    at_k = special.ndtr((ks - params.mu) / s)
    at_next = special.ndtr((ks + 1 - params.mu) / s)
    # F is constant on [k, k+1) and Phi is monotone, so check both ends
    return float(max(np.max(np.abs(cdf - at_k)), np.max(np.abs(cdf - at_next))))


def binomial_pmf(n: int, p: float) -> IntegerPMF:
    ks = np.arange(n + 1)
    logs = (
        special.gammaln(n + 1) - special.gammaln(ks + 1) - special.gammaln(n - ks + 1)
        + special.xlogy(ks, p) + special.xlog1py(n - ks, -p)
    )
    probs = np.exp(logs)
    return IntegerPMF(0, probs / math.fsum(probs))


def uniform_pmf(lo: int, hi: int) -> IntegerPMF:
    return IntegerPMF(lo, np.full(hi - lo + 1, 1.0 / (hi - lo + 1)))


def convolve(p: IntegerPMF, q: IntegerPMF) -> IntegerPMF:
    """Law of ``X + Y`` for independent ``X ~ p``, ``Y ~ q``."""
    probs = np.convolve(p.probs, q.probs)
    return IntegerPMF(p.offset + q.offset, probs / math.fsum(probs))


def as_pmf(values: Sequence[float], offset: int = 0) -> IntegerPMF:
    return IntegerPMF(offset, np.asarray(values, dtype=np.float64))
