"""Estimators for the ingredients of the TV bounds.

Every estimator accepts either a Monte-Carlo sample (``weights=None``) or an
exhaustive enumeration given as outcomes with probability ``weights``. In the
second case the result is exact (``std_error == 0``, ``exact=True``).

Binned conditional moments use exact binning on the integer-valued
conditioning variable. Plug-in variances of bin means are biased upward at
small sample sizes; the bias is accepted and negative round-off is clamped
at zero.

Bootstrap standard errors resample the distinct observed rows with
multinomial counts, which is the ordinary nonparametric bootstrap written on
the compressed sample. Resample streams derive from a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dist import IntegerPMF, tv
from .rng import RandomStream

N_BOOT = 200


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float = 0.0
    n_samples: int = 0
    exact: bool = False

    def __post_init__(self):
        if self.std_error < 0 or math.isnan(self.std_error):
            raise ValueError("std_error must be non-negative")
        if self.exact and self.std_error != 0:
            raise ValueError("exact estimates carry no standard error")

    @classmethod
    def exact_value(cls, value: float, n_samples: int = 0) -> "EstimateWithError":
        return cls(float(value), 0.0, n_samples, True)

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.std_error, "n": self.n_samples, "exact": self.exact}

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimateWithError":
        return cls(float(obj["value"]), float(obj["se"]), int(obj["n"]), bool(obj["exact"]))


def _check_weights(n: int, weights) -> Optional[np.ndarray]:
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("weights must match the sample length")
    if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    return w


def mean_estimate(values, weights=None) -> EstimateWithError:
    """Sample mean with standard error, or the exact weighted mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample")
    w = _check_weights(x.size, weights)
    if w is not None:
        return EstimateWithError.exact_value(math.fsum(w * x), x.size)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return EstimateWithError(float(np.mean(x)), se, x.size)


def _bin_index(s: np.ndarray) -> tuple[np.ndarray, int]:
    _, inv = np.unique(s, return_inverse=True)
    return inv.ravel(), int(inv.max()) + 1


def _var_of_bin_means(bins: np.ndarray, nbins: int, y: np.ndarray, w: np.ndarray) -> float:
    """Variance of ``E(y | bin)`` under sample weights ``w`` (need not sum to 1)."""
    total = w.sum()
    wb = np.bincount(bins, weights=w, minlength=nbins)
    sy = np.bincount(bins, weights=w * y, minlength=nbins)
    keep = wb > 0
    means = sy[keep] / wb[keep]
    grand = sy.sum() / total
    return max(float(np.dot(wb[keep], (means - grand) ** 2) / total), 0.0)


def _compress(*cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.column_stack([np.asarray(c, dtype=np.float64) for c in cols])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return uniq, counts


def _bootstrap_counts(counts: np.ndarray, n_boot: int, stream: RandomStream, batch: int = 16):
    """Yield multinomial resample count vectors over compressed rows."""
    rng = stream.generator(0)
    total = int(counts.sum())
    pvals = counts / total
    done = 0
    while done < n_boot:
        k = min(batch, n_boot - done)
        yield rng.multinomial(total, pvals, size=k)
        done += k


def _bootstrap_se(stat: Callable[[np.ndarray], float], counts: np.ndarray, n_boot: int, stream) -> float:
    reps = []
    for block in _bootstrap_counts(counts, n_boot, stream):
        reps.extend(stat(c.astype(np.float64)) for c in block)
    return float(np.std(reps, ddof=1)) if len(reps) > 1 else 0.0


def conditional_variance_by_binning(
    s,
    y,
    weights=None,
    *,
    n_boot: int = N_BOOT,
    stream: Optional[RandomStream] = None,
) -> EstimateWithError:
    """Plug-in estimate of ``Var(E(Y | S))`` for integer ``S``."""
    s = np.asarray(s)
    y = np.asarray(y, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty input")
    if s.shape != y.shape:
        raise ValueError("s and y must have equal length")
    w = _check_weights(s.size, weights)
    if w is not None:
        bins, nb = _bin_index(s)
        return EstimateWithError.exact_value(_var_of_bin_means(bins, nb, y, w), s.size)
    uniq, counts = _compress(s, y)
    bins, nb = _bin_index(uniq[:, 0])
    yu = uniq[:, 1]

    def stat(c):
        return _var_of_bin_means(bins, nb, yu, c)

    value = stat(counts.astype(np.float64))
    stream = stream or RandomStream(name="bootstrap/condvar")
    se = _bootstrap_se(stat, counts, n_boot, stream) if n_boot > 1 else 0.0
    return EstimateWithError(value, se, s.size)


def variance_decomposition(s, y, weights=None) -> tuple[float, float, float]:
    """``(Var E(Y|S), E Var(Y|S), Var Y)`` from one sample (law of total variance)."""
    s = np.asarray(s)
    y = np.asarray(y, dtype=np.float64)
    w = _check_weights(s.size, weights)
    if w is None:
        w = np.full(s.size, 1.0 / s.size)
    bins, nb = _bin_index(s)
    wb = np.bincount(bins, weights=w, minlength=nb)
    means = np.bincount(bins, weights=w * y, minlength=nb) / np.where(wb > 0, wb, 1.0)
    resid = y - means[bins]
    within = float(np.dot(w, resid ** 2))
    grand = float(np.dot(w, y))
    between = float(np.dot(wb, (means - grand) ** 2))
    total = float(np.dot(w, (y - grand) ** 2))
    return between, within, total


def _rollin_ross_stat(bins, nb, up, down, w) -> float:
    p_up = float(np.dot(w, up) / w.sum())
    if p_up <= 0:
        return math.inf
    a = _var_of_bin_means(bins, nb, up, w)
    b = _var_of_bin_means(bins, nb, down, w)
    return (math.sqrt(a) + math.sqrt(b)) / p_up


def rollin_ross_bound(
    v,
    v_prime,
    weights=None,
    *,
    n_boot: int = N_BOOT,
    stream: Optional[RandomStream] = None,
) -> EstimateWithError:
    """Plug-in value of the exchangeable-pair bound on ``d_TV(L(V), L(V+1))``.

    ``[sqrt Var E(1{V-V'=1}|V) + sqrt Var E(1{V-V'=-1}|V)] / P(V-V'=1)``.
    The result is an estimate of an upper bound and may exceed 1.
    """
    v = np.asarray(v)
    vp = np.asarray(v_prime)
    if v.size == 0 or v.shape != vp.shape:
        raise ValueError("need equal-length, non-empty pair arrays")
    diff = v - vp
    up = (diff == 1).astype(np.float64)
    down = (diff == -1).astype(np.float64)
    if not up.any():
        raise ValueError("no unit up-steps observed; the pair cannot control shift-TV")
    w = _check_weights(v.size, weights)
    if w is not None:
        bins, nb = _bin_index(v)
        return EstimateWithError.exact_value(_rollin_ross_stat(bins, nb, up, down, w), v.size)
    uniq, counts = _compress(v, up, down)
    bins, nb = _bin_index(uniq[:, 0])
    uu, dd = uniq[:, 1], uniq[:, 2]

    def stat(c):
        return _rollin_ross_stat(bins, nb, uu, dd, c)

    value = stat(counts.astype(np.float64))
    stream = stream or RandomStream(name="bootstrap/rollin-ross")
    reps = []
    if n_boot > 1:
        for block in _bootstrap_counts(counts, n_boot, stream):
            reps.extend(stat(c.astype(np.float64)) for c in block)
        reps = [r for r in reps if math.isfinite(r)]
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else 0.0
    return EstimateWithError(value, se, v.size)


MOMENT_POWERS = (1, 2, 3, 4, 6)


def moment_estimates(g, d, weights=None, *, pair_moments: bool = False) -> dict[str, EstimateWithError]:
    """Absolute moments entering the main bound.

    Keys: ``e_gd``, ``e_abs_gd``, ``e_abs_gd2``, ``e_g2d4`` and, with
    ``pair_moments``, ``abs_d{k}`` for ``k`` in 1, 2, 3, 4, 6.
    """
    g = np.asarray(g, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    gd = g * d
    out = {
        "e_gd": mean_estimate(gd, weights),
        "e_abs_gd": mean_estimate(np.abs(gd), weights),
        "e_abs_gd2": mean_estimate(np.abs(gd * d), weights),
        "e_g2d4": mean_estimate(gd ** 2 * d ** 2, weights),
    }
    if pair_moments:
        ad = np.abs(d)
        for k in MOMENT_POWERS:
            out[f"abs_d{k}"] = mean_estimate(ad ** k, weights)
    return out


def empirical_pmf(samples) -> IntegerPMF:
    x = np.asarray(samples, dtype=np.int64).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    lo = int(x.min())
    counts = np.bincount(x - lo)
    return IntegerPMF(lo, counts / x.size)


def weighted_pmf(values, weights) -> IntegerPMF:
    """Exact pmf of an enumerated integer outcome."""
    x = np.asarray(values, dtype=np.int64).ravel()
    w = _check_weights(x.size, weights)
    lo = int(x.min())
    probs = np.bincount(x - lo, weights=w)
    return IntegerPMF(lo, probs / math.fsum(probs))


def tv_with_ci(
    samples,
    reference: IntegerPMF,
    resamples: int = N_BOOT,
    *,
    stream: Optional[RandomStream] = None,
) -> EstimateWithError:
    """Plug-in TV between the empirical law and ``reference``, bootstrap SE.

    The plug-in value is biased upward for small samples, roughly by
    ``sum_z sqrt(p(z)(1 - p(z)) / (2 pi N))``.
    """
    x = np.asarray(samples, dtype=np.int64).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    emp = empirical_pmf(x)
    value = tv(emp, reference)
    if resamples <= 1:
        return EstimateWithError(value, 0.0, x.size)
    vals, counts = np.unique(x, return_counts=True)
    lo = min(int(vals[0]), reference.lo)
    hi = max(int(vals[-1]), reference.hi)
    ref = np.zeros(hi - lo + 1)
    ref[reference.lo - lo:reference.hi - lo + 1] = reference.probs
    idx = vals - lo

    def stat(c):
        p = np.zeros_like(ref)
        p[idx] = c / c.sum()
        return 0.5 * float(np.abs(p - ref).sum())

    stream = stream or RandomStream(name="bootstrap/tv")
    se = _bootstrap_se(stat, counts, resamples, stream)
    return EstimateWithError(value, se, x.size)


def bias_of_plugin_tv(reference: IntegerPMF, n: int) -> float:
    """Approximate upward bias of plug-in TV at sample size ``n``."""
    p = reference.probs
    return float(np.sum(np.sqrt(p * (1 - p) / (2 * math.pi * n))))


def conditional_shift_term(
    factor,
    ctx: np.ndarray,
    shift_tv_of_context: Callable[[tuple], float],
    weights=None,
) -> EstimateWithError:
    """Mean of ``factor * shift_tv_of_context(ctx)`` over draws.

    ``factor`` is the per-draw weight, e.g. ``|g d^2| + |g d|``. The context
    evaluator is called once per distinct context row.
    """
    factor = np.asarray(factor, dtype=np.float64)
    ctx = np.asarray(ctx)
    if ctx.ndim == 1:
        ctx = ctx[:, None]
    if ctx.shape[0] != factor.size:
        raise ValueError("one context row per draw required")
    uniq, inv = np.unique(ctx, axis=0, return_inverse=True)
    vals = np.empty(len(uniq))
    for k, row in enumerate(uniq):
        t = float(shift_tv_of_context(tuple(int(x) for x in row)))
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"shift-TV {t!r} for context {tuple(row)} outside [0, 1]")
        vals[k] = t
    return mean_estimate(factor * vals[inv.ravel()], weights)
