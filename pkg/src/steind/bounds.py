"""Evaluators for the explicit TV bounds to the discretized normal.

Each evaluator returns a :class:`BoundReport` with one entry per displayed
term. Standard errors go through the first-order delta method; the total's
standard error is the sum of the term errors, which needs no independence
assumption between terms estimated from the same draws. A term whose standard
error exceeds half its value is flagged ``unstable``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from .dist import IntegerPMF, NormalParams, dnormal_probs, shift_tv_exact
from .estimators import EstimateWithError

SQRT_PI_8 = math.sqrt(math.pi / 8)
SQRT_PI_2 = math.sqrt(math.pi / 2)

E = EstimateWithError


@dataclass(frozen=True)
class BoundReport:
    which: str
    terms: tuple[tuple[str, EstimateWithError], ...]
    total: EstimateWithError
    mode: str = "n/a"
    unstable: tuple[str, ...] = ()

    def term(self, label: str) -> EstimateWithError:
        return dict(self.terms)[label]

    def to_dict(self) -> dict:
        return {
            "which": self.which,
            "mode": self.mode,
            "terms": {k: v.to_dict() for k, v in self.terms},
            "total": self.total.to_dict(),
            "unstable": list(self.unstable),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _lin(e: E, c: float) -> E:
    if e.exact:
        return E.exact_value(c * e.value, e.n_samples)
    return E(c * e.value, abs(c) * e.std_error, e.n_samples)


def _sqrt(e: E) -> E:
    v = max(e.value, 0.0)
    if e.exact:
        return E.exact_value(math.sqrt(v), e.n_samples)
    root = math.sqrt(v)
    # delta method breaks down at 0; sqrt(se) is the scale of the root there
    se = e.std_error / (2 * root) if root > 0 else math.sqrt(e.std_error)
    return E(root, se, e.n_samples)


def _report(which: str, terms: Sequence[tuple[str, E]], mode: str = "n/a") -> BoundReport:
    for label, t in terms:
        if t.value < 0:
            raise ValueError(f"term {label} is negative: {t.value!r}")
    value = math.fsum(t.value for _, t in terms)
    exact = all(t.exact for _, t in terms)
    n = max((t.n_samples for _, t in terms), default=0)
    total = E.exact_value(value, n) if exact else E(value, sum(t.std_error for _, t in terms), n)
    unstable = tuple(
        label for label, t in terms
        if not t.exact and t.std_error > 0 and t.std_error > t.value / 2
    )
    return BoundReport(which, tuple(terms), total, mode, unstable)


def _require(ing, *names):
    missing = [n for n in names if getattr(ing, n) is None]
    if missing:
        raise ValueError(f"missing ingredients: {', '.join(missing)}")


@dataclass(frozen=True)
class BoundIngredients:
    """Inputs of the main bound and its corollaries.

    Main bound: ``var_cond_gd`` (Var E(GD|S)), ``e_abs_gd``, ``e_abs_gd2``
    (E|G D^2|), ``e_g2d4`` and ``cond_shift_term``
    (E[(|GD^2| + |GD|) shiftTV(S|F)]).

    Exchangeable pairs: ``lam``, ``e_r2``, ``var_cond_d2`` (Var E(D^2|S)),
    ``abs_d`` (moments E|D|^k) and ``cond_shift_pair``
    (E[(|D|^3 + D^2) shiftTV(S|F)]); ``unit_step`` certifies ``|D| <= 1``.

    Size bias (``D = S^s - S``): ``var_cond_d`` (Var E(D|S)), ``abs_d`` and
    ``cond_shift_sb`` (E[(D^2 + |D|) shiftTV(S|F)]).
    """

    sigma2: float
    mu: float
    var_cond_gd: Optional[E] = None
    e_abs_gd: Optional[E] = None
    e_abs_gd2: Optional[E] = None
    e_g2d4: Optional[E] = None
    cond_shift_term: Optional[E] = None
    lam: Optional[float] = None
    e_r2: Optional[E] = None
    var_cond_d2: Optional[E] = None
    abs_d: Optional[dict] = None
    cond_shift_pair: Optional[E] = None
    unit_step: bool = False
    var_cond_d: Optional[E] = None
    cond_shift_sb: Optional[E] = None
    mode: str = "n/a"

    def __post_init__(self):
        for name in ("var_cond_gd", "e_abs_gd", "e_abs_gd2", "e_g2d4", "cond_shift_term",
                     "e_r2", "var_cond_d2", "cond_shift_pair", "var_cond_d", "cond_shift_sb"):
            e = getattr(self, name)
            if e is not None and e.value < 0:
                raise ValueError(f"{name} must be non-negative")


def _sigma(ing) -> float:
    if not ing.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return math.sqrt(ing.sigma2)


def theorem_bound(ing: BoundIngredients) -> BoundReport:
    """Four-term bound for a general Stein coupling."""
    sigma = _sigma(ing)
    _require(ing, "var_cond_gd", "e_abs_gd2", "e_g2d4", "cond_shift_term")
    s2, s3 = ing.sigma2, sigma ** 3
    terms = [
        ("t1_cond_var", _lin(_sqrt(ing.var_cond_gd), 2 / s2)),
        ("t2_gd2", _lin(ing.e_abs_gd2, SQRT_PI_8 / s3)),
        ("t3_g2d4", _lin(_sqrt(ing.e_g2d4), 1 / s3)),
        ("t4_cond_shift", _lin(ing.cond_shift_term, 1 / (2 * s2))),
    ]
    return _report("theorem-main", terms, ing.mode)


def exchangeable_bound(ing: BoundIngredients) -> BoundReport:
    """Five-term bound for an exchangeable pair with approximate linearity."""
    sigma = _sigma(ing)
    if ing.lam is None or not ing.lam > 0:
        raise ValueError("lambda must be positive")
    _require(ing, "e_r2", "var_cond_d2", "abs_d", "cond_shift_pair")
    lam, s2, s3 = ing.lam, ing.sigma2, sigma ** 3
    terms = [
        ("t1_remainder", _lin(_sqrt(ing.e_r2), (SQRT_PI_2 + 2) / lam)),
        ("t2_cond_var_d2", _lin(_sqrt(ing.var_cond_d2), 1 / (lam * s2))),
        ("t3_abs_d3", _lin(ing.abs_d[3], SQRT_PI_8 / (2 * lam * s3))),
        ("t4_abs_d6", _lin(_sqrt(ing.abs_d[6]), 1 / (2 * lam * s3))),
        ("t5_cond_shift", _lin(ing.cond_shift_pair, 1 / (4 * lam * s2))),
    ]
    return _report("exch", terms, ing.mode)


def unit_step_exchangeable_bound(ing: BoundIngredients) -> BoundReport:
    """Three-term bound for exchangeable pairs with ``|S - S'| <= 1``."""
    sigma = _sigma(ing)
    if ing.lam is None or not ing.lam > 0:
        raise ValueError("lambda must be positive")
    if not ing.unit_step:
        raise ValueError("pair is not certified to move by at most one")
    _require(ing, "e_r2", "var_cond_d2")
    lam, s2, s3 = ing.lam, ing.sigma2, sigma ** 3
    terms = [
        ("t1_remainder", _lin(_sqrt(ing.e_r2), (SQRT_PI_2 + 2) / lam)),
        ("t2_cond_var_d2", _lin(_sqrt(ing.var_cond_d2), 1 / (lam * s2))),
        ("t3_unit_step", E.exact_value((SQRT_PI_8 + 1) / (2 * lam * s3))),
    ]
    return _report("exch-unit", terms, ing.mode)


def size_bias_bound(ing: BoundIngredients) -> BoundReport:
    """Four-term bound for a size-bias coupling ``(S, S^s)``."""
    sigma = _sigma(ing)
    if not ing.mu > 0:
        raise ValueError("size bias needs a positive mean")
    _require(ing, "var_cond_d", "abs_d", "cond_shift_sb")
    mu, s2, s3 = ing.mu, ing.sigma2, sigma ** 3
    terms = [
        ("t1_cond_var", _lin(_sqrt(ing.var_cond_d), 2 * mu / s2)),
        ("t2_d2", _lin(ing.abs_d[2], SQRT_PI_8 * mu / s3)),
        ("t3_d4", _lin(_sqrt(ing.abs_d[4]), mu / s3)),
        ("t4_cond_shift", _lin(ing.cond_shift_sb, mu / (2 * s2))),
    ]
    return _report("size-bias", terms, ing.mode)


@dataclass(frozen=True)
class LocalDepIngredients:
    """Per-index moments of ``xi_i = (X_i - mu_i)/sigma`` and
    ``eta_i = sum_{j in A_i}(X_j - mu_j)/sigma``."""

    theta: int
    n: int
    sigma: float
    e_xi2_eta2: np.ndarray
    e_abs_xi_eta2: np.ndarray
    e_xi2_eta4: np.ndarray
    e_abs_xi_eta: np.ndarray

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("theta must be at least 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for name in ("e_xi2_eta2", "e_abs_xi_eta2", "e_xi2_eta4", "e_abs_xi_eta"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.n,):
                raise ValueError(f"{name} needs one value per index")
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, arr)


class IndexShiftTerms(NamedTuple):
    """Per index ``i``: ``E[|xi_i eta_i| shiftTV_i]`` and ``E[shiftTV_i]``."""

    e_abs_xi_eta_shift: np.ndarray
    e_shift: np.ndarray


def local_dependence_bound(ing: LocalDepIngredients, cond_shift: IndexShiftTerms,
                           mode: str = "n/a") -> BoundReport:
    """Four-term bound for sums of locally dependent terms."""
    a = np.asarray(cond_shift.e_abs_xi_eta_shift, dtype=np.float64)
    b = np.asarray(cond_shift.e_shift, dtype=np.float64)
    if a.shape != (ing.n,) or b.shape != (ing.n,):
        raise ValueError("per-index shift terms missing")
    t1 = 2 * math.sqrt(ing.theta * math.fsum(ing.e_xi2_eta2))
    t2 = SQRT_PI_8 * math.fsum(ing.e_abs_xi_eta2)
    t3 = math.sqrt(ing.n * math.fsum(ing.e_xi2_eta4))
    t4 = 0.5 * math.fsum(a + ing.sigma * ing.e_abs_xi_eta2 * b)
    terms = [
        ("t1_cond_var", E.exact_value(t1)),
        ("t2_gd2", E.exact_value(t2)),
        ("t3_g2d4", E.exact_value(t3)),
        ("t4_cond_shift", E.exact_value(t4)),
    ]
    return _report("local-dep", terms, mode)


def independent_sum_shift_bound(marginals: Sequence[IntegerPMF]) -> float:
    """Bound on ``d_TV(L(S), L(S+1))`` for a sum of independent integer terms."""
    if len(marginals) == 0:
        raise ValueError("need at least one marginal")
    total = math.fsum(1.0 - shift_tv_exact(m) for m in marginals)
    if total <= 0:
        raise ValueError("every marginal has shift-TV 1; the bound is infinite")
    return math.sqrt(8.0 / total)


# Stein equation ------------------------------------------------------------

@dataclass(frozen=True)
class SteinSolution:
    grid: np.ndarray
    f: np.ndarray
    f_prime: np.ndarray
    eh: float
    sup_f: float
    sup_f_prime: float
    f_limit: float
    f_prime_limit: float

    def within_limits(self, tol: float = 1e-6) -> bool:
        return self.sup_f <= self.f_limit + tol and self.sup_f_prime <= self.f_prime_limit + tol


def stein_solution(
    h: Callable[[int], int],
    params: NormalParams,
    grid_step: float = 1e-3,
    half_width: Optional[float] = None,
) -> SteinSolution:
    """Bounded solution of ``sigma2 f'(w) - (w - mu) f(w) = h(w) - E h(Z)``.

    ``h`` maps an integer ``z`` to 0 or 1 and is extended to the reals as a
    constant on ``[z - 1/2, z + 1/2)``. With ``t = (w - mu)/sigma`` the
    solution is ``J(t) / (sigma phi(t))`` where ``J`` integrates
    ``(h - E h) phi`` from the tail on the side of ``t`` away from the mean;
    each unit cell is integrated exactly through the normal CDF, so no
    exponential of ``t^2`` is ever formed.
    """
    mu, sigma = params.mu, params.sigma
    if half_width is None:
        half_width = 10 * sigma
    half_width = min(half_width, 30 * sigma)
    n_pts = int(round(2 * half_width / grid_step)) + 1
    grid = mu - half_width + grid_step * np.arange(n_pts)

    # cells reach 40 standard units past the grid; beyond that phi(u)/phi(t) < e^-800
    zlo = math.floor(mu - half_width - 40 * sigma) - 1
    zhi = math.ceil(mu + half_width + 40 * sigma) + 1
    zs = np.arange(zlo, zhi + 1)
    hv = np.array([h(int(z)) for z in zs], dtype=np.float64)
    if not np.all((hv == 0) | (hv == 1)):
        raise ValueError("h must be 0/1-valued")
    eh = float(np.dot(hv, dnormal_probs(params, zs)))
    c = hv - eh

    a = (zs - 0.5 - mu) / sigma
    b = (zs + 0.5 - mu) / sigma
    t = (grid - mu) / sigma
    cell = np.clip(np.floor(grid + 0.5).astype(np.int64) - zlo, 0, len(zs) - 1)

    left_mass = c * (special.ndtr(b) - special.ndtr(a))
    prefix = np.concatenate(([0.0], np.cumsum(left_mass)))
    right_mass = c * (special.ndtr(-a) - special.ndtr(-b))
    suffix = np.concatenate((np.cumsum(right_mass[::-1])[::-1], [0.0]))

    phi = np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    j_left = prefix[cell] + c[cell] * (special.ndtr(t) - special.ndtr(a[cell]))
    j_right = suffix[cell + 1] + c[cell] * (special.ndtr(-t) - special.ndtr(-b[cell]))
    f = np.where(t <= 0, j_left, -j_right) / (sigma * phi)
    hw = hv[cell]
    fp = ((grid - mu) * f + hw - eh) / params.sigma2
    return SteinSolution(
        grid=grid, f=f, f_prime=fp, eh=eh,
        sup_f=float(np.max(np.abs(f))), sup_f_prime=float(np.max(np.abs(fp))),
        f_limit=SQRT_PI_2 / sigma, f_prime_limit=2 / params.sigma2,
    )
