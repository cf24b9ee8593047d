"""Uniform experiment interface over the application models.

``build_experiment({"model": "occupancy", "n": 60, "m": 30, "d": 2})`` returns
an object that knows the model's exact moments, its exact pmf when one is
computable, a sampler for ``S``, its Stein coupling (Monte Carlo or
exhaustive), its natural exchangeable pair and how to evaluate its bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from ..bounds import (BoundIngredients, BoundReport, local_dependence_bound, size_bias_bound,
                      theorem_bound, unit_step_exchangeable_bound)
from ..couplings import (CouplingBatch, PairBatch, coordinate_resample_pair, local_dep_coupling_draw,
                         local_dep_exhaustive, size_bias_coupling_draw, size_bias_exhaustive)
from ..dist import IntegerPMF
from ..estimators import (MOMENT_POWERS, EstimateWithError, conditional_shift_term,
                          conditional_variance_by_binning, moment_estimates)
from ..rng import RandomStream, generate
from . import binomial_ref as br
from . import er_degree as er
from . import occupancy as oc
from . import two_runs as tr

MODEL_NAMES = ("two_runs", "er_degree", "occupancy", "binomial_ref")
COND_MODES = ("exact", "analytic", "nested", "upper")
DEFAULT_NESTED_SAMPLES = 20000


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


@dataclass(frozen=True)
class ModelSpec:
    model: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        if not isinstance(data, dict) or "model" not in data:
            raise ConfigError("model spec must be an object with a 'model' field")
        params = {k: v for k, v in data.items() if k != "model"}
        spec = cls(str(data["model"]), params)
        build_experiment(spec)
        return spec

    def to_dict(self) -> dict:
        return {"model": self.model, **self.params}

    def param_json(self) -> str:
        return json.dumps(self.params, sort_keys=True, separators=(",", ":"))

    def with_params(self, **changes) -> "ModelSpec":
        return ModelSpec(self.model, {**self.params, **changes})


# Generic report builders ----------------------------------------------------

def stein_coupling_report(batch: CouplingBatch, mu: float, sigma2: float,
                          shift_tv: Callable[[tuple], float], mode: str,
                          stream: RandomStream) -> BoundReport:
    """Main four-term bound from a batch of Stein-coupling draws."""
    d, w = batch.d, batch.weights
    gd = batch.g * d
    mom = moment_estimates(batch.g, d, w)
    ing = BoundIngredients(
        sigma2, mu,
        var_cond_gd=conditional_variance_by_binning(batch.s, gd, w, stream=stream.child("condvar")),
        e_abs_gd=mom["e_abs_gd"], e_abs_gd2=mom["e_abs_gd2"], e_g2d4=mom["e_g2d4"],
        cond_shift_term=conditional_shift_term(np.abs(gd * d) + np.abs(gd), batch.ctx, shift_tv, w),
        mode=mode,
    )
    return theorem_bound(ing)


def size_bias_report(batch: CouplingBatch, mu: float, sigma2: float,
                     shift_tv: Callable[[tuple], float], mode: str,
                     stream: RandomStream) -> BoundReport:
    """Size-bias bound from a batch of ``(S, S^s)`` draws."""
    d, w = batch.d, batch.weights
    mom = moment_estimates(batch.g, d, w, pair_moments=True)
    ing = BoundIngredients(
        sigma2, mu,
        var_cond_d=conditional_variance_by_binning(batch.s, d, w, stream=stream.child("condvar")),
        abs_d={k: mom[f"abs_d{k}"] for k in MOMENT_POWERS},
        cond_shift_sb=conditional_shift_term(d ** 2 + np.abs(d), batch.ctx, shift_tv, w),
        mode=mode,
    )
    return size_bias_bound(ing)


# Experiments ---------------------------------------------------------------

def _int_param(params: dict, key: str) -> int:
    if key not in params:
        raise ConfigError(f"missing parameter {key!r}")
    value = params[key]
    if isinstance(value, bool) or not float(value).is_integer():
        raise ConfigError(f"parameter {key!r} must be an integer")
    return int(value)


def _float_param(params: dict, key: str) -> float:
    if key not in params:
        raise ConfigError(f"missing parameter {key!r}")
    try:
        return float(params[key])
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {key!r} must be a number") from None


class Experiment:
    """Common surface; subclasses fill in the model-specific parts."""

    name = "base"
    cond_modes: tuple[str, ...] = ()

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    @property
    def n(self) -> int:
        return int(self.spec.params["n"])

    def with_size(self, n: int) -> "Experiment":
        return build_experiment(self.spec.with_params(n=n))

    def exact_moments(self) -> tuple[float, float]:
        raise NotImplementedError

    def exact_pmf(self) -> IntegerPMF:
        raise NotImplementedError

    def sample(self, stream: RandomStream, size: int, *, workers: int = 1) -> np.ndarray:
        raise NotImplementedError

    def coupling(self, stream: RandomStream, size: int, *, workers: int = 1) -> CouplingBatch:
        raise NotImplementedError

    def coupling_exhaustive(self) -> CouplingBatch:
        raise NotImplementedError

    def natural_pair(self, stream: RandomStream, size: int, *, workers: int = 1) -> PairBatch:
        raise NotImplementedError

    def bound(self, cond_mode: str, stream: RandomStream, *, mc_samples: int = 100000,
              workers: int = 1, exhaustive: Optional[bool] = None,
              nested_samples: int = DEFAULT_NESTED_SAMPLES) -> BoundReport:
        raise NotImplementedError

    def check_mode(self, cond_mode: str) -> None:
        if cond_mode not in self.cond_modes:
            raise ConfigError(f"{self.name} supports cond_mode in {self.cond_modes}, got {cond_mode!r}")


def _cycle_run_count(bits: np.ndarray) -> np.ndarray:
    return (bits * np.roll(bits, -1, axis=1)).sum(axis=1)


def _two_runs_sample_chunk(n: int, p: float, rng: np.random.Generator, size: int) -> np.ndarray:
    return _cycle_run_count((rng.random((size, n)) < p).astype(np.int64))


class TwoRunsExperiment(Experiment):
    name = "two_runs"
    cond_modes = ("exact", "analytic", "nested", "upper")

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.params = tr.TwoRunsParams(_int_param(spec.params, "n"), _float_param(spec.params, "p"))
        self.model = tr.TwoRuns(self.params)

    def exact_moments(self):
        return tr.two_runs_exact_moments(self.params)

    def exact_pmf(self):
        return tr.two_runs_exact_pmf(self.params)

    def sample(self, stream, size, *, workers=1):
        return np.concatenate(generate(_two_runs_sample_chunk, (self.params.n, self.params.p), size,
                                       stream, workers=workers))

    def coupling(self, stream, size, *, workers=1):
        return local_dep_coupling_draw(self.model, stream, size, workers=workers)

    def coupling_exhaustive(self):
        if self.params.n > tr.ENUM_MAX_N:
            raise ConfigError(f"exhaustive enumeration limited to n <= {tr.ENUM_MAX_N}")
        return local_dep_exhaustive(self.model)

    def natural_pair(self, stream, size, *, workers=1):
        law = IntegerPMF(0, [1 - self.params.p, self.params.p])
        return coordinate_resample_pair(_cycle_run_count, [law] * self.params.n, stream, size,
                                        workers=workers)

    def bound(self, cond_mode, stream, *, mc_samples=100000, workers=1, exhaustive=None,
              nested_samples=DEFAULT_NESTED_SAMPLES):
        """Local-dependence bound with exact window moments."""
        self.check_mode(cond_mode)
        shifts = self.model.window_shift_terms(cond_mode, stream=stream.child("nested"),
                                               nested_samples=nested_samples)
        return local_dependence_bound(self.model.local_dep_ingredients(), shifts, cond_mode)

    def theorem_bound_exhaustive(self, cond_mode: str = "exact") -> BoundReport:
        """Main-theorem bound with every ingredient computed by enumeration."""
        self.check_mode(cond_mode)
        mu, s2 = self.exact_moments()
        batch = self.coupling_exhaustive()
        return stein_coupling_report(batch, mu, s2, partial(self.model.window_shift_tv, mode=cond_mode),
                                     cond_mode, RandomStream(name="two_runs/theorem"))


def _occupancy_sample_chunk(n: int, m: int, d: int, rng: np.random.Generator, size: int) -> np.ndarray:
    return (rng.multinomial(n, np.full(m, 1.0 / m), size) == d).sum(axis=1)


class _SizeBiasExperiment(Experiment):
    cond_modes = ("exact", "nested", "upper")
    model = None

    def coupling(self, stream, size, *, workers=1):
        return size_bias_coupling_draw(self.model, stream, size, workers=workers)

    def coupling_exhaustive(self):
        return size_bias_exhaustive(self.model)

    def _exhaustive_feasible(self) -> bool:
        return False

    def bound(self, cond_mode, stream, *, mc_samples=100000, workers=1, exhaustive=None,
              nested_samples=DEFAULT_NESTED_SAMPLES):
        """Size-bias bound; exhaustive ingredients when feasible, else Monte Carlo."""
        self.check_mode(cond_mode)
        if exhaustive is None:
            exhaustive = self._exhaustive_feasible()
        batch = (self.coupling_exhaustive() if exhaustive
                 else self.coupling(stream.child("coupling"), mc_samples, workers=workers))
        mu, s2 = self.exact_moments()
        shift = partial(self.model.context_shift_tv, mode=cond_mode, stream=stream.child("nested"),
                        nested_samples=nested_samples)
        return size_bias_report(batch, mu, s2, shift, cond_mode, stream)


class OccupancyExperiment(_SizeBiasExperiment):
    name = "occupancy"

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        p = spec.params
        self.params = oc.OccupancyParams(_int_param(p, "n"), _int_param(p, "m"), _int_param(p, "d"))
        self.model = oc.Occupancy(self.params)

    def exact_moments(self):
        return oc.occupancy_exact_moments(self.params)

    def exact_pmf(self):
        return oc.occupancy_exact_pmf(self.params)

    def sample(self, stream, size, *, workers=1):
        P = self.params
        return np.concatenate(generate(_occupancy_sample_chunk, (P.n, P.m, P.d), size, stream,
                                       workers=workers))

    def natural_pair(self, stream, size, *, workers=1):
        P = self.params
        return oc.occupancy_ball_move_pair(P.n, P.m, P.d, stream, size, workers=workers)

    def _exhaustive_feasible(self) -> bool:
        P = self.params
        return math.comb(P.n + P.m - 2, P.m - 2) ** 2 * (P.n + 1) * P.m <= 20000


class ErDegreeExperiment(_SizeBiasExperiment):
    name = "er_degree"

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        p = spec.params
        n, d = _int_param(p, "n"), _int_param(p, "d")
        if ("theta" in p) == ("p" in p):
            raise ConfigError("er_degree needs exactly one of 'theta' or 'p'")
        if "theta" in p:
            self.params = er.ErdosRenyiDegreeParams(n, _float_param(p, "theta"), d)
        else:
            self.params = er.ErdosRenyiDegreeParams.from_p(n, _float_param(p, "p"), d)
        self.model = er.ErdosRenyiDegree(self.params)

    def exact_moments(self):
        return er.er_exact_moments(self.params)

    def exact_pmf(self):
        return er.er_bruteforce_pmf(self.params)

    def sample(self, stream, size, *, workers=1):
        return er.er_degree_sample(self.params, stream, size, workers=workers)

    def natural_pair(self, stream, size, *, workers=1):
        P = self.params
        return er.free_edge_pair(P.n, (0,) * P.n, P.p, P.d, stream, size, workers=workers)

    def _exhaustive_feasible(self) -> bool:
        return self.params.n <= er.EXHAUSTIVE_MAX_N


class BinomialRefExperiment(Experiment):
    name = "binomial_ref"
    cond_modes = ("exact", "analytic", "nested", "upper")

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.params = br.BinomialRefParams(_int_param(spec.params, "n"), _float_param(spec.params, "p"))

    def exact_moments(self):
        return br.binomial_exact_moments(self.params)

    def exact_pmf(self):
        return br.binomial_exact_pmf(self.params)

    def sample(self, stream, size, *, workers=1):
        return self.natural_pair(stream, size, workers=workers).v

    def natural_pair(self, stream, size, *, workers=1):
        return br.binomial_ref_pair(self.params, stream, size, workers=workers)

    def _stein_batch(self, pairs: PairBatch, weights=None) -> CouplingBatch:
        lam = 1.0 / self.params.n
        d = pairs.v_prime - pairs.v
        ctx = np.zeros((len(pairs), 1), dtype=np.int64)
        return CouplingBatch(pairs.v, d, d / (2 * lam), ctx, ("none",), weights=weights)

    def coupling(self, stream, size, *, workers=1):
        """Stein coupling ``(S, S', (S' - S)/(2 lambda))`` built from the pair."""
        return self._stein_batch(self.natural_pair(stream, size, workers=workers))

    def coupling_exhaustive(self):
        pairs = br.binomial_pair_exact(self.params)
        return self._stein_batch(pairs, pairs.weights)

    def bound(self, cond_mode, stream, *, mc_samples=100000, workers=1, exhaustive=None,
              nested_samples=DEFAULT_NESTED_SAMPLES):
        """Unit-step exchangeable-pair bound; every ingredient is closed form."""
        self.check_mode(cond_mode)
        mu, s2 = self.exact_moments()
        x = br.exact_pair_ingredients(self.params)
        ing = BoundIngredients(s2, mu, lam=x["lam"], e_r2=EstimateWithError.exact_value(x["e_r2"]),
                               var_cond_d2=EstimateWithError.exact_value(x["var_cond_d2"]),
                               unit_step=True, mode="exact")
        return unit_step_exchangeable_bound(ing)


_REGISTRY = {
    "two_runs": TwoRunsExperiment,
    "er_degree": ErDegreeExperiment,
    "occupancy": OccupancyExperiment,
    "binomial_ref": BinomialRefExperiment,
}


def build_experiment(spec) -> Experiment:
    """Experiment from a ``ModelSpec`` or a plain ``{"model": ..., ...}`` dict."""
    if isinstance(spec, dict):
        if "model" not in spec:
            raise ConfigError("model spec must have a 'model' field")
        spec = ModelSpec(str(spec["model"]), {k: v for k, v in spec.items() if k != "model"})
    cls = _REGISTRY.get(spec.model)
    if cls is None:
        raise ConfigError(f"unknown model {spec.model!r}; expected one of {MODEL_NAMES}")
    try:
        return cls(spec)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
