"""Command-line experiment runner.

Usage::

    steind run --config experiment.json [--override key=value ...]

The config is one JSON object. ``--override`` takes dotted paths into it
(``model.p=0.3``, ``sizes=[32,64,128]``); values are parsed as JSON and fall
back to plain strings.

Exit status: 0 on success, 2 for an invalid configuration, 3 when a numerical
guard fails (non-finite output, an exact bound below the exact TV, or a
non-zero Stein residual on an exhaustive batch). Errors are written to
standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .bounds import BoundReport
from .couplings import stein_identity_residual
from .dist import NormalParams, dnormal_pmf_table, shift_tv_exact, tv_to_dnormal
from .estimators import EstimateWithError, rollin_ross_bound, tv_with_ci
from .models import ConfigError, Experiment, ModelSpec, build_experiment
from .rng import DEFAULT_SEED, RandomStream

COMMANDS = ("tv-exact", "tv-mc", "bound", "scaling", "validate-coupling", "shift-tv")
MC_COMMANDS = ("tv-mc", "shift-tv")
CSV_COLUMNS = ("model", "n", "param_json", "tv_value", "tv_se", "tv_exact", "bound_total",
               "bound_terms_json", "cond_mode", "seed", "mc_samples", "runtime_ms")
DEFAULT_COND_MODE = {"two_runs": "analytic", "er_degree": "nested", "occupancy": "nested",
                     "binomial_ref": "exact"}
MIN_MC_SAMPLES = 1000
VALIDITY_TOL = 1e-9
RESIDUAL_TOL = 1e-10


class GuardError(RuntimeError):
    """A numerical guard failed."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    command: str
    sizes: tuple[int, ...] = ()
    mc_samples: int = 100000
    seed: int = DEFAULT_SEED
    cond_mode: str = "exact"
    output: Optional[str] = None
    summary: Optional[str] = None
    workers: int = 1
    nested_samples: int = 20000
    tv_source: str = "auto"
    record_runtime: bool = False
    exhaustive: Optional[bool] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        command = data.pop("command", None)
        if command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
        model = ModelSpec.from_dict(data.pop("model", None))
        sizes = tuple(int(s) for s in data.pop("sizes", ()) or ())
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("sizes must be strictly increasing")
        if command == "scaling" and len(sizes) < 3:
            raise ConfigError("scaling needs at least three sizes")
        mc = _as_int(data.pop("mc_samples", 100000), "mc_samples")
        if command in MC_COMMANDS and mc < MIN_MC_SAMPLES:
            raise ConfigError(f"mc_samples must be >= {MIN_MC_SAMPLES} for {command}")
        seed = _as_int(data.pop("seed", DEFAULT_SEED), "seed")
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned value")
        cond_mode = data.pop("cond_mode", DEFAULT_COND_MODE[model.model])
        build_experiment(model).check_mode(cond_mode)
        workers = _as_int(data.pop("workers", 1), "workers")
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        tv_source = data.pop("tv_source", "auto")
        if tv_source not in ("auto", "exact", "mc"):
            raise ConfigError("tv_source must be auto, exact or mc")
        exhaustive = data.pop("exhaustive", None)
        if exhaustive is not None and not isinstance(exhaustive, bool):
            raise ConfigError("exhaustive must be true, false or absent")
        output, summary = data.pop("output", None), data.pop("summary", None)
        nested = _as_int(data.pop("nested_samples", 20000), "nested_samples")
        record_runtime = data.pop("record_runtime", False)
        if data:
            raise ConfigError(f"unknown config fields: {sorted(data)}")
        return cls(
            model=model, command=command, sizes=sizes, mc_samples=mc, seed=seed,
            cond_mode=cond_mode, output=output, summary=summary, workers=workers,
            nested_samples=nested, tv_source=tv_source, record_runtime=bool(record_runtime),
            exhaustive=exhaustive,
        )


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer")
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer") from None
    if not f.is_integer():
        raise ConfigError(f"{name} must be an integer")
    return int(value) if isinstance(value, int) else int(f)


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Set ``key.sub=value`` entries on a copy of ``data``."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object")
        node[keys[-1]] = value
    return out


# Formatting ----------------------------------------------------------------

def fmt_float(x: Optional[float]) -> str:
    """17 significant digits, so values round-trip exactly."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ScalingRow:
    model: str
    n: int
    param_json: str
    tv: Optional[EstimateWithError]
    bound: Optional[BoundReport]
    cond_mode: str
    seed: int
    mc_samples: int
    runtime_ms: Optional[float] = None

    def as_csv(self, record_runtime: bool) -> list[str]:
        terms = {} if self.bound is None else {
            label: {"value": e.value, "se": e.std_error} for label, e in self.bound.terms}
        return [
            self.model, str(self.n), self.param_json,
            fmt_float(None if self.tv is None else self.tv.value),
            fmt_float(None if self.tv is None else self.tv.std_error),
            "" if self.tv is None else str(self.tv.exact).lower(),
            fmt_float(None if self.bound is None else self.bound.total.value),
            dumps(terms), self.cond_mode, str(self.seed), str(self.mc_samples),
            fmt_float(self.runtime_ms) if record_runtime else "",
        ]


def rows_to_csv(rows: Sequence[ScalingRow], record_runtime: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv(record_runtime))
    return buf.getvalue()


def fit_rate(ns: Sequence[float], tvs: Sequence[float]) -> tuple[float, float, float]:
    """Least squares of ``log tv`` on ``log n``: ``(slope, intercept, slope_se)``."""
    ns = np.asarray(ns, dtype=np.float64)
    tvs = np.asarray(tvs, dtype=np.float64)
    if ns.size < 3 or ns.size != tvs.size:
        raise ValueError("fit_rate needs at least three (n, tv) rows")
    if np.any(tvs <= 0) or np.any(ns <= 0):
        raise ValueError("fit_rate needs positive n and tv")
    x, y = np.log(ns), np.log(tvs)
    if np.ptp(y) == 0.0:
        return 0.0, float(y[0]), 0.0
    res = linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.stderr)


# Commands ------------------------------------------------------------------

def _check_finite(label: str, *values) -> None:
    for v in values:
        if v is not None and not math.isfinite(v):
            raise GuardError(f"{label} is not finite")


def _tv(exp: Experiment, cfg: ExperimentConfig, stream: RandomStream, source: str) -> EstimateWithError:
    params = NormalParams(*exp.exact_moments())
    if source in ("auto", "exact"):
        try:
            pmf = exp.exact_pmf()
        except (ValueError, NotImplementedError):
            if source == "exact":
                raise
        else:
            value, _ = tv_to_dnormal(pmf, params)
            return EstimateWithError.exact_value(value)
    table, _ = dnormal_pmf_table(params)
    samples = exp.sample(stream.child("tv"), cfg.mc_samples, workers=cfg.workers)
    return tv_with_ci(samples, table, stream=stream.child("tv-boot"))


def _bound(exp: Experiment, cfg: ExperimentConfig, stream: RandomStream) -> BoundReport:
    return exp.bound(cfg.cond_mode, stream.child("bound"), mc_samples=cfg.mc_samples,
                     workers=cfg.workers, exhaustive=cfg.exhaustive,
                     nested_samples=cfg.nested_samples)


def _row(exp, cfg, stream, *, tv_source, with_bound) -> ScalingRow:
    start = time.perf_counter()
    tv = _tv(exp, cfg, stream, tv_source) if tv_source else None
    bound = _bound(exp, cfg, stream) if with_bound else None
    elapsed = 1000.0 * (time.perf_counter() - start)
    _check_finite("tv", None if tv is None else tv.value)
    _check_finite("bound", None if bound is None else bound.total.value)
    if tv is not None and bound is not None and tv.exact and bound.total.exact:
        if bound.total.value < tv.value - VALIDITY_TOL:
            raise GuardError(f"exact bound {bound.total.value!r} below exact tv {tv.value!r}")
    return ScalingRow(exp.name, exp.n, exp.spec.param_json(), tv, bound, cfg.cond_mode,
                      cfg.seed, cfg.mc_samples, elapsed)


def run_rows(cfg: ExperimentConfig) -> tuple[list[ScalingRow], Optional[dict]]:
    stream = RandomStream(cfg.seed, "steind")
    base = build_experiment(cfg.model)
    if cfg.command == "tv-exact":
        return [_row(base, cfg, stream, tv_source="exact", with_bound=False)], None
    if cfg.command == "tv-mc":
        return [_row(base, cfg, stream, tv_source="mc", with_bound=False)], None
    if cfg.command == "bound":
        return [_row(base, cfg, stream, tv_source=cfg.tv_source, with_bound=True)], None
    rows = [_row(base.with_size(n), cfg, stream.child(f"n={n}"), tv_source=cfg.tv_source,
                 with_bound=True) for n in cfg.sizes]
    slope, intercept, se = fit_rate([r.n for r in rows], [r.tv.value for r in rows])
    b_slope, b_intercept, b_se = fit_rate([r.n for r in rows], [r.bound.total.value for r in rows])
    summary = {
        "model": cfg.model.model, "sizes": list(cfg.sizes), "cond_mode": cfg.cond_mode,
        "tv_fit": {"slope": slope, "intercept": intercept, "slope_se": se},
        "bound_fit": {"slope": b_slope, "intercept": b_intercept, "slope_se": b_se},
        "runtime_ms": [r.runtime_ms for r in rows],
    }
    return rows, summary


def validate_coupling(cfg: ExperimentConfig) -> dict:
    exp = build_experiment(cfg.model)
    mu, _ = exp.exact_moments()
    exhaustive = cfg.exhaustive
    batch = None
    if exhaustive is not False:
        try:
            batch = exp.coupling_exhaustive()
        except (ValueError, NotImplementedError):
            if exhaustive:
                raise
    if batch is None:
        batch = exp.coupling(RandomStream(cfg.seed, "steind").child("coupling"), cfg.mc_samples,
                             workers=cfg.workers)
    tests = {"1": np.ones_like, "s": lambda s: s, "s^2": lambda s: s ** 2,
             "min(s,3)": lambda s: np.minimum(s, 3)}
    residuals = {}
    ok = True
    for name, f in tests.items():
        r = stein_identity_residual(batch, f, mu)
        residuals[name] = r.to_dict()
        limit = RESIDUAL_TOL if batch.exact else 4 * r.std_error + RESIDUAL_TOL
        ok &= abs(r.value) <= limit
    report = {"model": cfg.model.model, "params": cfg.model.params, "exhaustive": batch.exact,
              "draws": len(batch), "residuals": residuals, "passed": bool(ok)}
    if not ok:
        raise GuardError("Stein identity residual outside tolerance: " + dumps(residuals))
    return report


def shift_tv_report(cfg: ExperimentConfig) -> dict:
    exp = build_experiment(cfg.model)
    stream = RandomStream(cfg.seed, "steind")
    pairs = exp.natural_pair(stream.child("pair"), cfg.mc_samples, workers=cfg.workers)
    est = rollin_ross_bound(pairs.v, pairs.v_prime, stream=stream.child("boot"))
    report = {"model": cfg.model.model, "params": cfg.model.params,
              "rollin_ross": est.to_dict(), "mc_samples": cfg.mc_samples}
    try:
        report["exact_shift_tv"] = shift_tv_exact(exp.exact_pmf())
    except (ValueError, NotImplementedError):
        report["exact_shift_tv"] = None
    _check_finite("rollin_ross", est.value)
    return report


def run(cfg: ExperimentConfig, stdout=None) -> None:
    stdout = stdout or sys.stdout
    if cfg.command in ("validate-coupling", "shift-tv"):
        report = validate_coupling(cfg) if cfg.command == "validate-coupling" else shift_tv_report(cfg)
        _emit(cfg.output, dumps(report) + "\n", stdout)
        return
    rows, summary = run_rows(cfg)
    _emit(cfg.output, rows_to_csv(rows, cfg.record_runtime), stdout)
    if summary is not None:
        target = cfg.summary
        if target is None and cfg.output:
            target = str(Path(cfg.output).with_suffix(".summary.json"))
        if target:
            Path(target).write_text(dumps(summary) + "\n")


def _emit(path: Optional[str], text: str, stdout) -> None:
    if path:
        Path(path).write_text(text)
    else:
        stdout.write(text)


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="steind", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="action", required=True)
    run_p = sub.add_parser("run", help="run one experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the experiment JSON")
    run_p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a (dotted) config field; repeatable")
    args = parser.parse_args(argv)
    try:
        data = json.loads(Path(args.config).read_text())
        cfg = ExperimentConfig.from_dict(apply_overrides(data, args.override))
        run(cfg)
    except GuardError as exc:
        return _fail(3, "numerical_guard", str(exc))
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(2, "config", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
