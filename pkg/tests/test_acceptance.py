"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line (shown in the terminal summary and
printed directly when the module runs as a script) together with the measured
quantity and its runtime against the budget.
"""

import io
import math
import sys
import time

import numpy as np
import pytest

from steind.bounds import independent_sum_shift_bound, stein_solution
from steind.cli import ExperimentConfig, fit_rate, run
from steind.couplings import local_dep_exhaustive, size_bias_coupling_draw, size_bias_exhaustive
from steind.couplings import stein_identity_residual
from steind.dist import (IntegerPMF, NormalParams, binomial_pmf, convolve, shift_tv_exact, tv,
                         tv_to_dnormal)
from steind.estimators import empirical_pmf, rollin_ross_bound
from steind.models import build_experiment
from steind.models.er_degree import ErdosRenyiDegree, ErdosRenyiDegreeParams, er_bruteforce_pmf
from steind.models.occupancy import (Occupancy, OccupancyParams, occupancy_ball_move_pair,
                                     occupancy_bruteforce_pmf, occupancy_exact_moments,
                                     occupancy_exact_pmf)
from steind.models.two_runs import (TwoRuns, TwoRunsParams, two_runs_exact_moments,
                                    two_runs_exact_pmf)
from steind.rng import RandomStream

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []

TEST_FUNCTIONS = {
    "1": lambda s: np.ones_like(s, dtype=float),
    "s": lambda s: np.asarray(s, dtype=float),
    "s^2": lambda s: np.asarray(s, dtype=float) ** 2,
    "min(s,3)": lambda s: np.minimum(s, 3).astype(float),
}


class Criterion:
    """Times a block, then records and asserts the outcome."""

    def __init__(self, number: int, title: str, budget_s: float):
        self.number, self.title, self.budget = number, title, budget_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        return False

    def finish(self, ok: bool, detail: str) -> None:
        elapsed = time.perf_counter() - self.start
        in_time = elapsed <= self.budget
        status = "PASS" if ok and in_time else "FAIL"
        line = (f"{status} criterion {self.number:>2} {self.title}: {detail}; "
                f"{elapsed:.2f}s (budget {self.budget:g}s)")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
        assert in_time, line


def test_criterion_01_stein_identity_exact():
    with Criterion(1, "Stein identity residuals", 10) as c:
        worst = 0.0
        tr = TwoRuns(TwoRunsParams(8, 0.3))
        batch = local_dep_exhaustive(tr)
        for f in TEST_FUNCTIONS.values():
            worst = max(worst, abs(stein_identity_residual(batch, f, 8 * 0.09).value))
        occ = Occupancy(OccupancyParams(4, 2, 2))
        batch = size_bias_exhaustive(occ)
        for f in TEST_FUNCTIONS.values():
            worst = max(worst, abs(stein_identity_residual(batch, f, occ.mean()).value))
        c.finish(worst <= 1e-10, f"max |residual| = {worst:.3e} (tol 1e-10)")


def test_criterion_02_main_bound_validity():
    with Criterion(2, "main bound >= exact TV, 2-runs n=10 p=1/2", 30) as c:
        exp = build_experiment({"model": "two_runs", "n": 10, "p": 0.5})
        report = exp.theorem_bound_exhaustive("exact")
        exact_tv, _ = tv_to_dnormal(two_runs_exact_pmf(TwoRunsParams(10, 0.5)), NormalParams(2.5, 3.125))
        ok = report.total.exact and report.total.value >= exact_tv - 1e-9
        c.finish(ok, f"bound {report.total.value:.6f} vs tv {exact_tv:.6f}")


def test_criterion_03_unit_step_bound_validity():
    with Criterion(3, "unit-step bound >= exact TV, binomial n=30 p=1/2", 5) as c:
        exp = build_experiment({"model": "binomial_ref", "n": 30, "p": 0.5})
        report = exp.bound("exact", RandomStream(name="acceptance/3"))
        exact_tv, _ = tv_to_dnormal(binomial_pmf(30, 0.5), NormalParams(15, 7.5))
        ok = report.total.exact and report.total.value >= exact_tv
        c.finish(ok, f"bound {report.total.value:.6f} vs tv {exact_tv:.6f}")


def test_criterion_04_independent_sum_shift():
    with Criterion(4, "shift-TV of 16 Bernoulli(1/2) <= 4/sqrt(16)", 1) as c:
        bern = IntegerPMF(0, [0.5, 0.5])
        total = bern
        for _ in range(15):
            total = convolve(total, bern)
        exact = shift_tv_exact(total)
        bound = independent_sum_shift_bound([bern] * 16)
        ok = (abs(exact - math.comb(16, 8) / 2 ** 16) < 1e-15 and abs(bound - 1.0) < 1e-15
              and exact <= bound)
        c.finish(ok, f"shift-TV {exact:.6f} <= bound {bound:.6f}")


def test_criterion_05_two_runs_rate():
    with Criterion(5, "2-runs exact TV rate, p=1/2", 300) as c:
        sizes = [32, 64, 128, 256, 512]
        tvs = []
        for n in sizes:
            params = TwoRunsParams(n, 0.5)
            mu, s2 = two_runs_exact_moments(params)
            tvs.append(tv_to_dnormal(two_runs_exact_pmf(params), NormalParams(mu, s2))[0])
        slope, _, se = fit_rate(sizes, tvs)
        c.finish(-0.65 <= slope <= -0.35, f"slope {slope:.4f} +- {se:.4f} in [-0.65, -0.35]")


def test_criterion_06_occupancy_exact_formulas():
    with Criterion(6, "occupancy moments and pmf DP vs brute force", 10) as c:
        mu, s2 = occupancy_exact_moments(OccupancyParams(4, 2, 2))
        brute_small = occupancy_bruteforce_pmf(OccupancyParams(4, 2, 2))
        dp = occupancy_exact_pmf(OccupancyParams(6, 3, 2))
        brute = occupancy_bruteforce_pmf(OccupancyParams(6, 3, 2))
        n = max(dp.hi, brute.hi) + 1
        diff = max(abs(dp.pmf(k) - brute.pmf(k)) for k in range(n))
        ok = (abs(mu - 0.75) <= 1e-12 and abs(s2 - 0.9375) <= 1e-12
              and abs(brute_small.mean() - mu) <= 1e-12 and abs(brute_small.var() - s2) <= 1e-12
              and diff <= 1e-12)
        c.finish(ok, f"mu={mu!r}, sigma2={s2!r}, max pmf diff {diff:.1e}")


def test_criterion_07_size_bias_law():
    with Criterion(7, "size-biased law of S^s, 10^6 draws", 120) as c:
        draws = 10 ** 6
        er_params = ErdosRenyiDegreeParams.from_p(5, 0.4, 1)
        er = size_bias_coupling_draw(ErdosRenyiDegree(er_params), RandomStream(1, "acceptance/7er"), draws)
        er_tv = tv(empirical_pmf(er.s + er.d_int), er_bruteforce_pmf(er_params).size_biased())
        occ_params = OccupancyParams(4, 2, 2)
        occ = size_bias_coupling_draw(Occupancy(occ_params), RandomStream(1, "acceptance/7occ"), draws)
        occ_tv = tv(empirical_pmf(occ.s + occ.d_int), occupancy_exact_pmf(occ_params).size_biased())
        c.finish(er_tv <= 0.01 and occ_tv <= 0.01, f"ER tv {er_tv:.2e}, occupancy tv {occ_tv:.2e}")


def test_criterion_08_rollin_ross_validity():
    with Criterion(8, "ball-move pair bound >= exact shift-TV, occupancy (60,30,2)", 120) as c:
        pairs = occupancy_ball_move_pair(60, 30, 2, RandomStream(1, "acceptance/8"), 10 ** 6)
        est = rollin_ross_bound(pairs.v, pairs.v_prime, stream=RandomStream(1, "acceptance/8boot"))
        exact = shift_tv_exact(occupancy_exact_pmf(OccupancyParams(60, 30, 2)))
        c.finish(est.value >= exact, f"estimate {est.value:.5f} (se {est.std_error:.5f}) vs exact {exact:.5f}")


def test_criterion_09_stein_norms():
    with Criterion(9, "Stein solution sup-norms, h = even indicator", 30) as c:
        details, ok = [], True
        for sigma in (1.0, 2.0, 5.0):
            sol = stein_solution(lambda z: int(z % 2 == 0), NormalParams(0.0, sigma ** 2), grid_step=1e-3)
            ok &= sol.sup_f <= math.sqrt(math.pi / 2) / sigma + 1e-6
            ok &= sol.sup_f_prime <= 2 / sigma ** 2 + 1e-6
            details.append(f"sigma={sigma:g}: |f|={sol.sup_f:.4f}/{sol.f_limit:.4f}, "
                           f"|f'|={sol.sup_f_prime:.4f}/{sol.f_prime_limit:.4f}")
        c.finish(bool(ok), "; ".join(details))


def _scaling_csv(workers: int) -> str:
    buf = io.StringIO()
    cfg = ExperimentConfig.from_dict({
        "command": "scaling", "model": {"model": "two_runs", "n": 32, "p": 0.5},
        "sizes": [32, 64, 128, 256], "tv_source": "mc", "mc_samples": 200000,
        "cond_mode": "exact", "seed": 12345, "workers": workers,
    })
    run(cfg, stdout=buf)
    return buf.getvalue()


def test_criterion_10_determinism():
    with Criterion(10, "scaling CSV byte-identical across reruns and workers {1, 8}", 300) as c:
        first = _scaling_csv(1)
        again = _scaling_csv(1)
        wide = _scaling_csv(8)
        ok = first == again == wide and first.count("\n") == 5
        c.finish(ok, f"{len(first)} bytes, rerun equal {first == again}, workers 1 vs 8 equal {first == wide}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
