import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steind.couplings import size_bias_coupling_draw, size_bias_exhaustive, stein_identity_residual
from steind.dist import IntegerPMF, shift_tv_exact, tv
from steind.estimators import empirical_pmf, rollin_ross_bound
from steind.models import ConfigError, ModelSpec, build_experiment
from steind.models.binomial_ref import (BinomialRefParams, binomial_pair_exact, binomial_ref_pair,
                                        exact_pair_ingredients, linearity_certificate)
from steind.models.er_degree import (ErdosRenyiDegree, ErdosRenyiDegreeParams, er_bruteforce_pmf,
                                     er_degree_sample, er_exact_moments, free_graph_pmf)
from steind.models.occupancy import (Occupancy, OccupancyParams, occupancy_ball_move_pair,
                                     occupancy_bruteforce_pmf, occupancy_exact_moments,
                                     occupancy_exact_pmf)
from steind.models.two_runs import (TwoRuns, TwoRunsParams, path_pmf, two_runs_bruteforce_pmf,
                                    two_runs_conditional_shift_tv, two_runs_exact_moments,
                                    two_runs_exact_pmf)
from steind.couplings import local_dep_coupling_draw
from steind.rng import RandomStream

FS = [lambda s: np.ones_like(s, dtype=float), lambda s: np.asarray(s, float),
      lambda s: np.asarray(s, float) ** 2, lambda s: np.minimum(s, 3).astype(float)]


def _mc_mean_ok(samples, mu):
    se = np.std(samples, ddof=1) / math.sqrt(len(samples))
    return abs(np.mean(samples) - mu) <= 4 * se


# 2-runs ---------------------------------------------------------------------

class TestTwoRuns:
    def test_moments(self):
        assert two_runs_exact_moments(TwoRunsParams(10, 0.5)) == pytest.approx((2.5, 3.125), abs=1e-15)
        mu, s2 = two_runs_exact_moments(TwoRunsParams(8, 0.3))
        brute = two_runs_bruteforce_pmf(TwoRunsParams(8, 0.3))
        assert mu == pytest.approx(0.72, abs=1e-12)
        # 2^8 enumeration gives 0.9576
        assert s2 == pytest.approx(0.9576, abs=1e-12)
        assert brute.var() == pytest.approx(s2, abs=1e-12)
        assert two_runs_exact_moments(TwoRunsParams(10, 0.99))[1] > 0

    def test_pmf(self):
        p7 = two_runs_exact_pmf(TwoRunsParams(7, 0.5))
        assert p7.lo >= 0 and p7.hi <= 7 and math.fsum(p7.probs) == pytest.approx(1.0)
        assert two_runs_exact_pmf(TwoRunsParams(10, 0.5)).mean() == pytest.approx(2.5, abs=1e-12)
        dp = two_runs_exact_pmf(TwoRunsParams(12, 0.3))
        brute = two_runs_bruteforce_pmf(TwoRunsParams(12, 0.3))
        assert dp.lo == brute.lo and np.max(np.abs(dp.probs - brute.probs)) < 1e-12
        with pytest.raises(ValueError):
            two_runs_exact_pmf(TwoRunsParams(10000, 0.5))

    def test_params_validation(self):
        for bad in ((6, 0.5), (10, 0.0), (10, 1.0)):
            with pytest.raises(ValueError):
                TwoRunsParams(*bad)

    def test_theta_and_eta_bound(self):
        model = TwoRuns(TwoRunsParams(10, 0.3))
        assert model.theta() == 7
        _, s2 = two_runs_exact_moments(model.params)
        _, _, _, eta = model._window_xi_eta()
        assert np.all(np.abs(eta) <= 3 / math.sqrt(s2) + 1e-12)
        batch = local_dep_coupling_draw(model, RandomStream(1, "eta"), 20000)
        assert np.all(np.abs(batch.d) <= 3 + 1e-12)

    def test_analytic_shift_tv(self):
        p = TwoRunsParams(100, 0.5)
        raw = two_runs_conditional_shift_tv(p, clamp=False)
        assert raw == pytest.approx(math.sqrt(288) / (2 * 94 * 0.0625))
        assert two_runs_conditional_shift_tv(p) == 1.0
        assert two_runs_conditional_shift_tv(TwoRunsParams(7, 0.5)) <= 1.0
        n = 10000
        ratio = (two_runs_conditional_shift_tv(TwoRunsParams(4 * n, 0.5), clamp=False)
                 / two_runs_conditional_shift_tv(TwoRunsParams(n, 0.5), clamp=False))
        assert ratio == pytest.approx(0.5, rel=0.05)

    def test_path_pmf_matches_enumeration(self):
        m, p = 6, 0.35
        codes = np.arange(1 << m)
        bits = (codes[:, None] >> np.arange(m)) & 1
        w = p ** bits.sum(1) * (1 - p) ** (m - bits.sum(1))
        for a in (0, 1):
            for b in (0, 1):
                v = a * bits[:, 0] + (bits[:, 1:] * bits[:, :-1]).sum(1) + b * bits[:, -1]
                ref = IntegerPMF(0, np.bincount(v, weights=w))
                assert tv(path_pmf(m, a, b, p), ref) < 1e-14

    def test_conditional_window_law_matches_enumeration(self):
        # conditional law of S given window = const + V on the path
        n, p = 9, 0.4
        model = TwoRuns(TwoRunsParams(n, p))
        codes = np.arange(1 << n)
        bits = ((codes[:, None] >> np.arange(n)) & 1)
        w = p ** bits.sum(1) * (1 - p) ** (n - bits.sum(1))
        s = (bits * np.roll(bits, -1, axis=1)).sum(1)
        win = bits[:, [n - 1, 0, 1, 2]]  # I = 0
        for key in ((0, 1, 1, 0), (1, 1, 1, 1), (1, 0, 0, 1)):
            sel = np.all(win == key, axis=1)
            counts = np.bincount(s[sel] - s[sel].min(), weights=w[sel])
            cond = IntegerPMF(int(s[sel].min()), counts / counts.sum())
            assert shift_tv_exact(cond) == pytest.approx(
                model.window_shift_tv((0, *key), "exact"), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=7, max_size=30), st.integers(0, 29))
    def test_rotation_invariance(self, bits, k):
        x = np.array([bits])
        s = (x * np.roll(x, -1, axis=1)).sum()
        y = np.roll(x, k % len(bits), axis=1)
        assert (y * np.roll(y, -1, axis=1)).sum() == s

    def test_sampler_mean(self):
        exp = build_experiment({"model": "two_runs", "n": 10, "p": 0.5})
        assert _mc_mean_ok(exp.sample(RandomStream(2, "tr"), 10 ** 6), 2.5)


# Erdos-Renyi ----------------------------------------------------------------

class TestErdosRenyi:
    def test_bruteforce_examples(self):
        assert er_bruteforce_pmf(ErdosRenyiDegreeParams.from_p(4, 0.5, 1)).mean() == pytest.approx(1.5)
        two = er_bruteforce_pmf(ErdosRenyiDegreeParams.from_p(2, 0.3, 1))
        assert two.pmf(0) == pytest.approx(0.7) and two.pmf(2) == pytest.approx(0.3)
        assert er_bruteforce_pmf(ErdosRenyiDegreeParams.from_p(3, 0.5, 3)) == IntegerPMF.point_mass(0)
        with pytest.raises(ValueError):
            er_bruteforce_pmf(ErdosRenyiDegreeParams.from_p(7, 0.5, 1))

    @pytest.mark.parametrize("n,p,d", [(4, 0.5, 1), (5, 0.4, 1), (6, 0.3, 2), (6, 0.7, 4)])
    def test_exact_moments_match_enumeration(self, n, p, d):
        params = ErdosRenyiDegreeParams.from_p(n, p, d)
        mu, s2 = er_exact_moments(params)
        brute = er_bruteforce_pmf(params)
        assert mu == pytest.approx(brute.mean(), abs=1e-12)
        assert s2 == pytest.approx(brute.var(), abs=1e-12)

    def test_sampler(self):
        params = ErdosRenyiDegreeParams.from_p(4, 0.5, 1)
        s = er_degree_sample(params, RandomStream(3, "er"), 10 ** 6)
        assert _mc_mean_ok(s, 1.5)
        assert np.all(er_degree_sample(ErdosRenyiDegreeParams.from_p(4, 0.5, 4), RandomStream(), 1000) == 0)
        assert np.mean(er_degree_sample(ErdosRenyiDegreeParams.from_p(20, 1e-4, 0), RandomStream(), 1000)) > 19.9

    def test_size_bias_exhaustive_law_and_identity(self):
        params = ErdosRenyiDegreeParams.from_p(4, 0.5, 1)
        model = ErdosRenyiDegree(params)
        batch = size_bias_exhaustive(model)
        pmf = er_bruteforce_pmf(params)
        ss = batch.s + batch.d_int
        law = IntegerPMF(0, np.bincount(ss, weights=batch.weights))
        assert tv(law, pmf.size_biased()) < 1e-12
        for f in FS:
            assert abs(stein_identity_residual(batch, f, model.mean()).value) < 1e-10

    def test_size_bias_draws_displacement_and_unchanged_case(self):
        params = ErdosRenyiDegreeParams.from_p(8, 0.4, 2)
        batch = size_bias_coupling_draw(ErdosRenyiDegree(params), RandomStream(4, "sb"), 20000)
        deg_i = batch.ctx[:, 1]
        assert np.all(np.abs(batch.d_int) <= np.abs(deg_i - 2) + 1)
        assert np.all(batch.d_int[deg_i == 2] == 0)

    def test_free_graph_pmf_without_offsets_is_er_law(self):
        params = ErdosRenyiDegreeParams.from_p(5, 0.4, 1)
        assert tv(free_graph_pmf(5, (0,) * 5, params.p, 1), er_bruteforce_pmf(params)) < 1e-14


# Occupancy ------------------------------------------------------------------

class TestOccupancy:
    def test_moments(self):
        assert occupancy_exact_moments(OccupancyParams(4, 2, 2)) == pytest.approx((0.75, 0.9375), abs=1e-12)
        mu, s2 = occupancy_exact_moments(OccupancyParams(5, 4, 3))
        assert s2 == pytest.approx(mu - mu ** 2, abs=1e-15)
        brute = occupancy_bruteforce_pmf(OccupancyParams(6, 3, 2))
        mu, s2 = occupancy_exact_moments(OccupancyParams(6, 3, 2))
        assert (mu, s2) == pytest.approx((brute.mean(), brute.var()), abs=1e-12)

    def test_pmf(self):
        p = occupancy_exact_pmf(OccupancyParams(4, 2, 2))
        assert p.pmf(0) == pytest.approx(5 / 8, abs=1e-15) and p.pmf(2) == pytest.approx(3 / 8, abs=1e-15)
        for params in (OccupancyParams(6, 3, 2), OccupancyParams(7, 4, 2), OccupancyParams(8, 3, 3)):
            dp, brute = occupancy_exact_pmf(params), occupancy_bruteforce_pmf(params)
            assert tv(dp, brute) < 1e-12
        for params in (OccupancyParams(60, 30, 2), OccupancyParams(200, 50, 5)):
            assert occupancy_exact_pmf(params).mean() == pytest.approx(
                occupancy_exact_moments(params)[0], abs=1e-10)
        with pytest.raises(ValueError):
            occupancy_exact_pmf(OccupancyParams(400, 30, 2))

    def test_params_validation(self):
        for bad in ((1, 3, 2), (3, 3, 4), (4, 1, 2)):
            with pytest.raises(ValueError):
                OccupancyParams(*bad)

    def test_size_bias_exhaustive(self):
        params = OccupancyParams(4, 2, 2)
        model = Occupancy(params)
        batch = size_bias_exhaustive(model)
        ss = batch.s + batch.d_int
        assert np.all(ss[batch.weights > 0] == 2)
        for f in FS:
            assert abs(stein_identity_residual(batch, f, model.mean()).value) < 1e-10

    def test_size_bias_draws(self):
        params = OccupancyParams(12, 5, 2)
        model = Occupancy(params)
        batch = size_bias_coupling_draw(model, RandomStream(5, "occ"), 200000)
        m_i = batch.ctx[:, 1]
        assert np.all(np.abs(batch.d_int) <= np.abs(m_i - 2) + 1)
        law = empirical_pmf(batch.s + batch.d_int)
        assert tv(law, occupancy_exact_pmf(params).size_biased()) < 0.01
        assert _mc_mean_ok(batch.s, model.mean())

    def test_ball_move_pair(self):
        single = occupancy_ball_move_pair(5, 1, 2, RandomStream(), 1000)
        assert np.array_equal(single.v, single.v_prime)
        pairs = occupancy_ball_move_pair(60, 30, 2, RandomStream(6, "bm"), 200000)
        assert np.all(np.abs(pairs.v - pairs.v_prime) <= 2)
        exact = shift_tv_exact(occupancy_exact_pmf(OccupancyParams(60, 30, 2)))
        assert rollin_ross_bound(pairs.v, pairs.v_prime, n_boot=0).value >= exact

    def test_context_shift_tv_exact_is_sub_model(self):
        model = Occupancy(OccupancyParams(10, 4, 2))
        # no urns touched, M_I = 3: the rest is 7 balls in 3 urns
        ctx = (0, 3, 0, 0, 0, 0)
        ref = shift_tv_exact(occupancy_bruteforce_pmf(OccupancyParams(7, 3, 2)))
        assert model.context_shift_tv(ctx, "exact") == pytest.approx(ref, abs=1e-12)


# Binomial reference ---------------------------------------------------------

class TestBinomialRef:
    def test_certificate(self):
        cert = linearity_certificate(6, Fraction(3, 10))
        assert cert.remainder_zero and cert.unit_step and cert.lam == Fraction(1, 6)
        with pytest.raises(ValueError):
            linearity_certificate(13)

    def test_pair_exact_linearity(self):
        params = BinomialRefParams(6, 0.3)
        pair = binomial_pair_exact(params)
        for s in range(7):
            sel = pair.v == s
            drift = np.dot(pair.weights[sel], pair.v[sel] - pair.v_prime[sel]) / pair.weights[sel].sum()
            assert drift == pytest.approx((s - 6 * 0.3) / 6, abs=1e-14)

    def test_mc_pair_unit_step(self):
        pair = binomial_ref_pair(BinomialRefParams(20, 0.4), RandomStream(7, "b"), 10000)
        assert np.all(np.abs(pair.v - pair.v_prime) <= 1)

    def test_ingredients_at_half(self):
        ing = exact_pair_ingredients(BinomialRefParams(30, 0.5))
        assert ing["lam"] == pytest.approx(1 / 30) and ing["e_r2"] == 0
        assert ing["var_cond_d2"] == pytest.approx(0.0, abs=1e-15)


# Registry -------------------------------------------------------------------

class TestRegistry:
    def test_spec_round_trip(self):
        spec = ModelSpec.from_dict({"model": "occupancy", "n": 6, "m": 3, "d": 2})
        assert spec.to_dict() == {"model": "occupancy", "n": 6, "m": 3, "d": 2}
        assert spec.param_json() == '{"d":2,"m":3,"n":6}'

    @pytest.mark.parametrize("bad", [
        {"model": "nope", "n": 3},
        {"n": 3},
        {"model": "two_runs", "n": 5, "p": 0.5},
        {"model": "er_degree", "n": 5, "d": 1},
        {"model": "er_degree", "n": 5, "d": 1, "p": 0.3, "theta": 1.2},
        {"model": "occupancy", "n": 4, "m": 2},
    ])
    def test_invalid_specs(self, bad):
        with pytest.raises(ConfigError):
            ModelSpec.from_dict(bad)

    def test_bound_dominates_exact_tv_small_cases(self):
        for spec in ({"model": "occupancy", "n": 6, "m": 3, "d": 2},
                     {"model": "er_degree", "n": 5, "p": 0.4, "d": 1},
                     {"model": "binomial_ref", "n": 30, "p": 0.5}):
            exp = build_experiment(spec)
            rep = exp.bound("exact", RandomStream(8, "b"))
            from steind.dist import NormalParams, tv_to_dnormal
            mu, s2 = exp.exact_moments()
            assert rep.total.value >= tv_to_dnormal(exp.exact_pmf(), NormalParams(mu, s2))[0]
