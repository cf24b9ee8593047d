import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steind.dist import (IntegerPMF, NormalParams, PMFError, binomial_pmf, convolve, dnormal_pmf,
                         dnormal_pmf_table, dnormal_probs, kolmogorov, shift_tv_exact,
                         std_normal_cdf, tv, tv_to_dnormal, uniform_pmf)


def mp_phi(x):
    mpmath.mp.dps = 40
    return float((1 + mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2))) / 2)


def pmfs(max_len=8):
    return st.tuples(
        st.integers(-5, 5),
        st.lists(st.floats(0.0, 1.0), min_size=1, max_size=max_len).filter(lambda v: sum(v) > 1e-3),
    ).map(lambda t: IntegerPMF(t[0], np.array(t[1]) / math.fsum(t[1])))


class TestIntegerPMF:
    def test_trims_and_normalizes(self):
        p = IntegerPMF(-2, [0.0, 0.25, 0.75, 0.0])
        assert p.lo == -1 and p.hi == 0
        assert p.pmf(-1) == 0.25 and p.pmf(5) == 0.0

    @pytest.mark.parametrize("probs", [[0.5, 0.6], [-0.1, 1.1], [float("nan"), 1.0], [0.0, 0.0]])
    def test_rejects_invalid(self, probs):
        with pytest.raises(PMFError):
            IntegerPMF(0, probs)

    def test_json_round_trip(self):
        p = binomial_pmf(7, 0.3).shifted(-2)
        q = IntegerPMF.from_json(p.to_json())
        assert q == p
        assert set(json.loads(p.to_json())) == {"offset", "probs"}

    def test_moments_of_binomial(self):
        p = binomial_pmf(20, 0.3)
        assert p.mean() == pytest.approx(6.0, abs=1e-12)
        assert p.var() == pytest.approx(4.2, abs=1e-12)

    def test_size_biased(self):
        p = IntegerPMF.from_dict({0: 0.625, 2: 0.375})
        assert p.size_biased() == IntegerPMF.point_mass(2)

    def test_convolution_of_bernoullis_is_binomial(self):
        b = IntegerPMF(0, [0.7, 0.3])
        acc = b
        for _ in range(5):
            acc = convolve(acc, b)
        assert tv(acc, binomial_pmf(6, 0.3)) < 1e-14


class TestNormal:
    def test_cdf_values(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(40.0) == pytest.approx(1.0, abs=1e-15)
        assert std_normal_cdf(0.5) == pytest.approx(0.691462461274, abs=1e-12)

    @pytest.mark.parametrize("x", [-9.0, -3.3, -0.1, 0.7, 2.5, 6.0])
    def test_cdf_matches_mpmath(self, x):
        assert std_normal_cdf(x) == pytest.approx(mp_phi(x), abs=1e-15, rel=1e-13)

    def test_dnormal_center_mass(self):
        assert dnormal_pmf(NormalParams(0, 1), 0) == pytest.approx(0.3829249226, abs=1e-10)
        assert dnormal_pmf(NormalParams(0, 1), 0) == pytest.approx(mp_phi(0.5) - mp_phi(-0.5), abs=1e-15)

    def test_dnormal_tail_and_symmetry(self):
        assert dnormal_pmf(NormalParams(0, 1), 10) < 1e-15
        p = NormalParams(3, 4)
        for k in range(8):
            assert dnormal_pmf(p, 3 + k) == pytest.approx(dnormal_pmf(p, 3 - k), abs=1e-16)

    def test_upper_tail_keeps_relative_precision(self):
        p = NormalParams(0, 1)
        exact = mp_phi(-8.5) - mp_phi(-9.5)
        assert dnormal_pmf(p, 9) == pytest.approx(exact, rel=1e-9)

    def test_vectorized_matches_scalar(self):
        p = NormalParams(2.5, 3.125)
        zs = np.arange(-5, 12)
        assert np.allclose(dnormal_probs(p, zs), [dnormal_pmf(p, int(z)) for z in zs], atol=1e-16)

    def test_table_mass_and_omitted(self):
        table, omitted = dnormal_pmf_table(NormalParams(1.3, 2.0), 1e-12)
        assert 0 <= omitted <= 1e-12
        assert math.fsum(table.probs) + omitted == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -1e-3])
    def test_table_eps_domain(self, eps):
        with pytest.raises(ValueError):
            dnormal_pmf_table(NormalParams(0, 1), eps)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            NormalParams(0, 0)


class TestDistances:
    @settings(max_examples=60, deadline=None)
    @given(pmfs(), pmfs(), pmfs())
    def test_tv_is_a_metric(self, p, q, r):
        assert 0 <= tv(p, q) <= 1
        assert tv(p, q) == pytest.approx(tv(q, p), abs=1e-15)
        assert tv(p, p) == 0
        assert tv(p, r) <= tv(p, q) + tv(q, r) + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10))
    def test_shift_tv_of_unimodal_is_mode_mass(self, raw):
        vals = sorted(raw)
        peak = vals[-1]
        probs = np.array(vals[:-1][::2] + [peak] + vals[:-1][1::2][::-1])
        probs /= probs.sum()
        assert shift_tv_exact(IntegerPMF(0, probs)) == pytest.approx(probs.max(), abs=1e-12)

    def test_shift_tv_values(self):
        assert shift_tv_exact(IntegerPMF.point_mass(4)) == 1.0
        assert shift_tv_exact(uniform_pmf(0, 1)) == 0.5
        assert shift_tv_exact(binomial_pmf(16, 0.5)) == pytest.approx(math.comb(16, 8) / 2 ** 16, abs=1e-15)

    def test_tv_to_dnormal_of_own_table_is_tiny(self):
        params = NormalParams(4.2, 6.0)
        table, _ = dnormal_pmf_table(params)
        value, err = tv_to_dnormal(table, params)
        assert value < 1e-12 and err <= 0.5e-12

    def test_tv_to_dnormal_point_mass(self):
        value, _ = tv_to_dnormal(IntegerPMF.point_mass(0), NormalParams(0, 1))
        assert value == pytest.approx(1 - (mp_phi(0.5) - mp_phi(-0.5)), abs=1e-12)

    def test_kolmogorov_matches_dense_grid(self):
        from scipy.stats import norm
        p = binomial_pmf(30, 0.5)
        params = NormalParams(15, 7.5)
        z = np.linspace(-5, 35, 400001)
        cdf = np.cumsum(p.probs)[np.clip(np.floor(z).astype(int), -1, 30)]
        cdf[z < 0] = 0.0
        grid = np.max(np.abs(cdf - norm.cdf(z, 15, math.sqrt(7.5))))
        assert kolmogorov(p, params) == pytest.approx(grid, abs=1e-5)
        assert kolmogorov(p, params) >= grid - 1e-15
