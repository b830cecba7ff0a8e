import math

import numpy as np
import pytest

from msparisi import FieldLaw, ModelParams
from msparisi.finiten import (
    DisorderSample,
    draw_disorder,
    exact_partition,
    fully_annealed_pressure,
    nested_pressure,
    overlap_moment_sim,
    overlap_msq_exact,
    spin_matrix,
)

R1 = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(1.0,), field=FieldLaw.point_mass())


def zeroed_sample(params, N, h=0.0):
    return DisorderSample(
        couplings=tuple(np.zeros((N, N)) for _ in range(params.r)),
        fields=np.full(N, h),
    )


class TestExactPartition:
    def test_independent_spins(self):
        # all couplings zeroed: Z factorizes over sites
        h0 = 0.3
        lz = exact_partition(R1, 6, zeroed_sample(R1, 6, h0))
        assert lz == pytest.approx(6 * math.log(2 * math.cosh(h0)), abs=1e-12)

    def test_single_site_hand_formula(self):
        # N=1: H = gamma_1 g_11 (sigma^2 = 1), so Z = e^{-gamma g} 2cosh(h)
        sample = DisorderSample(couplings=(np.array([[0.7]]),),
                                fields=np.array([0.4]))
        lz = exact_partition(R1, 1, sample)
        assert lz == pytest.approx(-0.7 + math.log(2 * math.cosh(0.4)), abs=1e-12)

    def test_sign_convention_monotone_in_coupling(self):
        # E_g log Z must increase with the coupling strength (paired draws)
        weak = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(0.5,))
        strong = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(0.9,))
        rng = np.random.default_rng(4)
        diffs = np.empty(10000)
        for i in range(10000):
            g = rng.standard_normal((2, 2))
            s = DisorderSample(couplings=(g,), fields=np.zeros(2))
            diffs[i] = exact_partition(strong, 2, s) - exact_partition(weak, 2, s)
        assert diffs.mean() > 3 * diffs.std(ddof=1) / math.sqrt(len(diffs))

    def test_refuses_large_n(self):
        with pytest.raises(ValueError):
            exact_partition(R1, 25, zeroed_sample(R1, 4))

    def test_spin_matrix_shape(self):
        S = spin_matrix(4)
        assert S.shape == (16, 4)
        assert set(np.unique(S)) == {-1.0, 1.0}
        assert len({tuple(row) for row in S}) == 16


class TestDisorder:
    def test_reproducible(self):
        a = draw_disorder(R1, 5, seed=42)
        b = draw_disorder(R1, 5, seed=42)
        for ga, gb in zip(a.couplings, b.couplings):
            np.testing.assert_array_equal(ga, gb)
        np.testing.assert_array_equal(a.fields, b.fields)

    def test_field_draws_follow_law(self):
        params = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(1.0,),
                             field=FieldLaw(atoms=((-1.0, 0.5), (1.0, 0.5))))
        s = draw_disorder(params, 2000, seed=1)
        assert set(np.unique(s.fields)) <= {-1.0, 1.0}
        assert abs(np.mean(s.fields)) < 0.1


class TestNestedPressure:
    def test_single_site_closed_form(self):
        # zeta_0 = 0.5, gamma_1 = 1, h = 0: p_1 = log 2 + zeta_0 gamma^2 / 2
        est = nested_pressure(R1, 1, 20000, [400], seed=7)
        target = math.log(2.0) + 0.25
        assert abs(est.mean - target) <= 3 * est.stderr

    def test_jensen_bound(self):
        # annealed value is an upper bound at zero field
        params = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(0.6,))
        est = nested_pressure(params, 6, 200, [200], seed=3)
        assert est.mean <= math.log(2.0) + 0.18 + 3 * est.stderr

    def test_fully_annealed_identity(self):
        params = ModelParams(r=2, zeta=(0.3, 0.6, 1.0), gamma=(0.8, 1.3))
        assert fully_annealed_pressure(params) == pytest.approx(
            math.log(2.0) + 0.5 * 1.3**2, abs=1e-15)
        with_field = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(1.0,),
                                 field=FieldLaw.point_mass(0.4))
        assert fully_annealed_pressure(with_field) == pytest.approx(
            0.5 + math.log(2 * math.cosh(0.4)), abs=1e-15)

    def test_deterministic_and_thread_invariant(self):
        a = nested_pressure(R1, 3, 50, [60], seed=11)
        b = nested_pressure(R1, 3, 50, [60], seed=11)
        c = nested_pressure(R1, 3, 50, [60], seed=11, threads=4)
        assert a == b == c

    def test_two_scale_nesting(self):
        params = ModelParams(r=2, zeta=(0.4, 0.7, 1.0), gamma=(0.3, 0.5))
        est = nested_pressure(params, 4, 40, [40, 40], seed=9)
        assert est.mean <= math.log(2.0) + 0.125 + 3 * est.stderr
        assert est.n_inner == (40, 40)

    def test_depth_guard(self):
        params = ModelParams(r=3, zeta=(0.2, 0.4, 0.7, 1.0), gamma=(0.2, 0.3, 0.4))
        with pytest.raises(ValueError):
            nested_pressure(params, 2, 5, [5, 5, 5], seed=0)
        est = nested_pressure(params, 2, 5, [5, 5, 5], seed=0, allow_deep=True)
        assert math.isfinite(est.mean)

    def test_inner_budget_shape_checked(self):
        with pytest.raises(ValueError):
            nested_pressure(R1, 3, 10, [10, 10], seed=0)


class TestOverlapMoments:
    def test_zeroed_couplings_give_one_over_n(self):
        for N in (3, 5, 8):
            q = overlap_msq_exact(R1, N, zeroed_sample(R1, N))
            assert q == pytest.approx(1.0 / N, abs=1e-12)

    def test_tiny_coupling_matches_independent_limit(self):
        params = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(1e-6,))
        est = overlap_moment_sim(params, 5, 1, 50, [50], seed=2)
        assert est.mean == pytest.approx(0.2, abs=1e-6)

    def test_ordering_in_level(self):
        params = ModelParams(r=2, zeta=(0.4, 0.7, 1.0), gamma=(0.3, 0.5))
        o1 = overlap_moment_sim(params, 5, 1, 60, [30, 30], seed=12)
        o2 = overlap_moment_sim(params, 5, 2, 60, [30, 30], seed=12)
        assert o1.mean <= o2.mean + 3 * (o1.stderr + o2.stderr)

    def test_annealed_overlap_small(self):
        # weak couplings at zero field: the overlap moment stays near 1/N
        params = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(0.4,))
        est = overlap_moment_sim(params, 10, 1, 100, [150], seed=6)
        assert est.mean <= 0.1 + 3 * est.stderr + 0.05

    def test_reproducible(self):
        a = overlap_moment_sim(R1, 4, 1, 30, [30], seed=5)
        b = overlap_moment_sim(R1, 4, 1, 30, [30], seed=5, threads=3)
        assert a == b

    def test_level_guard(self):
        with pytest.raises(ValueError):
            overlap_moment_sim(R1, 4, 2, 10, [10], seed=0)
