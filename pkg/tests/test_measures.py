import numpy as np
import pytest

from msparisi import (
    DiscreteMeasure,
    FieldLaw,
    InvariantViolation,
    ModelParams,
    ParisiPair,
    conditional_moment,
    gap_delta,
    measure_to_pair,
    pair_to_measure,
    quantile,
    quantile_right_limit,
    sync_coupling,
    wasserstein1,
)

from conftest import random_measure, random_model

R1 = ModelParams(r=1, zeta=(0.5, 1.0), gamma=(1.0,), field=FieldLaw.point_mass())
MU = DiscreteMeasure.from_pairs([(0.2, 0.3), (0.6, 0.7)])


class TestDiscreteMeasure:
    def test_rejects_unnormalized_weights(self):
        with pytest.raises(InvariantViolation):
            DiscreteMeasure.from_pairs([(0.1, 0.5), (0.2, 0.6)])

    def test_rejects_atom_at_one(self):
        with pytest.raises(InvariantViolation):
            DiscreteMeasure(atoms=np.array([1.0]), cdf=np.array([1.0]))

    def test_merges_close_atoms(self):
        mu = DiscreteMeasure.from_pairs([(0.3, 0.5), (0.3 + 1e-15, 0.5)])
        assert len(mu.atoms) == 1

    def test_weights(self):
        np.testing.assert_allclose(MU.weights, [0.3, 0.7])


class TestQuantile:
    def test_at_breakpoint(self):
        mu = DiscreteMeasure.from_pairs([(0.0, 0.4), (0.5, 0.6)])
        assert quantile(mu, 0.4) == 0.0

    def test_just_above_breakpoint(self):
        mu = DiscreteMeasure.from_pairs([(0.0, 0.4), (0.5, 0.6)])
        assert quantile(mu, 0.41) == 0.5

    def test_point_mass(self):
        mu = DiscreteMeasure.point_mass(0.3)
        for p in (0.1, 0.5, 1.0):
            assert quantile(mu, p) == 0.3

    def test_domain_error(self):
        with pytest.raises(ValueError):
            quantile(MU, 1.5)
        with pytest.raises(ValueError):
            quantile(MU, -0.1)

    def test_galois_connection(self, rng):
        # mu([0, Q(p)]) >= p and Q(mu([0,s])) <= s for atoms s
        for _ in range(50):
            mu = random_measure(rng)
            for p in rng.uniform(0, 1, size=10):
                assert mu.cdf_at(quantile(mu, p)) >= p - 1e-15
            for s in mu.atoms:
                assert quantile(mu, mu.cdf_at(s)) <= s + 1e-15

    def test_right_limit_vs_left_value(self, rng):
        for _ in range(30):
            mu = random_measure(rng)
            for p in rng.uniform(0, 0.999, size=5):
                assert quantile_right_limit(mu, p) >= quantile(mu, p)


class TestWasserstein:
    def test_identity(self, rng):
        for _ in range(10):
            mu = random_measure(rng)
            assert wasserstein1(mu, mu) == 0.0

    def test_point_masses(self):
        assert wasserstein1(
            DiscreteMeasure.point_mass(0.0), DiscreteMeasure.point_mass(0.5)
        ) == pytest.approx(0.5, abs=1e-15)

    def test_frozen_example_against_riemann_sum(self):
        mu1 = DiscreteMeasure.from_pairs([(0.0, 0.4), (0.5, 0.6)])
        mu2 = DiscreteMeasure.point_mass(0.0)
        val = wasserstein1(mu1, mu2)
        assert val == pytest.approx(0.3, abs=1e-14)
        # independent oracle: Riemann sum over quantile levels
        ps = (np.arange(200000) + 0.5) / 200000
        riemann = np.mean([abs(quantile(mu1, p) - quantile(mu2, p)) for p in ps])
        assert val == pytest.approx(riemann, abs=1e-5)

    def test_metric_properties(self, rng):
        for _ in range(25):
            a, b, c = (random_measure(rng) for _ in range(3))
            dab = wasserstein1(a, b)
            dba = wasserstein1(b, a)
            assert dab == pytest.approx(dba, abs=1e-14)
            assert dab >= 0
            assert wasserstein1(a, c) <= dab + wasserstein1(b, c) + 1e-12


class TestMeasurePairMaps:
    def test_frozen_forward_example(self):
        pair = measure_to_pair(MU, R1)
        np.testing.assert_allclose(pair.xi, [0.3, 0.5, 1.0, 1.0])
        np.testing.assert_allclose(pair.x, [0.2, 0.6, 0.6, 1.0])
        np.testing.assert_allclose(pair.gamma_tilde, [0.0, 0.0, 1.0, 1.0])

    def test_no_repetitions_iff_cdf_contains_zeta(self):
        mu = DiscreteMeasure.from_pairs([(0.1, 0.5), (0.7, 0.5)])  # cdf {0.5, 1}
        pair = measure_to_pair(mu, R1)
        core = pair.x[:-1]
        assert np.all(np.diff(core) > 0)

    def test_point_mass_at_zero(self):
        pair = measure_to_pair(DiscreteMeasure.point_mass(0.0), R1)
        assert np.all(pair.x[:-1] == 0.0)
        assert pair.x[-1] == 1.0

    def test_frozen_backward_example(self):
        pair = ParisiPair.build([0.3, 0.5, 1.0, 1.0], [0.2, 0.6, 0.6, 1.0], R1)
        mu = pair_to_measure(pair)
        np.testing.assert_allclose(mu.atoms, [0.2, 0.6])
        np.testing.assert_allclose(mu.weights, [0.3, 0.7])

    def test_all_zero_x_gives_point_mass(self):
        pair = ParisiPair.build([0.5, 1.0, 1.0], [0.0, 0.0, 1.0], R1)
        mu = pair_to_measure(pair)
        assert len(mu.atoms) == 1 and mu.atoms[0] == 0.0

    def test_strictly_increasing_x_keeps_all_atoms(self):
        pair = ParisiPair.build([0.3, 0.5, 1.0, 1.0], [0.1, 0.4, 0.8, 1.0], R1)
        mu = pair_to_measure(pair)
        np.testing.assert_allclose(mu.atoms, [0.1, 0.4, 0.8])
        np.testing.assert_allclose(mu.weights, [0.3, 0.2, 0.5])

    def test_round_trip_measure_to_pair(self, rng):
        for _ in range(40):
            params = random_model(rng)
            mu = random_measure(rng)
            pair = measure_to_pair(mu, params)
            back = pair_to_measure(pair)
            np.testing.assert_allclose(back.atoms, mu.atoms, atol=1e-12)
            np.testing.assert_allclose(back.cdf, mu.cdf, atol=1e-12)


class TestConditionalMoments:
    def test_frozen_example(self):
        assert conditional_moment(MU, R1, ell=1, power=2) == pytest.approx(0.36, abs=1e-14)

    def test_point_mass_at_zero(self):
        mu = DiscreteMeasure.point_mass(0.0)
        assert conditional_moment(mu, R1, 1, 2) == 0.0

    def test_power_zero_normalizes(self, rng):
        for _ in range(20):
            params = random_model(rng)
            mu = random_measure(rng)
            for ell in range(1, params.r + 1):
                assert conditional_moment(mu, params, ell, 0) == pytest.approx(1.0, abs=1e-12)

    def test_second_moment_nondecreasing_in_level(self, rng):
        for _ in range(30):
            params = random_model(rng, r=3)
            mu = random_measure(rng)
            vals = [conditional_moment(mu, params, ell, 2) for ell in range(1, 4)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


class TestGapDelta:
    PARAMS = ModelParams(r=2, zeta=(0.2, 0.5, 1.0), gamma=(0.5, 1.0),
                         field=FieldLaw.point_mass())

    def test_jump_at_height(self):
        mu = DiscreteMeasure.from_pairs([(0.2, 0.5), (0.8, 0.5)])
        assert gap_delta(mu, self.PARAMS, 1) == pytest.approx(0.6, abs=1e-14)

    def test_no_jump(self):
        mu = DiscreteMeasure.from_pairs([(0.2, 0.3), (0.6, 0.7)])
        assert gap_delta(mu, self.PARAMS, 1) == 0.0

    def test_point_mass(self):
        assert gap_delta(DiscreteMeasure.point_mass(0.0), self.PARAMS, 1) == 0.0

    def test_nonnegative(self, rng):
        for _ in range(30):
            mu = random_measure(rng)
            assert gap_delta(mu, self.PARAMS, 1) >= 0.0


class TestSyncCoupling:
    def test_degenerate_x_marginal(self):
        params = ModelParams(r=2, zeta=(0.3, 0.6, 1.0), gamma=(0.5, 1.0),
                             field=FieldLaw.point_mass())
        coup = sync_coupling(DiscreteMeasure.point_mass(0.0), params)
        # pairs (0, gamma_l) with the zeta increments as probabilities
        np.testing.assert_allclose([p for _, _, p in coup.pairs], [0.3, 0.3, 0.4])
        np.testing.assert_allclose([g for _, g, _ in coup.pairs], [0.0, 0.5, 1.0])

    def test_frozen_example(self):
        coup = sync_coupling(MU, R1)
        assert coup.pairs == ((0.2, 0.0, 0.3), (0.6, 0.0, 0.2), (0.6, 1.0, 0.5))

    def test_marginals_exact(self, rng):
        for _ in range(30):
            params = random_model(rng)
            mu = random_measure(rng)
            coup = sync_coupling(mu, params)
            got_x = dict(coup.marginal_x())
            for v, w in zip(mu.atoms, mu.weights):
                assert got_x[float(v)] == pytest.approx(w, abs=1e-12)
            got_g = dict(coup.marginal_gamma())
            zeta = np.concatenate(([0.0], params.zeta))
            for ell, g in enumerate(params.gamma_with_zero):
                assert got_g[float(g)] == pytest.approx(
                    zeta[ell + 1] - zeta[ell], abs=1e-12)

    def test_comonotone(self, rng):
        for _ in range(30):
            params = random_model(rng)
            mu = random_measure(rng)
            coup = sync_coupling(mu, params)
            xs = [xv for xv, _, _ in coup.pairs]
            gs = [gv for _, gv, _ in coup.pairs]
            assert all(b >= a for a, b in zip(xs, xs[1:]))
            assert all(b >= a for a, b in zip(gs, gs[1:]))
