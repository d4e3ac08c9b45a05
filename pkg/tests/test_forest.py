import numpy as np
import pytest

from survforest.dataset import SurvivalDataset, inject_missing, simulate
from survforest.forest import (ensemble_chf, fit, mortality, oob_chf,
                               oob_error, proximity_matrix, vimp,
                               _fair_coins)
from survforest.survstat import nelson_aalen
from survforest.tree import GrowParams, tree_chf


def small_fit(n=100, ntree=25, seed=5, **kw):
    ds = simulate(n=n, d_signal=2, d_noise=2, censor_rate=0.25, seed=seed)
    forest, report = fit(ds, GrowParams(), ntree=ntree, seed=seed, **kw)
    return ds, forest, report


class TestFit:
    def test_shapes_and_invariants(self):
        ds, forest, report = small_fit()
        assert forest.ntree == 25 and report.ntree == 25
        assert forest.inbag.shape == (100, 25)
        np.testing.assert_array_equal(forest.inbag.sum(axis=0),
                                      np.full(25, 100))
        assert np.all(np.diff(forest.event_grid) > 0)
        assert 0.0 <= report.oob_error <= 1.0
        assert report.oob_mortality.shape == (100,)
        assert report.wall_seconds > 0

    def test_oob_fraction_near_37_percent(self):
        ds, forest, _ = small_fit(n=312, ntree=40)
        fractions = (forest.inbag == 0).mean(axis=0)
        assert 0.35 <= fractions.mean() <= 0.39

    def test_bootstrap_none_reports_no_oob(self):
        ds, forest, report = small_fit(bootstrap="none")
        np.testing.assert_array_equal(forest.inbag, 1)
        assert report.oob_error is None
        assert report.oob_mortality is None
        with pytest.raises(ValueError, match="bootstrap"):
            oob_error(forest)

    def test_rejects_missing_data(self):
        ds = simulate(n=40, d_signal=1, d_noise=1, censor_rate=0.2, seed=1)
        holey, _ = inject_missing(ds, 0.1, seed=2)
        with pytest.raises(ValueError, match="impute"):
            fit(holey, ntree=2, seed=0)

    def test_rejects_bad_options(self):
        ds = simulate(n=40, d_signal=1, d_noise=1, censor_rate=0.2, seed=1)
        with pytest.raises(ValueError):
            fit(ds, ntree=0, seed=0)
        with pytest.raises(ValueError):
            fit(ds, ntree=2, seed=0, bootstrap="jackknife")
        with pytest.raises(ValueError):
            fit(ds, ntree=2, seed=0, bootstrap="none", compute_vimp=True)
        with pytest.raises(ValueError):
            fit(ds, GrowParams(missing_mode=True), ntree=2, seed=0)

    def test_deterministic_across_workers(self):
        ds = simulate(n=80, d_signal=2, d_noise=2, censor_rate=0.25, seed=9)
        f1, r1 = fit(ds, ntree=16, seed=33, workers=1, compute_vimp=True)
        f2, r2 = fit(ds, ntree=16, seed=33, workers=4, compute_vimp=True)
        for t1, t2 in zip(f1.trees, f2.trees):
            np.testing.assert_array_equal(t1.var, t2.var)
            np.testing.assert_array_equal(t1.threshold, t2.threshold)
            np.testing.assert_array_equal(t1.inbag, t2.inbag)
        assert r1.oob_error == r2.oob_error
        np.testing.assert_array_equal(r1.vimp, r2.vimp)
        np.testing.assert_array_equal(r1.oob_mortality, r2.oob_mortality)


class TestEnsembles:
    def test_oob_chf_matches_independent_traversal(self):
        ds, forest, _ = small_fit(ntree=10)
        for i in (0, 7, 42):
            oob_trees = np.flatnonzero(forest.inbag[i] == 0)
            if oob_trees.size == 0:
                continue
            want = np.mean([tree_chf(forest.trees[b],
                                     ds.covariates[i])(forest.event_grid)
                            for b in oob_trees], axis=0)
            got = oob_chf(forest, i)
            np.testing.assert_allclose(got.values, want, atol=1e-12)
            np.testing.assert_array_equal(got.grid, forest.event_grid)

    def test_never_oob_error(self):
        ds, forest, _ = small_fit(ntree=10)
        forest.inbag[3, :] = 1
        with pytest.raises(ValueError, match="never OOB"):
            oob_chf(forest, 3)

    def test_ensemble_chf_nondecreasing(self):
        ds, forest, _ = small_fit(ntree=15)
        rng = np.random.default_rng(2)
        for _ in range(25):
            chf = ensemble_chf(forest, rng.uniform(0, 1, size=ds.d))
            assert np.all(np.diff(chf.values) >= 0)
            assert np.all(chf.values >= 0)

    def test_ensemble_chf_is_tree_average(self):
        ds, forest, _ = small_fit(ntree=4, bootstrap="none")
        x = ds.covariates[11]
        want = np.mean([tree_chf(t, x)(forest.event_grid)
                        for t in forest.trees], axis=0)
        np.testing.assert_allclose(ensemble_chf(forest, x).values, want,
                                   atol=1e-12)

    def test_root_only_forest_gives_pooled_estimate(self):
        ds = simulate(n=50, d_signal=1, d_noise=1, censor_rate=0.2, seed=3)
        forest, _ = fit(ds, GrowParams(d0=10 ** 6), ntree=3, seed=0,
                        bootstrap="none")
        pooled = nelson_aalen(ds.times, ds.status)
        for i in (0, 25):
            chf = ensemble_chf(forest, ds.covariates[i])
            np.testing.assert_allclose(chf.values, pooled(forest.event_grid),
                                       atol=1e-12)
            assert mortality(forest, ds.covariates[i]) == pytest.approx(
                ds.status.sum(), abs=1e-8)


class TestMortality:
    def test_exchange_of_sums(self):
        ds, forest, _ = small_fit(ntree=5)
        for i in (1, 13):
            per_tree = [np.sum(tree_chf(t, ds.covariates[i])(ds.times))
                        for t in forest.trees]
            assert mortality(forest, ds.covariates[i]) == pytest.approx(
                np.mean(per_tree), abs=1e-9)
            assert mortality(forest, case=i) == pytest.approx(
                np.mean(per_tree), abs=1e-9)

    def test_oob_mode(self):
        ds, forest, report = small_fit(ntree=30)
        i = int(np.flatnonzero(forest.oob_counts > 0)[0])
        want = float(np.sum(oob_chf(forest, i)(ds.times)))
        assert mortality(forest, case=i, mode="oob") == pytest.approx(want)
        assert report.oob_mortality[i] == pytest.approx(want)

    def test_argument_validation(self):
        ds, forest, _ = small_fit(ntree=3)
        with pytest.raises(ValueError, match="mode"):
            mortality(forest, ds.covariates[0], mode="test")
        with pytest.raises(ValueError, match="case"):
            mortality(forest, mode="oob")
        with pytest.raises(ValueError):
            mortality(forest)


class TestOOBError:
    def test_signal_beats_chance(self):
        ds = simulate(n=300, d_signal=2, d_noise=2, censor_rate=0.2, seed=0)
        forest, report = fit(ds, ntree=300, seed=50)
        assert report.oob_error < 0.45
        assert oob_error(forest) == report.oob_error


class TestVimp:
    def test_unused_variable_exactly_zero(self):
        ds = simulate(n=80, d_signal=2, d_noise=1, censor_rate=0.2, seed=6)
        flat = np.array(ds.covariates)
        flat[:, 2] = 0.5
        ds = ds.replaced(covariates=flat)
        forest, _ = fit(ds, ntree=20, seed=1)
        assert all(2 not in t.var for t in forest.trees)
        v = vimp(forest)
        assert v[2] == 0.0

    def test_signal_outranks_noise(self):
        ds = simulate(n=150, d_signal=2, d_noise=4, censor_rate=0.2, seed=8)
        forest, _ = fit(ds, ntree=80, seed=2)
        v = vimp(forest)
        assert max(v[0], v[1]) > max(v[2:])

    def test_deterministic(self):
        ds, forest, _ = small_fit(ntree=12)
        np.testing.assert_array_equal(vimp(forest), vimp(forest))

    def test_fair_coins_are_balanced_and_keyed(self):
        cases = np.arange(20000)
        coins = _fair_coins(123, 7, cases, 3)
        assert 0.48 <= coins.mean() <= 0.52
        np.testing.assert_array_equal(coins, _fair_coins(123, 7, cases, 3))
        assert not np.array_equal(coins, _fair_coins(123, 7, cases, 4))
        assert not np.array_equal(coins, _fair_coins(123, 8, cases, 3))
        assert not np.array_equal(coins, _fair_coins(124, 7, cases, 3))


class TestProximity:
    def test_symmetric_unit_diagonal(self):
        ds, forest, _ = small_fit(n=60, ntree=15)
        prox = proximity_matrix(forest)
        np.testing.assert_allclose(prox, prox.T)
        np.testing.assert_allclose(np.diag(prox), 1.0)
        assert prox.min() >= 0 and prox.max() <= 1

    def test_root_only_forest_all_ones(self):
        ds = simulate(n=30, d_signal=1, d_noise=1, censor_rate=0.2, seed=2)
        forest, _ = fit(ds, GrowParams(d0=10 ** 6), ntree=4, seed=0)
        np.testing.assert_array_equal(proximity_matrix(forest), 1.0)

    def test_clones_have_unit_proximity(self):
        ds = simulate(n=40, d_signal=2, d_noise=1, censor_rate=0.2, seed=14)
        dup = SurvivalDataset(
            times=np.append(ds.times, ds.times[5]),
            status=np.append(ds.status, ds.status[5]),
            covariates=np.vstack([ds.covariates, ds.covariates[5]]),
            kinds=ds.kinds, names=ds.names)
        forest, _ = fit(dup, ntree=25, seed=3)
        assert proximity_matrix(forest)[5, 40] == 1.0

    def test_dataset_size_check(self):
        ds, forest, _ = small_fit(ntree=3)
        other = simulate(n=10, d_signal=1, d_noise=1, censor_rate=0.2, seed=0)
        with pytest.raises(ValueError, match="size"):
            proximity_matrix(forest, other)
