import numpy as np
import pytest

from survforest.dataset import SurvivalDataset, inject_missing, simulate
from survforest.tree import (STATUS_COL, TIME_COL, GrowParams, grow_tree,
                             route_complete, tree_chf)


def bootstrap_inbag(n, rng):
    return np.bincount(rng.integers(0, n, size=n), minlength=n)


def grown(n=60, seed=3, rule="logrank", inbag=None, d0=3):
    ds = simulate(n=n, d_signal=2, d_noise=2, censor_rate=0.25, seed=seed)
    rng = np.random.default_rng(seed + 1)
    if inbag is None:
        inbag = bootstrap_inbag(n, rng)
    tree = grow_tree(ds, inbag, GrowParams(d0=d0, rule=rule), rng)
    return ds, tree


class TestGrowth:
    def test_root_only_when_deaths_scarce(self):
        ds, tree = grown(n=20, d0=50)
        assert tree.n_nodes == 1
        assert np.all(tree.terminal_of == 0)

    def test_terminals_keep_d0_unique_deaths(self):
        for seed in range(4):
            ds, tree = grown(seed=seed, d0=3)
            if tree.n_nodes == 1:
                continue
            for nid in np.flatnonzero(tree.var == -1):
                cases = tree.members[nid]
                deaths = ds.times[cases][ds.status[cases] == 1]
                assert np.unique(deaths).size >= 3

    def test_terminal_partition_matches_inbag(self):
        ds, tree = grown(seed=5)
        seen = np.zeros(ds.n, dtype=int)
        for nid in np.flatnonzero(tree.var == -1):
            cases = tree.members[nid]
            seen[cases] += 1
            np.testing.assert_array_equal(tree.member_weights[nid],
                                          tree.inbag[cases])
            np.testing.assert_array_equal(tree.terminal_of[cases], nid)
        np.testing.assert_array_equal(seen, (tree.inbag > 0).astype(int))

    def test_routing_agrees_with_growth(self):
        ds, tree = grown(seed=7)
        np.testing.assert_array_equal(route_complete(tree, ds.covariates),
                                      tree.terminal_of)

    def test_deterministic(self):
        ds = simulate(n=50, d_signal=2, d_noise=3, censor_rate=0.3, seed=11)
        inbag = bootstrap_inbag(50, np.random.default_rng(0))
        for rule in ("logrank", "conserve", "logrankscore", "logrankrandom"):
            t1 = grow_tree(ds, inbag, GrowParams(rule=rule),
                           np.random.default_rng(42))
            t2 = grow_tree(ds, inbag, GrowParams(rule=rule),
                           np.random.default_rng(42))
            np.testing.assert_array_equal(t1.var, t2.var)
            np.testing.assert_array_equal(t1.threshold, t2.threshold)
            np.testing.assert_array_equal(t1.terminal_of, t2.terminal_of)

    def test_weights_equal_replication(self):
        # growing on multiplicity weights must equal growing on the dataset
        # with rows physically repeated
        ds = simulate(n=40, d_signal=2, d_noise=2, censor_rate=0.25, seed=13)
        inbag = bootstrap_inbag(40, np.random.default_rng(1))
        rep = np.repeat(np.arange(40), inbag)
        expanded = SurvivalDataset(times=ds.times[rep], status=ds.status[rep],
                                   covariates=ds.covariates[rep],
                                   kinds=ds.kinds, names=ds.names)
        t1 = grow_tree(ds, inbag, GrowParams(), np.random.default_rng(9))
        t2 = grow_tree(expanded, np.ones(rep.size, dtype=int), GrowParams(),
                       np.random.default_rng(9))
        np.testing.assert_array_equal(t1.var, t2.var)
        np.testing.assert_allclose(t1.threshold, t2.threshold)

    def test_inbag_validation(self):
        ds = simulate(n=10, d_signal=1, d_noise=1, censor_rate=0.2, seed=0)
        with pytest.raises(ValueError):
            grow_tree(ds, np.ones(9, dtype=int), GrowParams(),
                      np.random.default_rng(0))
        with pytest.raises(ValueError):
            grow_tree(ds, -np.ones(10, dtype=int), GrowParams(),
                      np.random.default_rng(0))

    def test_no_deaths_rejected(self):
        ds = simulate(n=10, d_signal=1, d_noise=1, censor_rate=0.2, seed=0)
        censored = ds.replaced(status=np.zeros(10))
        with pytest.raises(ValueError, match="no deaths"):
            grow_tree(censored, np.ones(10, dtype=int), GrowParams(),
                      np.random.default_rng(0))

    def test_missing_data_rejected_without_mode(self):
        ds = simulate(n=30, d_signal=2, d_noise=2, censor_rate=0.2, seed=2)
        holey, _ = inject_missing(ds, 0.1, seed=4)
        with pytest.raises(ValueError, match="missing"):
            grow_tree(holey, np.ones(30, dtype=int), GrowParams(),
                      np.random.default_rng(0))


class TestConservation:
    def test_whole_tree_sum_without_bootstrap(self):
        # with every case in bag exactly once, summing each case's own-tree
        # CHF at its own time gives the total death count
        for seed in range(3):
            ds = simulate(n=70, d_signal=2, d_noise=2, censor_rate=0.3,
                          seed=seed)
            tree = grow_tree(ds, np.ones(10 * 7, dtype=int), GrowParams(),
                             np.random.default_rng(seed))
            total = sum(tree.terminal_chf(tree.terminal_of[i])(ds.times[i])
                        for i in range(ds.n))
            assert total == pytest.approx(ds.status.sum(), abs=1e-8)

    def test_per_terminal_weighted_sum(self):
        for seed, rule in ((0, "logrank"), (1, "conserve"),
                           (2, "logrankscore")):
            ds, tree = grown(seed=seed, rule=rule)
            for nid in np.flatnonzero(tree.var == -1):
                cases = tree.members[nid]
                w = tree.member_weights[nid].astype(float)
                chf = tree.terminal_chf(nid)
                got = np.sum(w * chf(ds.times[cases]))
                want = np.sum(w * ds.status[cases])
                assert got == pytest.approx(want, abs=1e-9)


class TestPrediction:
    def test_chf_matches_terminal(self):
        ds, tree = grown(seed=17)
        for i in (0, 5, 11):
            chf = tree_chf(tree, ds.covariates[i])
            want = tree.terminal_chf(tree.terminal_of[i])
            np.testing.assert_array_equal(chf.grid, want.grid)
            np.testing.assert_array_equal(chf.values, want.values)

    def test_incomplete_x_needs_missing_mode(self):
        ds, tree = grown(seed=19)
        x = np.array(ds.covariates[0])
        x[1] = np.nan
        with pytest.raises(ValueError, match="complete data"):
            tree_chf(tree, x)


class TestMissingMode:
    def make(self, seed=21, fraction=0.2, outcomes=False, n=60):
        ds = simulate(n=n, d_signal=2, d_noise=2, censor_rate=0.25, seed=seed)
        holey, report = inject_missing(ds, fraction, seed=seed + 1,
                                       include_outcomes=outcomes)
        rng = np.random.default_rng(seed + 2)
        inbag = bootstrap_inbag(n, rng)
        tree = grow_tree(holey, inbag,
                         GrowParams(missing_mode=True, rule="logrank"), rng)
        return ds, holey, report, tree

    def test_grows_and_routes_everyone(self):
        ds, holey, report, tree = self.make()
        assert np.all(tree.terminal_of >= 0)
        assert np.all(tree.var[tree.terminal_of] == -1)

    def test_draws_come_from_observed_values(self):
        ds, holey, report, tree = self.make()
        assert tree.draws_inbag.shape[0] > 0
        for case, col, value in tree.draws_inbag:
            column = holey.covariates[:, int(col)]
            assert np.isnan(holey.covariates[int(case), int(col)])
            assert value in column[~np.isnan(column)]

    def test_draws_cover_missing_inbag_cells(self):
        ds, holey, report, tree = self.make()
        drawn = {(int(c), int(k)) for c, k, _ in tree.draws_inbag}
        inbag_cases = set(np.flatnonzero(tree.inbag > 0))
        missing = {(c, k) for c in inbag_cases
                   for k in np.flatnonzero(np.isnan(holey.covariates[c]))}
        assert drawn == missing
        oob_drawn = {(int(c), int(k)) for c, k, _ in tree.draws_oob}
        assert all(int(c) not in inbag_cases for c, _, _ in tree.draws_oob)
        assert oob_drawn.isdisjoint(drawn)

    def test_outcome_cells_drawn(self):
        ds, holey, report, tree = self.make(outcomes=True, fraction=0.1)
        cols = {int(k) for _, k, _ in tree.draws_inbag} | \
               {int(k) for _, k, _ in tree.draws_oob}
        assert TIME_COL in cols and STATUS_COL in cols
        for case, col, value in tree.draws_inbag:
            if int(col) == STATUS_COL:
                assert value in (0.0, 1.0)

    def test_terminal_conservation_holds_on_filled_values(self):
        ds, holey, report, tree = self.make()
        for nid in np.flatnonzero(tree.var == -1):
            cases = tree.members[nid]
            w = tree.member_weights[nid].astype(float)
            times = np.array(holey.times[cases])
            status = np.array(holey.status[cases])
            for i, case in enumerate(cases):
                for c, k, v in tree.draws_inbag:
                    if int(c) == case and int(k) == TIME_COL:
                        times[i] = v
                    if int(c) == case and int(k) == STATUS_COL:
                        status[i] = v
            if np.isnan(times).any() or np.isnan(status).any():
                continue
            chf = tree.terminal_chf(nid)
            assert np.sum(w * chf(times)) == pytest.approx(
                np.sum(w * status), abs=1e-9)

    def test_dynamic_routing(self):
        ds, holey, report, tree = self.make()
        x = np.array(ds.covariates[0])
        x[0] = np.nan
        with pytest.raises(ValueError, match="rng"):
            tree_chf(tree, x)
        chf = tree_chf(tree, x, rng=np.random.default_rng(0))
        assert chf.values.size > 0
        complete = tree_chf(tree, ds.covariates[0])
        assert complete.values.size > 0
