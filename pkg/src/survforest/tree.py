"""Growth and traversal of a single survival tree.

A tree is grown from a bootstrap sample to full size under the constraint
that every terminal node keeps at least d0 distinct death times, with a fresh
random subset of candidate variables at every node.  Terminal nodes carry the
Nelson-Aalen CHF of their in-bag members.

In missing-data mode the tree additionally: draws values for every missing
in-bag cell at every node from the node's nonmissing in-bag empirical
distribution before the split search, routes out-of-bag cases passively with
draws of their own, resets daughters to missing (each node redraws from
scratch), records the terminal-node draws per cell for later summarization,
and retains per-node membership so those empirical distributions remain
available for dynamic routing of incomplete test cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SurvivalDataset
from .splitting import RULES, NodeSample, best_split
from .survstat import StepCHF, nelson_aalen

TIME_COL = -1
STATUS_COL = -2


@dataclass(frozen=True)
class GrowParams:
    """Knobs of tree growth.

    d0: minimum distinct death times a terminal must keep (nodesize).
    mtry: candidate variables per node; None means ceil(sqrt(d)).
    rule: one of the four splitting rules.
    missing_mode: grow with in-node imputation draws (incomplete data).
    """

    d0: int = 3
    mtry: int | None = None
    rule: str = "logrank"
    missing_mode: bool = False

    def __post_init__(self):
        if self.d0 < 1:
            raise ValueError("d0 must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")

    def resolved_mtry(self, d: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(d))
        return min(m, d)


@dataclass
class SurvivalTree:
    """Flat node-table representation of one grown tree.

    Node j is internal when var[j] >= 0 (split: x[var] <= threshold goes
    left) and terminal when var[j] == -1.  Terminal CHFs live in
    term_grid/term_values.  members[j] / member_weights[j] hold the in-bag
    cases of node j: for every node in missing mode (they parameterize the
    node's empirical distributions), terminals only otherwise.
    terminal_of maps every training case (in-bag or not) to its terminal.
    """

    inbag: np.ndarray
    var: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    term_grid: list
    term_values: list
    members: list
    member_weights: list
    terminal_of: np.ndarray
    missing_mode: bool
    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    draws_inbag: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    draws_oob: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    undetermined_vars: tuple = ()

    @property
    def n_nodes(self) -> int:
        return self.var.size

    def terminal_chf(self, node: int) -> StepCHF:
        return StepCHF(self.term_grid[node], self.term_values[node])

    def node_pool(self, node: int, col: int) -> np.ndarray:
        """Multiplicity-expanded nonmissing in-bag values of one column at a
        node; col is a covariate index or TIME_COL / STATUS_COL.  Falls back
        to the root when the node has no nonmissing value."""
        for nid in (node, 0):
            cases = self.members[nid]
            if col == TIME_COL:
                vals = self.times[cases]
            elif col == STATUS_COL:
                vals = self.status[cases]
            else:
                vals = self.covariates[cases, col]
            ok = ~np.isnan(vals)
            if ok.any():
                return np.repeat(vals[ok],
                                 self.member_weights[nid][ok].astype(int))
            if nid == 0:
                break
        return np.empty(0)


class _Builder:
    def __init__(self, ds: SurvivalDataset, inbag, params: GrowParams, rng):
        self.ds = ds
        self.inbag = inbag
        self.params = params
        self.rng = rng
        self.mtry = params.resolved_mtry(ds.d)
        self.var, self.thr, self.left, self.right = [], [], [], []
        self.term_grid, self.term_values = [], []
        self.members, self.member_weights = [], []
        self.terminal_of = np.full(ds.n, -1, dtype=np.int64)
        self.rec_inbag, self.rec_oob = [], []
        self.root_pools = {}
        self.undetermined = set()
        if params.missing_mode:
            self.miss_x = np.isnan(ds.covariates)
            self.miss_t = np.isnan(ds.times)
            self.miss_s = np.isnan(ds.status)

    def _root_pool(self, col):
        if col not in self.root_pools:
            cases = np.flatnonzero(self.inbag > 0)
            weights = self.inbag[cases].astype(int)
            vals = self._column(cases, col)
            ok = ~np.isnan(vals)
            self.root_pools[col] = np.repeat(vals[ok], weights[ok])
            if not ok.any():
                self.undetermined.add(col)
        return self.root_pools[col]

    def _column(self, cases, col):
        if col == TIME_COL:
            return self.ds.times[cases]
        if col == STATUS_COL:
            return self.ds.status[cases]
        return self.ds.covariates[cases, col]

    def _fill(self, cases, weights, oob):
        """Copy the node's in-bag and OOB rows and draw values for their
        missing cells from the node's in-bag empirical distributions, one
        shared pool per column.  Cells with an empty pool stay NaN.

        Draw order is fixed: covariate columns ascending, then time, then
        status; within a column in-bag draws precede OOB draws."""
        x = np.array(self.ds.covariates[cases])
        t = np.array(self.ds.times[cases])
        s = np.array(self.ds.status[cases])
        xo = np.array(self.ds.covariates[oob])
        to = np.array(self.ds.times[oob])
        so = np.array(self.ds.status[oob])
        gx, gxo = self.miss_x[cases], self.miss_x[oob]
        gaps = {TIME_COL: (self.miss_t[cases], self.miss_t[oob]),
                STATUS_COL: (self.miss_s[cases], self.miss_s[oob])}
        cols = [int(c) for c in np.flatnonzero(gx.any(axis=0)
                                               | gxo.any(axis=0))]
        cols += [c for c in (TIME_COL, STATUS_COL)
                 if gaps[c][0].any() or gaps[c][1].any()]
        for col in cols:
            pool = None
            for side, arrs in enumerate(((x, t, s), (xo, to, so))):
                if col >= 0:
                    target, gap = arrs[0][:, col], (gx, gxo)[side][:, col]
                else:
                    target = arrs[1] if col == TIME_COL else arrs[2]
                    gap = gaps[col][side]
                if not gap.any():
                    continue
                if pool is None:
                    vals = self._column(cases, col)
                    ok = ~np.isnan(vals)
                    pool = (np.repeat(vals[ok], weights[ok]) if ok.any()
                            else self._root_pool(col))
                if pool.size == 0:
                    continue
                target[gap] = pool[self.rng.integers(0, pool.size,
                                                     size=int(gap.sum()))]
        return (x, t, s), (xo, to, so)

    def _record_draws(self, out, cases, x, t, s):
        filled = self.miss_x[cases] & ~np.isnan(x)
        rows, cols = np.nonzero(filled)
        if rows.size:
            out.append((cases[rows], cols.astype(np.int64), x[rows, cols]))
        for col, arr, miss in ((TIME_COL, t, self.miss_t),
                               (STATUS_COL, s, self.miss_s)):
            hit = np.flatnonzero(miss[cases] & ~np.isnan(arr))
            if hit.size:
                out.append((cases[hit], np.full(hit.size, col, np.int64),
                            arr[hit]))

    def _alloc(self):
        for lst, val in ((self.var, -1), (self.thr, np.nan), (self.left, -1),
                         (self.right, -1)):
            lst.append(val)
        self.term_grid.append(None)
        self.term_values.append(None)
        self.members.append(None)
        self.member_weights.append(None)
        return len(self.var) - 1

    def grow(self, cases, weights, oob) -> int:
        nid = self._alloc()
        miss = self.params.missing_mode
        if miss:
            (x_in, t_in, s_in), (x_oob, t_oob, s_oob) = \
                self._fill(cases, weights, oob)
            self.members[nid] = cases
            self.member_weights[nid] = weights
        else:
            x_in = self.ds.covariates[cases]
            t_in = self.ds.times[cases]
            s_in = self.ds.status[cases]

        split = None
        unique_deaths = np.unique(t_in[s_in == 1]).size
        if unique_deaths >= 2 * self.params.d0:
            cands = np.sort(self.rng.choice(self.ds.d, size=self.mtry,
                                            replace=False))
            if miss:
                cands = [k for k in cands if not np.isnan(x_in[:, k]).any()]
            if len(cands):
                node = NodeSample(indices=cases, weights=weights, times=t_in,
                                  status=s_in, x=x_in)
                split = best_split(node, cands, self.params.rule,
                                   self.params.d0, self.rng)

        if split is None:
            self.term_grid[nid], self.term_values[nid] = (
                _na_arrays(t_in, s_in, weights))
            self.members[nid] = cases
            self.member_weights[nid] = weights
            self.terminal_of[cases] = nid
            if miss:
                self.terminal_of[oob] = nid
                self._record_draws(self.rec_inbag, cases, x_in, t_in, s_in)
                self._record_draws(self.rec_oob, oob, x_oob, t_oob, s_oob)
            return nid

        self.var[nid] = split.var
        self.thr[nid] = split.threshold
        go = x_in[:, split.var] <= split.threshold
        if miss:
            go_oob = x_oob[:, split.var] <= split.threshold
        else:
            go_oob = np.empty(0, dtype=bool)
        empty = np.empty(0, dtype=np.int64)
        self.left[nid] = self.grow(cases[go], weights[go],
                                   oob[go_oob] if miss else empty)
        self.right[nid] = self.grow(cases[~go], weights[~go],
                                    oob[~go_oob] if miss else empty)
        return nid

    def build(self) -> SurvivalTree:
        cases = np.flatnonzero(self.inbag > 0)
        weights = self.inbag[cases]
        oob = np.flatnonzero(self.inbag == 0)
        s = self.ds.status[cases]
        if not np.any(s[~np.isnan(s)] == 1):
            raise ValueError("in-bag sample contains no deaths")
        if np.all(np.isnan(self.ds.times[cases])):
            raise ValueError("in-bag sample has no observed times")
        self.grow(cases, weights.astype(np.int64), oob)
        tree = SurvivalTree(
            inbag=np.asarray(self.inbag, dtype=np.int64),
            var=np.asarray(self.var, dtype=np.int64),
            threshold=np.asarray(self.thr, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            term_grid=self.term_grid, term_values=self.term_values,
            members=self.members, member_weights=self.member_weights,
            terminal_of=self.terminal_of,
            missing_mode=self.params.missing_mode,
            times=self.ds.times, status=self.ds.status,
            covariates=self.ds.covariates,
            draws_inbag=_draw_array(self.rec_inbag),
            draws_oob=_draw_array(self.rec_oob),
            undetermined_vars=tuple(sorted(self.undetermined)))
        if not self.params.missing_mode:
            oob_terms = route_complete(tree, self.ds.covariates[oob])
            tree.terminal_of[oob] = oob_terms
        return tree


def _na_arrays(times, status, weights):
    chf = nelson_aalen(times, status, weights)
    return chf.grid, chf.values


def _draw_array(records) -> np.ndarray:
    if not records:
        return np.empty((0, 3))
    return np.column_stack([np.concatenate([r[j] for r in records])
                            for j in range(3)]).astype(float)


def grow_tree(dataset: SurvivalDataset, inbag, params: GrowParams,
              rng) -> SurvivalTree:
    """Grow one tree from a multiplicity vector over the dataset's cases.

    Deterministic in the rng stream: candidate draws, imputation draws, and
    any rule randomness are consumed in a fixed order per node (preorder,
    left daughter first).
    """
    inbag = np.asarray(inbag)
    if inbag.shape != (dataset.n,) or np.any(inbag < 0):
        raise ValueError("inbag must be a nonnegative vector of length n")
    if not params.missing_mode and dataset.has_missing:
        raise ValueError("dataset has missing cells; grow with missing_mode "
                         "or impute first")
    return _Builder(dataset, inbag.astype(np.int64), params, rng).build()


def route_complete(tree: SurvivalTree, x_rows: np.ndarray) -> np.ndarray:
    """Vectorized root-to-terminal routing of complete covariate rows."""
    x_rows = np.atleast_2d(x_rows)
    cur = np.zeros(x_rows.shape[0], dtype=np.int64)
    while True:
        active = np.flatnonzero(tree.var[cur] >= 0)
        if active.size == 0:
            return cur
        node = cur[active]
        go = x_rows[active, tree.var[node]] <= tree.threshold[node]
        cur[active] = np.where(go, tree.left[node], tree.right[node])


def tree_chf(tree: SurvivalTree, x, rng=None) -> StepCHF:
    """CHF assigned to covariate vector x: the terminal's Nelson-Aalen.

    Missing coordinates are only routable in missing-mode trees, by drawing
    the routing value from the split node's stored nonmissing in-bag
    distribution; that requires an rng.
    """
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        if not tree.missing_mode:
            raise ValueError("incomplete x: tree was grown on complete data "
                             "and stores no node distributions")
        if rng is None:
            raise ValueError("incomplete x: rng required for dynamic routing")
        node = 0
        while tree.var[node] >= 0:
            k = tree.var[node]
            v = x[k]
            if np.isnan(v):
                pool = tree.node_pool(node, int(k))
                if pool.size:
                    v = pool[rng.integers(0, pool.size)]
                else:
                    v = np.inf  # undetermined variable: route right
            node = tree.left[node] if v <= tree.threshold[node] \
                else tree.right[node]
        return tree.terminal_chf(int(node))
    return tree.terminal_chf(int(route_complete(tree, x[None, :])[0]))
