"""Forest fitting and ensemble queries.

A forest is B survival trees grown on independent bootstrap samples.  All
ensemble CHFs live on one shared grid, the unique training death times; the
out-of-bag (OOB) ensemble for a case averages only trees whose bootstrap
excluded it, and drives the prediction error estimate.  Mortality, the sum
of the ensemble CHF over every training time, is the ranking scalar used
throughout: larger means worse predicted survival.

Determinism contract: fitting, VIMP, and proximity are pure functions of
(dataset, params, ntree, seed), independent of the worker count.  Every
tree draws from its own child of one master SeedSequence, and VIMP's random
daughter assignments come from a counter-based hash of (seed, tree, case,
depth) rather than a shared stream.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import SurvivalDataset
from .survstat import StepCHF, prediction_error
from .tree import GrowParams, SurvivalTree, grow_tree, route_complete, tree_chf

BOOTSTRAP_MODES = ("by-case", "none")


@dataclass
class Forest:
    """A fitted ensemble and the training data it was grown on."""

    trees: list
    inbag: np.ndarray
    event_grid: np.ndarray
    params: GrowParams
    seed: int
    bootstrap: str
    dataset: SurvivalDataset
    _sums: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ntree(self) -> int:
        return len(self.trees)

    @property
    def n(self) -> int:
        return self.inbag.shape[0]

    @property
    def oob_counts(self) -> np.ndarray:
        """Number of trees in which each training case is out of bag."""
        return np.sum(self.inbag == 0, axis=1)


@dataclass
class FitReport:
    """Fit-time summaries; OOB fields are None when bootstrap='none'."""

    ntree: int
    wall_seconds: float
    oob_error: float | None = None
    oob_mortality: np.ndarray | None = None
    n_never_oob: int = 0
    vimp: np.ndarray | None = None

    def __post_init__(self):
        if self.oob_error is not None:
            assert 0.0 <= self.oob_error <= 1.0


def _draw_inbag(rng, n, bootstrap, status):
    """One tree's multiplicity vector; redraws a bootstrap that happens to
    contain no death (vanishing probability at realistic n)."""
    if bootstrap == "none":
        return np.ones(n, dtype=np.int64)
    while True:
        inbag = np.bincount(rng.integers(0, n, size=n), minlength=n)
        picked = status[inbag > 0]
        if np.any(picked[~np.isnan(picked)] == 1):
            return inbag


def _grow_forest(dataset, params, ntree, seed, bootstrap, workers):
    n = dataset.n
    children = np.random.SeedSequence(seed).spawn(ntree)

    def one(child):
        rng = np.random.default_rng(child)
        inbag = _draw_inbag(rng, n, bootstrap, dataset.status)
        return grow_tree(dataset, inbag, params, rng)

    if workers <= 1:
        trees = [one(c) for c in children]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(one, children))
    inbag = np.column_stack([t.inbag for t in trees])
    return trees, inbag


def fit(dataset: SurvivalDataset, params: GrowParams | None = None, *,
        ntree: int = 1000, seed: int = 0, bootstrap: str = "by-case",
        compute_vimp: bool = False, workers: int = 1):
    """Grow a forest on complete data.  Returns (Forest, FitReport).

    bootstrap='by-case' draws n cases with replacement per tree; 'none'
    grows every tree on the full sample, which leaves no OOB cases, so the
    report's OOB fields stay None rather than being fabricated.
    """
    params = params or GrowParams()
    if params.missing_mode:
        raise ValueError("fit requires complete data; missing-data forests "
                         "are grown by the impute module")
    if dataset.has_missing or dataset.has_missing_outcomes:
        raise ValueError("dataset has missing cells; use the impute module")
    if not np.any(dataset.status == 1):
        raise ValueError("dataset contains no deaths")
    if ntree < 1:
        raise ValueError("ntree must be >= 1")
    if bootstrap not in BOOTSTRAP_MODES:
        raise ValueError(f"bootstrap must be one of {BOOTSTRAP_MODES}")
    if compute_vimp and bootstrap == "none":
        raise ValueError("VIMP needs OOB cases; fit with bootstrap='by-case'")

    t0 = time.perf_counter()
    trees, inbag = _grow_forest(dataset, params, ntree, seed, bootstrap,
                                workers)
    forest = Forest(trees=trees, inbag=inbag,
                    event_grid=np.unique(dataset.times[dataset.status == 1]),
                    params=params, seed=seed, bootstrap=bootstrap,
                    dataset=dataset)
    report = FitReport(ntree=ntree, wall_seconds=time.perf_counter() - t0)
    if bootstrap == "by-case":
        pe, excluded, _ = _oob_prediction_error(forest, dataset.times,
                                                dataset.status)
        report.oob_error = pe
        report.n_never_oob = excluded
        report.oob_mortality = _oob_case_scalars(
            forest, _terminal_sums(forest, dataset.times))
    if compute_vimp:
        report.vimp = vimp(forest)
    report.wall_seconds = time.perf_counter() - t0
    return forest, report


def _terminal_sums(forest, eval_times) -> list:
    """Per tree, an array over nodes holding the terminal CHF summed over
    eval_times (0 at internal nodes).  Cached on the forest."""
    key = np.asarray(eval_times, dtype=float).tobytes()
    if key not in forest._sums:
        eval_times = np.asarray(eval_times, dtype=float)
        out = []
        for tree in forest.trees:
            sums = np.zeros(tree.n_nodes)
            for nid in np.flatnonzero(tree.var == -1):
                sums[nid] = float(np.sum(tree.terminal_chf(nid)(eval_times)))
            out.append(sums)
        forest._sums[key] = out
    return forest._sums[key]


def _oob_case_scalars(forest, sums) -> np.ndarray:
    """Average the per-tree terminal scalars over each case's OOB trees.

    NaN where a case was in bag every time.  Summation order is fixed
    (tree index ascending) so results do not depend on scheduling.
    """
    total = np.zeros(forest.n)
    counts = np.zeros(forest.n)
    for b, tree in enumerate(forest.trees):
        oob = forest.inbag[:, b] == 0
        total[oob] += sums[b][tree.terminal_of[oob]]
        counts[oob] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, total / np.maximum(counts, 1), np.nan)


def _oob_prediction_error(forest, times, status):
    """(PE, never-OOB count, per-case ranking scalar).

    Ranks cases by the OOB ensemble CHF summed over the event grid; cases
    never OOB are excluded from the concordance.  times/status may be
    imputed replacements for the training outcomes.
    """
    if forest.bootstrap == "none":
        raise ValueError("OOB error undefined: bootstrap='none' leaves no "
                         "out-of-bag cases")
    rank = _oob_case_scalars(forest, _terminal_sums(forest,
                                                    forest.event_grid))
    ok = ~np.isnan(rank)
    excluded = int(forest.n - ok.sum())
    pe = prediction_error(rank[ok], np.asarray(times)[ok],
                          np.asarray(status)[ok])
    return pe, excluded, rank


def oob_error(forest: Forest) -> float:
    """OOB prediction error, 1 - C: the misranking rate of the OOB
    ensemble mortality against observed survival."""
    pe, _, _ = _oob_prediction_error(forest, forest.dataset.times,
                                     forest.dataset.status)
    return pe


def oob_chf(forest: Forest, i: int) -> StepCHF:
    """OOB ensemble CHF of training case i on the event grid: the mean
    terminal CHF over trees whose bootstrap excluded i."""
    i = int(i)
    if not 0 <= i < forest.n:
        raise ValueError(f"case {i} out of range")
    oob_trees = np.flatnonzero(forest.inbag[i] == 0)
    if oob_trees.size == 0:
        raise ValueError(f"case {i} is never OOB in this forest")
    values = np.zeros(forest.event_grid.size)
    for b in oob_trees:
        tree = forest.trees[b]
        values += tree.terminal_chf(tree.terminal_of[i])(forest.event_grid)
    return StepCHF(forest.event_grid, values / oob_trees.size)


def ensemble_chf(forest: Forest, x, rng=None) -> StepCHF:
    """Bootstrap ensemble CHF at covariate vector x: mean over all trees.

    Incomplete x is only routable through a missing-data forest and then
    needs an rng for the dynamic draws.
    """
    x = np.asarray(x, dtype=float)
    values = np.zeros(forest.event_grid.size)
    for tree in forest.trees:
        values += tree_chf(tree, x, rng=rng)(forest.event_grid)
    return StepCHF(forest.event_grid, values / forest.ntree)


def mortality(forest: Forest, x=None, *, case: int | None = None,
              mode: str = "bootstrap") -> float:
    """Ensemble mortality: the ensemble CHF summed over every training
    time, censored or not.  Expected deaths under the null that everyone
    behaves like this covariate profile; larger is worse.

    mode='bootstrap' accepts a covariate vector or a training case index;
    mode='oob' needs a training case index.
    """
    if mode not in ("bootstrap", "oob"):
        raise ValueError("mode must be 'bootstrap' or 'oob'")
    times = forest.dataset.times
    if mode == "oob":
        if case is None:
            raise ValueError("oob mortality needs a training case index")
        chf = oob_chf(forest, case)
        return float(np.sum(chf(times)))
    if x is None:
        if case is None:
            raise ValueError("give a covariate vector or a case index")
        x = forest.dataset.covariates[case]
    return float(np.sum(ensemble_chf(forest, x)(times)))


_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _M1
        z = (z ^ (z >> np.uint64(30))) * _M2
        z = (z ^ (z >> np.uint64(27))) * _M3
        return z ^ (z >> np.uint64(31))


def _fair_coins(seed: int, tree_index: int, cases: np.ndarray,
                depth: int) -> np.ndarray:
    """One reproducible fair coin per (seed, tree, case, depth), computed
    by a counter-based hash so no draw order exists to get wrong."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        z = _mix64(z ^ (np.uint64(tree_index) * _M2))
        z = _mix64(z ^ (np.uint64(depth) * _M3))
        h = _mix64(z ^ cases.astype(np.uint64))
    return (h & np.uint64(1)).astype(bool)


def _route_noised(tree, x_rows, target, seed, tree_index, case_ids):
    """Route rows to terminals, flipping a fair coin instead of comparing
    whenever the split variable is the target."""
    cur = np.zeros(x_rows.shape[0], dtype=np.int64)
    depth = 0
    while True:
        active = np.flatnonzero(tree.var[cur] >= 0)
        if active.size == 0:
            return cur
        node = cur[active]
        go = x_rows[active, tree.var[node]] <= tree.threshold[node]
        noised = tree.var[node] == target
        if noised.any():
            go[noised] = _fair_coins(seed, tree_index,
                                     case_ids[active[noised]], depth)
        cur[active] = np.where(go, tree.left[node], tree.right[node])
        depth += 1


def vimp(forest: Forest) -> np.ndarray:
    """Variable importance: the rise in OOB prediction error when OOB
    cases are re-dropped with random daughter assignment at every split on
    the variable.  Exactly 0 for variables the forest never split on.
    """
    if forest.bootstrap != "by-case":
        raise ValueError("VIMP needs OOB cases; fit with bootstrap='by-case'")
    if forest.params.missing_mode:
        raise ValueError("VIMP requires a complete-data forest")
    ds = forest.dataset
    base_pe, _, _ = _oob_prediction_error(forest, ds.times, ds.status)
    sums = _terminal_sums(forest, forest.event_grid)

    d = ds.d
    total = np.zeros((d, forest.n))
    counts = np.zeros(forest.n)
    ever_used = np.zeros(d, dtype=bool)
    for b, tree in enumerate(forest.trees):
        oob = np.flatnonzero(forest.inbag[:, b] == 0)
        if oob.size == 0:
            continue
        counts[oob] += 1
        original = sums[b][tree.terminal_of[oob]]
        total[:, oob] += original
        for k in np.unique(tree.var[tree.var >= 0]):
            ever_used[k] = True
            terms = _route_noised(tree, ds.covariates[oob], k, forest.seed,
                                  b, oob)
            total[k, oob] += sums[b][terms] - original

    ok = counts > 0
    out = np.zeros(d)
    for k in range(d):
        if not ever_used[k]:
            continue
        rank = total[k, ok] / counts[ok]
        out[k] = prediction_error(rank, ds.times[ok], ds.status[ok]) - base_pe
    return out


def proximity_matrix(forest: Forest,
                     dataset: SurvivalDataset | None = None) -> np.ndarray:
    """Fraction of trees in which two cases share a terminal node.

    Symmetric with unit diagonal.  The optional dataset argument only
    cross-checks that the forest was fitted on data of the same shape.
    """
    if dataset is not None and dataset.n != forest.n:
        raise ValueError("dataset size does not match the fitted forest")
    n = forest.n
    prox = np.zeros((n, n))
    for tree in forest.trees:
        terms = tree.terminal_of
        order = np.argsort(terms, kind="stable")
        bounds = np.flatnonzero(np.diff(terms[order])) + 1
        for group in np.split(order, bounds):
            prox[np.ix_(group, group)] += 1.0
    return prox / forest.ntree
