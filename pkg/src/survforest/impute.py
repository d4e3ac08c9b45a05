"""Missing-data imputation through forest growth.

Three routes to a completed dataset:

- fit_with_imputation grows the forest in missing-data mode; every tree
  draws node-level replacements while growing and records its terminal
  draws per cell.  The completed value of a cell summarizes the draws from
  trees where the case was out of bag (falling back to in-bag draws, then
  to a column-level draw), which keeps first-cycle imputations honest.
- iterate_impute refines: later iterations refit on the completed data and
  draw one value per tree from the originally nonmissing in-bag members of
  the case's terminal, then apply the full (in-bag plus OOB) summary.
- proximity_impute is the classical alternative: rough median/mode fill,
  fit, then replace missing cells by proximity-weighted averages (or the
  integer value with the largest average proximity), iterating.

Summaries are means for continuous columns and most-frequent values with a
seeded random tie-break for integer columns; missing survival times and
statuses are treated as continuous and integer respectively.  Nonmissing
original values are never altered.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np

from .dataset import INTEGER, SurvivalDataset
from .forest import (Forest, fit, proximity_matrix, _grow_forest,
                     _oob_prediction_error, _terminal_sums)
from .tree import STATUS_COL, TIME_COL, GrowParams, route_complete

_SUMMARY_SALT = 101
_TEST_SALT = 202


@dataclass(frozen=True)
class IterationReport:
    """One imputation cycle: its OOB error (on the outcomes the cycle's
    forest was trained against) and how many cells needed the column-level
    fallback because no tree produced a draw."""

    iteration: int
    oob_error: float | None
    n_undetermined: int


@dataclass
class ImputationState:
    """Bookkeeping of one missing-data fit: the original missing masks,
    the per-cell draw collections keyed (case, column index) with TIME_COL
    and STATUS_COL for outcomes, and the summary-completed dataset."""

    missing_x: np.ndarray
    missing_times: np.ndarray
    missing_status: np.ndarray
    draws_inbag: dict
    draws_oob: dict
    completed: SurvivalDataset
    iterations: int
    undetermined: tuple


def _derive_seed(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence((seed, salt)).generate_state(
        1, np.uint64)[0])


def _column_values(ds: SurvivalDataset, col: int) -> np.ndarray:
    if col == TIME_COL:
        return ds.times
    if col == STATUS_COL:
        return ds.status
    return ds.covariates[:, col]


def _column_is_integer(ds: SurvivalDataset, col: int) -> bool:
    if col == TIME_COL:
        return False
    if col == STATUS_COL:
        return True
    return ds.kinds[col] == INTEGER


def _missing_cells(ds: SurvivalDataset) -> list:
    """All missing cells in deterministic order: covariates by (case,
    column), then missing times, then missing statuses."""
    rows, cols = np.nonzero(np.isnan(ds.covariates))
    cells = list(zip(rows.tolist(), cols.tolist()))
    cells += [(int(c), TIME_COL) for c in np.flatnonzero(np.isnan(ds.times))]
    cells += [(int(c), STATUS_COL)
              for c in np.flatnonzero(np.isnan(ds.status))]
    return cells


def _validate_columns(ds: SurvivalDataset):
    for k in range(ds.d):
        if np.isnan(ds.covariates[:, k]).all():
            raise ValueError(f"column '{ds.names[k]}' is entirely missing")
    if np.isnan(ds.times).all():
        raise ValueError("all survival times are missing")
    if np.isnan(ds.status).all():
        raise ValueError("all status values are missing")


def _gather_draws(trees, attr: str) -> dict:
    """Collect (case, column, value) draw records across trees into a dict
    keyed (case, column) -> array of values."""
    blocks = [getattr(t, attr) for t in trees if getattr(t, attr).size]
    out = {}
    if not blocks:
        return out
    rows = np.vstack(blocks)
    cases = rows[:, 0].astype(np.int64)
    cols = rows[:, 1].astype(np.int64)
    order = np.lexsort((cols, cases))
    cases, cols, values = cases[order], cols[order], rows[order, 2]
    change = np.flatnonzero(np.diff(cases) | np.diff(cols)) + 1
    for chunk, c, k in zip(np.split(values, change), cases[np.r_[0, change]],
                           cols[np.r_[0, change]]):
        out[(int(c), int(k))] = chunk
    return out


def _summarize(values, integer: bool, rng) -> float:
    values = np.asarray(values, dtype=float)
    if not integer:
        return float(values.mean())
    vals, counts = np.unique(values, return_counts=True)
    winners = vals[counts == counts.max()]
    if winners.size == 1:
        return float(winners[0])
    return float(winners[rng.integers(winners.size)])


def _complete(ds: SurvivalDataset, chooser, rng, pool_ds=None):
    """Fill every missing cell with the summary of chooser(cell), falling
    back to a draw from the column's nonmissing values (taken from pool_ds
    when given, e.g. training data while completing a test set).  Returns
    the completed dataset and the fallback cells."""
    x = np.array(ds.covariates)
    times = np.array(ds.times)
    status = np.array(ds.status)
    targets = {TIME_COL: times, STATUS_COL: status}
    undetermined = []
    for case, col in _missing_cells(ds):
        draws = chooser(case, col)
        if draws is None or len(draws) == 0:
            undetermined.append((case, col))
            pool = _column_values(pool_ds if pool_ds is not None else ds,
                                  col)
            pool = pool[~np.isnan(pool)]
            value = float(pool[rng.integers(pool.size)])
        else:
            value = _summarize(draws, _column_is_integer(ds, col), rng)
        if col >= 0:
            x[case, col] = value
        else:
            targets[col][case] = value
    return ds.replaced(covariates=x, times=times, status=status), undetermined


def fit_with_imputation(dataset: SurvivalDataset,
                        params: GrowParams | None = None, *,
                        ntree: int = 1000, seed: int = 0, workers: int = 1):
    """Grow a missing-data forest and summary-impute the training data.

    Returns (Forest, ImputationState, completed dataset).  The completed
    value of each cell is the OOB summary of its terminal draws; cells of
    cases never OOB fall back to in-bag draws, then to a column draw.
    """
    params = replace(params or GrowParams(), missing_mode=True)
    if ntree < 1:
        raise ValueError("ntree must be >= 1")
    _validate_columns(dataset)
    trees, inbag = _grow_forest(dataset, params, ntree, seed, "by-case",
                                workers)
    observed_deaths = (dataset.status == 1) & ~np.isnan(dataset.times)
    forest = Forest(trees=trees, inbag=inbag,
                    event_grid=np.unique(dataset.times[observed_deaths]),
                    params=params, seed=seed, bootstrap="by-case",
                    dataset=dataset)
    draws_in = _gather_draws(trees, "draws_inbag")
    draws_oob = _gather_draws(trees, "draws_oob")

    def chooser(case, col):
        oob = draws_oob.get((case, col))
        if oob is not None and len(oob):
            return oob
        return draws_in.get((case, col))

    rng = np.random.default_rng(
        np.random.SeedSequence((seed, _SUMMARY_SALT)))
    completed, undetermined = _complete(dataset, chooser, rng)
    state = ImputationState(
        missing_x=np.isnan(dataset.covariates),
        missing_times=np.isnan(dataset.times),
        missing_status=np.isnan(dataset.status),
        draws_inbag=draws_in, draws_oob=draws_oob, completed=completed,
        iterations=1, undetermined=tuple(undetermined))
    return forest, state, completed


def _terminal_redraws(forest: Forest, original: SurvivalDataset, rng) -> dict:
    """One draw per tree per originally missing cell, from the originally
    nonmissing in-bag members of the case's terminal node (column-level
    draw when the terminal has none)."""
    cells = _missing_cells(original)
    by_col = defaultdict(list)
    for case, col in cells:
        by_col[col].append(case)
    col_pools = {}
    for col in by_col:
        vals = _column_values(original, col)
        col_pools[col] = vals[~np.isnan(vals)]
    draws = {cell: [] for cell in cells}
    for tree in forest.trees:
        for col in sorted(by_col):
            cases = np.asarray(by_col[col])
            terms = tree.terminal_of[cases]
            values = _column_values(original, col)
            for t_id in np.unique(terms):
                group = cases[terms == t_id]
                members = tree.members[t_id]
                vals = values[members]
                ok = ~np.isnan(vals)
                if ok.any():
                    weights = tree.member_weights[t_id][ok].astype(np.int64)
                    pool = np.repeat(vals[ok], weights)
                else:
                    pool = col_pools[col]
                picked = pool[rng.integers(0, pool.size, size=group.size)]
                for case, value in zip(group, picked):
                    draws[(int(case), col)].append(value)
    return draws


def iterate_impute(dataset: SurvivalDataset,
                   params: GrowParams | None = None, *, ntree: int = 1000,
                   seed: int = 0, iterations: int = 1, workers: int = 1):
    """Iterated summary imputation.  Returns (completed dataset, final
    Forest, per-iteration reports).

    Iteration 1 is fit_with_imputation under the same seed.  Later
    iterations refit on the completed data, redraw every originally
    missing cell once per tree from its terminal's originally nonmissing
    in-bag members, and apply the full summary.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    base = params or GrowParams()
    forest, state, completed = fit_with_imputation(
        dataset, base, ntree=ntree, seed=seed, workers=workers)
    try:
        pe, _, _ = _oob_prediction_error(forest, completed.times,
                                         completed.status)
    except ValueError:
        pe = None
    reports = [IterationReport(1, pe, len(state.undetermined))]
    for j in range(2, iterations + 1):
        cparams = replace(base, missing_mode=False)
        forest, report = fit(completed, cparams, ntree=ntree,
                             seed=_derive_seed(seed, j), workers=workers)
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, j, _SUMMARY_SALT)))
        draws = _terminal_redraws(forest, dataset, rng)
        completed, undetermined = _complete(
            dataset, lambda c, k: draws.get((c, k)), rng)
        reports.append(IterationReport(j, report.oob_error,
                                       len(undetermined)))
    return completed, forest, tuple(reports)


def impute_test(forest: Forest, test: SurvivalDataset):
    """Drop test cases down a missing-data forest, drawing for missing
    cells at the nodes that need them and at the landing terminal.

    Returns (completed test dataset, ensemble mortality per test case).
    Complete rows route without draws and predict exactly as the bootstrap
    ensemble would.
    """
    if not forest.params.missing_mode:
        raise ValueError("forest was grown on complete data and retains no "
                         "node distributions")
    train = forest.dataset
    if test.names != train.names or test.kinds != train.kinds:
        raise ValueError("test schema does not match the training data")
    eval_times = train.times[~np.isnan(train.times)]
    sums = _terminal_sums(forest, eval_times)
    rng = np.random.default_rng(
        np.random.SeedSequence((forest.seed, _TEST_SALT)))
    draws = defaultdict(list)
    mortality = np.zeros(test.n)
    incomplete = (np.isnan(test.covariates).any(axis=1)
                  | np.isnan(test.times) | np.isnan(test.status))
    complete_rows = np.flatnonzero(~incomplete)
    if complete_rows.size:
        per_tree = np.zeros(complete_rows.size)
        for b, tree in enumerate(forest.trees):
            terms = route_complete(tree, test.covariates[complete_rows])
            per_tree += sums[b][terms]
        mortality[complete_rows] = per_tree / forest.ntree
    for i in np.flatnonzero(incomplete).tolist():
        x = test.covariates[i]
        gap_cols = [int(k) for k in np.flatnonzero(np.isnan(x))]
        total = 0.0
        for b, tree in enumerate(forest.trees):
            drawn = {}
            node = 0
            while tree.var[node] >= 0:
                k = int(tree.var[node])
                v = x[k]
                if np.isnan(v):
                    if k in drawn:
                        v = drawn[k]
                    else:
                        pool = tree.node_pool(node, k)
                        if pool.size:
                            v = float(pool[rng.integers(pool.size)])
                            drawn[k] = v
                        else:
                            v = np.inf
                node = int(tree.left[node] if v <= tree.threshold[node]
                           else tree.right[node])
            for k in gap_cols:
                if k not in drawn:
                    pool = tree.node_pool(node, k)
                    if pool.size:
                        drawn[k] = float(pool[rng.integers(pool.size)])
            for k, v in drawn.items():
                draws[(i, k)].append(v)
            for col, gone in ((TIME_COL, np.isnan(test.times[i])),
                              (STATUS_COL, np.isnan(test.status[i]))):
                if gone:
                    pool = tree.node_pool(node, col)
                    if pool.size:
                        draws[(i, col)].append(
                            float(pool[rng.integers(pool.size)]))
            total += sums[b][node]
        mortality[i] = total / forest.ntree
    completed, _ = _complete(test, lambda c, k: draws.get((c, k)), rng,
                             pool_ds=train)
    return completed, mortality


def rough_impute(dataset: SurvivalDataset) -> SurvivalDataset:
    """Column-level fill: median for continuous columns, most frequent
    value for integer columns (ties toward the smaller value); missing
    times take the median, missing statuses the most frequent value."""
    _validate_columns(dataset)

    def rough(col):
        vals = _column_values(dataset, col)
        vals = vals[~np.isnan(vals)]
        if not _column_is_integer(dataset, col):
            return float(np.median(vals))
        uniq, counts = np.unique(vals, return_counts=True)
        return float(uniq[np.argmax(counts)])

    return _complete(dataset, lambda case, col: [rough(col)],
                     np.random.default_rng(0))[0]


def proximity_impute(dataset: SurvivalDataset,
                     params: GrowParams | None = None, *, ntree: int = 1000,
                     seed: int = 0, iterations: int = 5,
                     workers: int = 1) -> SurvivalDataset:
    """Proximity-weighted imputation: rough fill, then repeatedly fit a
    forest and replace each missing cell with the proximity-weighted
    average of the column's nonmissing values (continuous) or the integer
    value with the largest average proximity (ties toward the smaller
    value).  iterations=0 returns the rough fill itself.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    completed = rough_impute(dataset)
    cells = _missing_cells(dataset)
    if not cells:
        return completed
    for j in range(1, iterations + 1):
        cparams = replace(params or GrowParams(), missing_mode=False)
        forest, _ = fit(completed, cparams, ntree=ntree,
                        seed=_derive_seed(seed, j), workers=workers)
        prox = proximity_matrix(forest)
        x = np.array(completed.covariates)
        times = np.array(completed.times)
        status = np.array(completed.status)
        targets = {TIME_COL: times, STATUS_COL: status}
        for case, col in cells:
            vals = _column_values(dataset, col)
            ok = ~np.isnan(vals)
            weights = prox[case, ok]
            if _column_is_integer(dataset, col):
                uniq = np.unique(vals[ok])
                scores = [prox[case, ok & (vals == v)].mean() for v in uniq]
                value = float(uniq[int(np.argmax(scores))])
            elif weights.sum() > 0:
                value = float(np.sum(weights * vals[ok]) / weights.sum())
            else:
                value = float(vals[ok].mean())
            if col >= 0:
                x[case, col] = value
            else:
                targets[col][case] = value
        completed = dataset.replaced(covariates=x, times=times,
                                     status=status)
    return completed
