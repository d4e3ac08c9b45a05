"""Core survival estimators and metrics.

Everything downstream is built from two objects: the Nelson-Aalen cumulative
hazard step function of a (possibly bootstrap-weighted) sample, and Harrell's
concordance index over predicted mortality rankings.  Both are implemented
directly from their defining formulas; the test suite checks them against
independently coded brute-force oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepCHF:
    """Right-continuous nondecreasing step function H(t).

    ``grid`` holds strictly increasing event times, ``values`` the cumulative
    hazard at each.  H(t) is the value at the largest grid time <= t, zero
    before the first grid time.  An empty grid means H == 0 everywhere.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid and values must be equal-length 1-d arrays")
        if grid.size:
            if np.any(np.diff(grid) <= 0):
                raise ValueError("grid must be strictly increasing")
            if values[0] < 0 or np.any(np.diff(values) < 0):
                raise ValueError("values must be nonnegative and nondecreasing")

    def __call__(self, t):
        scalar = np.isscalar(t) or np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.grid.size == 0:
            out = np.zeros(t.shape)
        else:
            idx = np.searchsorted(self.grid, t, side="right") - 1
            out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return float(out[0]) if scalar else out


@dataclass(frozen=True)
class ConcordanceResult:
    """Outcome of the pairwise concordance count."""

    permissible: int
    concordance: float

    @property
    def c_index(self) -> float:
        return self.concordance / self.permissible


def _as_survival_arrays(times, status, weights=None):
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    if times.shape != status.shape or times.ndim != 1:
        raise ValueError("times and status must be equal-length 1-d sequences")
    if np.any(times < 0):
        raise ValueError("negative survival times")
    if not np.all((status == 0) | (status == 1)):
        raise ValueError("status values must be 0 or 1")
    status = status.astype(np.int64)
    if weights is None:
        weights = np.ones(times.shape[0])
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != times.shape:
            raise ValueError("weights length mismatch")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
    return times, status, weights


def nelson_aalen(times, status, weights=None) -> StepCHF:
    """Nelson-Aalen CHF estimate of a sample: H(t) = sum_{t_l <= t} d_l / Y_l.

    ``weights`` are positive multiplicities (bootstrap copies); d_l and Y_l
    are weighted death and at-risk counts at each distinct death time.  A case
    censored exactly at a death time still counts as at risk there, which is
    what makes the conservation-of-events identity exact.
    """
    times, status, weights = _as_survival_arrays(times, status, weights)
    grid = np.unique(times[status == 1])
    if grid.size == 0:
        return StepCHF(np.empty(0), np.empty(0))
    deaths = np.zeros(grid.size)
    np.add.at(deaths, np.searchsorted(grid, times[status == 1]),
              weights[status == 1])
    # Y_l = total weight with T >= grid[l]
    covered = np.searchsorted(grid, times, side="right")
    dropped = np.bincount(covered, weights=weights, minlength=grid.size + 1)
    at_risk = weights.sum() - np.cumsum(dropped)[:grid.size]
    return StepCHF(grid, np.cumsum(deaths / at_risk))


def conservation_sum(chf: StepCHF, times, weights=None) -> float:
    """Weighted sum of the CHF over the sample's own observed times.

    For a CHF built by nelson_aalen from (times, status, weights) this equals
    the weighted death count exactly (conservation of events).
    """
    times = np.asarray(times, dtype=float)
    if weights is None:
        weights = np.ones(times.shape[0])
    return float(np.sum(np.asarray(weights, dtype=float) * chf(times)))


def concordance(predicted, times, status) -> ConcordanceResult:
    """Harrell's concordance over all case pairs; larger predicted = worse.

    Pairs whose shorter time is censored are omitted, as are tied-time pairs
    with no death.  Distinct-time pairs credit 1 when the shorter-lived case
    has the (strictly) worse prediction, 0.5 on predicted ties, else 0.
    Tied-time pairs with both deaths credit 1 on predicted ties, else 0.5;
    with one death, 1 when the death has the worse prediction, else 0.5.
    """
    predicted = np.asarray(predicted, dtype=float)
    times, status, _ = _as_survival_arrays(times, status)
    if predicted.shape != times.shape:
        raise ValueError("predicted length mismatch")
    if times.size < 2:
        raise ValueError("need at least two cases")

    ii, jj = np.triu_indices(times.size, k=1)
    ti, tj = times[ii], times[jj]
    di, dj = status[ii], status[jj]
    pi, pj = predicted[ii], predicted[jj]

    tied = ti == tj
    i_shorter = ti < tj
    short_death = np.where(i_shorter, di, dj) == 1
    perm_distinct = ~tied & short_death
    perm_tied_both = tied & (di == 1) & (dj == 1)
    perm_tied_one = tied & ((di == 1) ^ (dj == 1))

    p_short = np.where(i_shorter, pi, pj)
    p_long = np.where(i_shorter, pj, pi)
    credit_distinct = np.where(p_short > p_long, 1.0,
                               np.where(p_short == p_long, 0.5, 0.0))
    credit_tied_both = np.where(pi == pj, 1.0, 0.5)
    p_death = np.where(di == 1, pi, pj)
    p_other = np.where(di == 1, pj, pi)
    credit_tied_one = np.where(p_death > p_other, 1.0, 0.5)

    permissible = int(perm_distinct.sum() + perm_tied_both.sum()
                      + perm_tied_one.sum())
    if permissible == 0:
        raise ValueError("no permissible pairs: concordance undefined")
    total = (credit_distinct[perm_distinct].sum()
             + credit_tied_both[perm_tied_both].sum()
             + credit_tied_one[perm_tied_one].sum())
    return ConcordanceResult(permissible=permissible, concordance=float(total))


def prediction_error(predicted, times, status) -> float:
    """1 - C; 0.5 means the predictions carry no ranking information."""
    return 1.0 - concordance(predicted, times, status).c_index
