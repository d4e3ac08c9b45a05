"""Candidate split evaluation and selection for survival tree nodes.

Four rules are supported: ``logrank`` (two-sample log-rank statistic with
hypergeometric variance, maximized), ``conserve`` (mean absolute prefix
excursion of the daughters' conservation-of-events identity, minimized),
``logrankscore`` (standardized sum of per-case log-rank scores, maximized),
and ``logrankrandom`` (one random admissible threshold per candidate variable,
log-rank statistic maximized across variables).

The public statistic functions evaluate one split at a time, straight from the
formulas, and are the reference surface the oracle tests hit.  best_split uses
a vectorized scan that evaluates every threshold of a variable in one pass
over cumulative risk/death count matrices; a test asserts the two agree.

A split is admissible when each daughter holds at least d0 distinct death
times, counted ignoring bootstrap multiplicity.  Degenerate statistics
(zero variance) yield a -inf sentinel rather than an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .survstat import nelson_aalen

RULES = ("logrank", "conserve", "logrankscore", "logrankrandom")

INADMISSIBLE = float("-inf")


@dataclass(frozen=True)
class NodeSample:
    """The cases of one node: dataset indices, bootstrap multiplicities, and
    views of times / status / covariates restricted to the node."""

    indices: np.ndarray
    weights: np.ndarray
    times: np.ndarray
    status: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        if self.indices.size == 0:
            raise ValueError("empty node")
        if np.any(self.weights < 1):
            raise ValueError("multiplicities must be >= 1")

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class SplitCandidate:
    """Chosen split: x[var] <= threshold goes left."""

    var: int
    threshold: float
    rule_value: float
    rule: str


def _split_mask(node: NodeSample, k: int, c: float) -> np.ndarray:
    left = node.x[:, k] <= c
    if not left.any() or left.all():
        raise ValueError("split must produce two nonempty daughters")
    return left


def _risk_death_counts(times, status, weights, grid):
    """Weighted at-risk and death counts of one group on a death-time grid."""
    at_risk = np.array([np.sum(weights[times >= t]) for t in grid])
    deaths = np.array([np.sum(weights[(times == t) & (status == 1)])
                       for t in grid])
    return at_risk, deaths


def logrank_stat(node: NodeSample, k: int, c: float) -> float:
    """|L| / sqrt(V) for the split x_k <= c.

    Over the node's distinct death times with parent counts Y_l, d_l and
    left-daughter counts Y_l1, d_l1 (all multiplicity-weighted):
    L = sum_l (d_l1 - Y_l1 d_l / Y_l) and
    V = sum_{l: Y_l > 1} (Y_l1/Y_l)(1 - Y_l1/Y_l)((Y_l - d_l)/(Y_l - 1)) d_l.
    Returns -inf when V = 0 (inadmissible, not an error).
    """
    left = _split_mask(node, k, c)
    grid = np.unique(node.times[node.status == 1])
    if grid.size == 0:
        return INADMISSIBLE
    y, d = _risk_death_counts(node.times, node.status, node.weights, grid)
    y1, d1 = _risk_death_counts(node.times[left], node.status[left],
                                node.weights[left], grid)
    numer = np.sum(d1 - y1 * d / y)
    ok = y > 1
    frac = y1[ok] / y[ok]
    var = np.sum(frac * (1.0 - frac) * ((y[ok] - d[ok]) / (y[ok] - 1.0)) * d[ok])
    if var <= 0.0:
        return INADMISSIBLE
    return float(abs(numer) / np.sqrt(var))


def logrank_scores(times, status, weights) -> np.ndarray:
    """Per-case log-rank scores a_i = delta_i - sum_{j: T_j <= T_i} d_j / Y(T_j).

    Y(t) is the weighted count of cases with T >= t, which generalizes the
    rank expression n - rank + 1 to tied times.  The running sum equals the
    node's Nelson-Aalen CHF at T_i, so scores are delta_i - H(T_i).
    """
    chf = nelson_aalen(times, status, weights)
    return np.asarray(status, dtype=float) - chf(times)


def logrank_score_stat(node: NodeSample, k: int, c: float) -> float:
    """|sum_left w a - n1 abar| / sqrt(n1 (1 - n1/n) s_a^2), weighted.

    n1 and n are weighted daughter / node sizes; abar and s_a^2 are the
    weighted node mean and sample variance (denominator n - 1) of the scores.
    Returns -inf when the denominator vanishes.
    """
    left = _split_mask(node, k, c)
    w = node.weights.astype(float)
    a = logrank_scores(node.times, node.status, w)
    n = w.sum()
    n1 = w[left].sum()
    abar = np.sum(w * a) / n
    s2 = np.sum(w * (a - abar) ** 2) / (n - 1.0)
    denom2 = n1 * (1.0 - n1 / n) * s2
    if denom2 <= 0.0:
        return INADMISSIBLE
    return float(abs(np.sum(w[left] * a[left]) - n1 * abar) / np.sqrt(denom2))


def _prefix_excursion(times, status, weights) -> float:
    """sum_{l=1}^{m-1} |S_l| for one daughter, plus a conservation assert.

    Members are expanded by multiplicity and ordered by time, deaths before
    censorings at tied times; S_l is the running sum of H(T_(l)) - delta_(l)
    where H is the daughter's own Nelson-Aalen CHF.  The final S_m is zero by
    conservation of events, asserted here to 1e-9.
    """
    rep = np.asarray(weights, dtype=int)
    t = np.repeat(times, rep)
    s = np.repeat(status, rep)
    order = np.lexsort((-s, t))
    t, s = t[order], s[order]
    chf = nelson_aalen(times, status, weights)
    run = np.cumsum(chf(t) - s)
    if abs(run[-1]) > 1e-9:
        raise AssertionError(f"conservation violated: final prefix sum {run[-1]}")
    return float(np.sum(np.abs(run[:-1])))


def conserve_measure(node: NodeSample, k: int, c: float) -> float:
    """Mean absolute conservation excursion of the two daughters (minimize)."""
    left = _split_mask(node, k, c)
    total = 0.0
    for mask in (left, ~left):
        total += _prefix_excursion(node.times[mask], node.status[mask],
                                   node.weights[mask])
    return total / float(node.weights.sum())


class _NodeScan:
    """Shared per-node state for the all-thresholds split scan.

    Matrices are indexed (case, death-time); cumulative sums down a
    variable-sorted case order turn every left-prefix (threshold) into one
    matrix row, so a variable's full threshold sweep is a handful of
    vectorized operations.
    """

    def __init__(self, node: NodeSample):
        self.node = node
        t, s, w = node.times, node.status, node.weights.astype(float)
        self.grid = np.unique(t[s == 1])
        ng = self.grid.size
        self.covered = np.searchsorted(self.grid, t, side="right")
        cols = np.arange(ng)
        self.risk_m = (cols[None, :] < self.covered[:, None]) * w[:, None]
        death_rows = np.flatnonzero(s == 1)
        death_cols = np.searchsorted(self.grid, t[death_rows])
        self.death_m = np.zeros((node.size, ng))
        self.death_m[death_rows, death_cols] = w[death_rows]
        self.udeath_m = np.zeros((node.size, ng))
        self.udeath_m[death_rows, death_cols] = 1.0
        self.y = self.risk_m.sum(axis=0)
        self.d = self.death_m.sum(axis=0)
        self.utotal = self.udeath_m.sum(axis=0)
        self.w_total = w.sum()
        ok = self.y > 1
        self.var_factor = np.where(
            ok, ((self.y - self.d) / np.where(ok, self.y - 1.0, 1.0)) * self.d,
            0.0)
        self._scores = None
        self._expanded = None

    def scores(self):
        if self._scores is None:
            node = self.node
            w = node.weights.astype(float)
            a = logrank_scores(node.times, node.status, w)
            abar = np.sum(w * a) / self.w_total
            s2 = np.sum(w * (a - abar) ** 2) / (self.w_total - 1.0)
            self._scores = (a, abar, s2)
        return self._scores

    def expanded(self):
        """Multiplicity-expanded rows in (time, deaths-first) order, plus the
        rank of each expanded row in that order, for the conserve scan."""
        if self._expanded is None:
            node = self.node
            rep = node.weights.astype(int)
            t = np.repeat(node.times, rep)
            s = np.repeat(node.status, rep)
            case = np.repeat(np.arange(node.size), rep)
            order = np.lexsort((-s, t))
            self._expanded = (t[order], s[order], case[order],
                              np.searchsorted(self.grid, t[order], side="right"))
        return self._expanded

    def thresholds(self, k: int):
        """Sorted-case order, last-index-per-distinct-value boundaries, and
        midpoint thresholds for variable k.  Empty when k is constant."""
        v = self.node.x[:, k]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        cut = np.flatnonzero(sv[1:] != sv[:-1])
        thresholds = 0.5 * (sv[cut] + sv[cut + 1])
        return order, cut, thresholds

    def admissible(self, order, cut, d0: int):
        """Per-threshold mask: both daughters hold >= d0 distinct death times."""
        cum_u = np.cumsum(self.udeath_m[order], axis=0)[cut]
        left_u = (cum_u > 0).sum(axis=1)
        right_u = ((self.utotal - cum_u) > 0).sum(axis=1)
        return (left_u >= d0) & (right_u >= d0)

    def logrank_all(self, order, cut):
        """Log-rank statistic at every threshold of one variable."""
        y1 = np.cumsum(self.risk_m[order], axis=0)[cut]
        d1 = np.cumsum(self.death_m[order], axis=0)[cut]
        numer = d1.sum(axis=1) - y1 @ (self.d / self.y)
        frac = y1 / self.y
        var = (frac * (1.0 - frac)) @ self.var_factor
        with np.errstate(invalid="ignore", divide="ignore"):
            stat = np.abs(numer) / np.sqrt(var)
        return np.where(var > 0.0, stat, INADMISSIBLE)

    def logrankscore_all(self, order, cut):
        a, abar, s2 = self.scores()
        w = self.node.weights.astype(float)
        n1 = np.cumsum(w[order])[cut]
        left_sum = np.cumsum((w * a)[order])[cut]
        denom2 = n1 * (1.0 - n1 / self.w_total) * s2
        with np.errstate(invalid="ignore", divide="ignore"):
            stat = np.abs(left_sum - n1 * abar) / np.sqrt(denom2)
        return np.where(denom2 > 0.0, stat, INADMISSIBLE)

    def conserve_all(self, order, cut):
        """Conserve measure at every threshold of one variable.

        Row u of the cumulative count matrices gives daughter risk/death
        counts, hence each daughter's own CHF on the grid; gathering that CHF
        at the expanded members' times and masking by daughter membership
        turns the per-threshold prefix excursions into row-wise cumsums.
        """
        y1 = np.cumsum(self.risk_m[order], axis=0)[cut]
        d1 = np.cumsum(self.death_m[order], axis=0)[cut]
        t_e, s_e, case_e, covered_e = self.expanded()
        n_thresh = cut.size

        measures = np.empty(n_thresh)
        # rank of each case in the v-sorted order; expanded row goes left
        # iff its case's rank is within the threshold's prefix
        rank = np.empty(self.node.size, dtype=int)
        rank[order] = np.arange(self.node.size)
        in_left = rank[case_e][None, :] <= cut[:, None]

        for daughter in (0, 1):
            if daughter == 0:
                y_m, d_m, member = y1, d1, in_left
            else:
                y_m, d_m, member = self.y - y1, self.d - d1, ~in_left
            with np.errstate(invalid="ignore", divide="ignore"):
                haz = np.where(y_m > 0, d_m / np.where(y_m > 0, y_m, 1.0), 0.0)
            h_grid = np.cumsum(haz, axis=1)
            h_at = np.zeros((n_thresh, t_e.size))
            has = covered_e > 0
            h_at[:, has] = np.take_along_axis(
                h_grid, np.broadcast_to((covered_e[has] - 1)[None, :],
                                        (n_thresh, has.sum())), axis=1)
            run = np.cumsum(np.where(member, h_at - s_e[None, :], 0.0), axis=1)
            last = np.max(np.where(member, np.arange(t_e.size)[None, :], -1),
                          axis=1)
            final = run[np.arange(n_thresh), last]
            if np.any(np.abs(final) > 1e-9):
                raise AssertionError("conservation violated in conserve scan")
            measures_d = np.sum(np.abs(run) * member, axis=1) - np.abs(final)
            measures = measures_d if daughter == 0 else measures + measures_d
        return measures / self.w_total


def best_split(node: NodeSample, candidate_vars, rule: str, d0: int, rng):
    """Best admissible split over the candidate variables, or None.

    Deterministic rules scan every midpoint threshold of every candidate;
    logrankrandom draws one uniformly random admissible threshold per
    candidate (consuming randomness only for candidates that have one) and
    maximizes the log-rank statistic across candidates.  Rule-value ties are
    broken toward the lowest variable index, then the lowest threshold.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    scan = _NodeScan(node)
    if scan.grid.size == 0:
        return None
    minimize = rule == "conserve"
    best = None

    for k in sorted(int(v) for v in candidate_vars):
        order, cut, thresholds = scan.thresholds(k)
        if thresholds.size == 0:
            continue
        admissible = scan.admissible(order, cut, d0)
        if not admissible.any():
            continue
        if rule == "logrankrandom":
            pick = np.flatnonzero(admissible)[rng.integers(admissible.sum())]
            values = scan.logrank_all(order, cut)
            value, threshold = values[pick], thresholds[pick]
            if value == INADMISSIBLE:
                continue
        else:
            if rule == "logrank":
                values = scan.logrank_all(order, cut)
            elif rule == "logrankscore":
                values = scan.logrankscore_all(order, cut)
            else:
                values = scan.conserve_all(order, cut)
            values = np.where(admissible, values,
                              np.inf if minimize else INADMISSIBLE)
            u = int(np.argmin(values) if minimize else np.argmax(values))
            value, threshold = values[u], thresholds[u]
            if not np.isfinite(value):
                continue
        if best is None or (value < best.rule_value if minimize
                            else value > best.rule_value):
            best = SplitCandidate(var=k, threshold=float(threshold),
                                  rule_value=float(value), rule=rule)
    return best
