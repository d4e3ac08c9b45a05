"""Independent brute-force reference implementations used by the test suite.

Everything in here is written loop-by-loop from the defining formulas, on
purpose: no shared code with the package, no vectorization, no cleverness.
Slowness is fine; disagreement with the package is not.
"""

import math


def nelson_aalen_table(times, status, weights=None):
    """{death time: H} via explicit risk-set enumeration."""
    w = [1.0] * len(times) if weights is None else [float(x) for x in weights]
    death_times = sorted({t for t, s in zip(times, status) if s == 1})
    h = 0.0
    table = {}
    for t in death_times:
        d = sum(wi for ti, si, wi in zip(times, status, w)
                if si == 1 and ti == t)
        y = sum(wi for ti, wi in zip(times, w) if ti >= t)
        h += d / y
        table[t] = h
    return table


def chf_eval(table, t):
    val = 0.0
    for grid_t in sorted(table):
        if grid_t <= t:
            val = table[grid_t]
    return val


def logrank(times, status, weights, left):
    """Two-sample log-rank |L|/sqrt(V); -inf when V = 0."""
    death_times = sorted({t for t, s in zip(times, status) if s == 1})
    num = 0.0
    var = 0.0
    for t in death_times:
        y = sum(w for ti, w in zip(times, weights) if ti >= t)
        d = sum(w for ti, si, w in zip(times, status, weights)
                if si == 1 and ti == t)
        y1 = sum(w for ti, w, sd in zip(times, weights, left) if sd and ti >= t)
        d1 = sum(w for ti, si, w, sd in zip(times, status, weights, left)
                 if sd and si == 1 and ti == t)
        num += d1 - y1 * d / y
        if y > 1:
            var += (y1 / y) * (1 - y1 / y) * ((y - d) / (y - 1)) * d
    if var <= 0:
        return float("-inf")
    return abs(num) / math.sqrt(var)


def logrank_scores(times, status, weights):
    """a_i = delta_i - sum over deaths j with T_j <= T_i of w_j / Y(T_j)."""
    out = []
    for ti, si in zip(times, status):
        acc = 0.0
        for tj, sj, wj in zip(times, status, weights):
            if sj == 1 and tj <= ti:
                y = sum(wk for tk, wk in zip(times, weights) if tk >= tj)
                acc += wj / y
        out.append(si - acc)
    return out


def logrank_score_stat(times, status, weights, left):
    a = logrank_scores(times, status, weights)
    w_total = sum(weights)
    n1 = sum(w for w, sd in zip(weights, left) if sd)
    abar = sum(w * ai for w, ai in zip(weights, a)) / w_total
    s2 = sum(w * (ai - abar) ** 2 for w, ai in zip(weights, a)) / (w_total - 1)
    denom2 = n1 * (1 - n1 / w_total) * s2
    if denom2 <= 0:
        return float("-inf")
    left_sum = sum(w * ai for w, ai, sd in zip(weights, a, left) if sd)
    return abs(left_sum - n1 * abar) / math.sqrt(denom2)


def conserve(times, status, weights, left):
    """Mean absolute prefix excursion over the two daughters."""
    total = 0.0
    for side in (True, False):
        sub = [(t, s, w) for t, s, w, sd in zip(times, status, weights, left)
               if sd == side]
        expanded = [(t, s) for t, s, w in sub for _ in range(int(w))]
        expanded.sort(key=lambda ts: (ts[0], -ts[1]))
        table = nelson_aalen_table([t for t, _, _ in sub],
                                   [s for _, s, _ in sub],
                                   [w for _, _, w in sub])
        run = 0.0
        for pos, (t, s) in enumerate(expanded):
            run += chf_eval(table, t) - s
            if pos < len(expanded) - 1:
                total += abs(run)
        assert abs(run) <= 1e-9
    return total / sum(weights)


def concordance(predicted, times, status):
    """(permissible, concordance) by explicit pair enumeration."""
    n = len(times)
    permissible = 0
    conc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            ti, tj = times[i], times[j]
            di, dj = status[i], status[j]
            pi, pj = predicted[i], predicted[j]
            if ti != tj:
                if ti < tj:
                    short_d, p_short, p_long = di, pi, pj
                else:
                    short_d, p_short, p_long = dj, pj, pi
                if short_d == 0:
                    continue
                permissible += 1
                if p_short > p_long:
                    conc += 1.0
                elif p_short == p_long:
                    conc += 0.5
            else:
                if di == 0 and dj == 0:
                    continue
                permissible += 1
                if di == 1 and dj == 1:
                    conc += 1.0 if pi == pj else 0.5
                else:
                    p_death = pi if di == 1 else pj
                    p_other = pj if di == 1 else pi
                    conc += 1.0 if p_death > p_other else 0.5
    return permissible, conc
