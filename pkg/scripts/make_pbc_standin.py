"""Generate the bundled pbc_synthetic.csv benchmark fixture.

The Mayo Clinic primary biliary cirrhosis (PBC) trial (Fleming & Harrington,
"Counting Processes and Survival Analysis", 1991) is the standard benchmark for
right-censored survival methods: 312 randomized participants, 17 covariates,
125 deaths.  The original per-patient records are not redistributed with this
package.  This script generates a synthetic stand-in of the same shape whose
marginal summary statistics, category counts, and survival signal are matched
to the published ones, so the bundled fixture exercises the engine at the same
scale and difficulty.  No row below corresponds to a real patient.

Matched to published trial summaries:
  - n = 312, deaths = 125 (transplants counted as censored), follow-up in days;
  - category counts: trt 158/154, sex f/m 276/36, ascites 24, hepato 160,
    spiders 90, edema 263/29/20 (0 / 0.5 / 1), stage 16/67/120/109;
  - continuous marginals (mean, sd, range) per column, including serum
    bilirubin sd 4.41 mg/dl;
  - survival driven by the published Mayo natural-history risk score
    0.871*log(bili) + 0.039*age - 2.53*log(albumin) + 2.38*log(protime)
    + 0.859*edema, plus lognormal frailty, with staggered-entry style
    administrative censoring.

Usage: python3 scripts/make_pbc_standin.py [--out PATH] [--seed N]
The committed fixture is the seed-750 output; regeneration is byte-stable.
"""

import argparse

import numpy as np
from scipy import optimize

N = 312
DEATHS = 125
WEIBULL_SHAPE = 1.15
FRAILTY_SD = 0.3
RISK_SCALE = 1.3
FOLLOWUP_DAYS = (900, 4560)

RISK_COEF = {"bili": 0.871, "age": 0.039, "albumin": -2.53, "protime": 2.38,
             "edema": 0.859}
RISK_LOGGED = {"bili", "albumin", "protime"}

# name -> (severity loading, marginal spec)
# marginal specs: ("lognorm"|"norm", mean, sd, lo, hi) fitted on the realized
# z sample, ("counts", {value: count}) assigned by z-order, or ("trt",).
COLUMNS = [
    ("trt",      0.00, ("trt",)),
    ("age",      0.15, ("norm", 50.0, 10.6, 26.3, 78.4)),
    ("sex",      0.10, ("counts", [(0, 276), (1, 36)])),
    ("ascites",  0.65, ("counts", [(0, 288), (1, 24)])),
    ("hepato",   0.55, ("counts", [(0, 152), (1, 160)])),
    ("spiders",  0.50, ("counts", [(0, 222), (1, 90)])),
    ("edema",    0.65, ("counts", [(0.0, 263), (0.5, 29), (1.0, 20)])),
    ("bili",     0.75, ("lognorm", 3.26, 4.41, 0.3, 28.0)),
    ("chol",     0.30, ("lognorm", 369.5, 231.9, 120.0, 1775.0)),
    ("albumin", -0.55, ("norm", 3.52, 0.42, 1.96, 4.64)),
    ("copper",   0.55, ("lognorm", 97.6, 85.6, 4.0, 588.0)),
    ("alk_phos", 0.35, ("lognorm", 1983.0, 2140.0, 289.0, 13862.4)),
    ("ast",      0.45, ("lognorm", 122.6, 56.7, 26.35, 457.25)),
    ("trig",     0.30, ("lognorm", 124.7, 65.3, 33.0, 598.0)),
    ("platelet", -0.30, ("norm", 261.9, 95.6, 62.0, 563.0)),
    ("protime",  0.50, ("lognorm", 10.73, 1.02, 9.0, 17.1)),
    ("stage",    0.60, ("counts", [(1, 16), (2, 67), (3, 120), (4, 109)])),
]

DECIMALS = {"age": 5, "albumin": 2, "ast": 2, "bili": 1, "alk_phos": 1,
            "protime": 1, "edema": 1}
INTEGER_COLS = {"trt", "sex", "ascites", "hepato", "spiders", "chol", "copper",
                "trig", "platelet", "stage"}


def _fit_clipped(z, kind, mean, sd, lo, hi):
    """Choose (mu, sigma) so clip(g(mu + sigma*z), lo, hi) matches mean/sd
    on this exact z sample.  g = exp for lognorm, identity for norm."""
    def transform(p):
        mu, sigma = p
        x = mu + np.abs(sigma) * z
        if kind == "lognorm":
            x = np.exp(x)
        return np.clip(x, lo, hi)

    def resid(p):
        x = transform(p)
        return [x.mean() - mean, x.std(ddof=1) - sd]

    if kind == "lognorm":
        sigma0 = np.sqrt(np.log1p((sd / mean) ** 2))
        p0 = [np.log(mean) - sigma0 ** 2 / 2, sigma0]
    else:
        p0 = [mean, sd]
    sol = optimize.least_squares(resid, p0, xtol=1e-12, ftol=1e-12)
    return transform(sol.x)


def _assign_counts(z, pairs):
    """Assign categorical values by severity order: highest z gets the last
    (most severe) listed value, with exact published counts."""
    order = np.argsort(z, kind="stable")
    out = np.empty(len(z))
    start = 0
    for value, count in pairs:
        out[order[start:start + count]] = value
        start += count
    assert start == len(z)
    return out


def generate(seed):
    rng = np.random.default_rng(seed)
    severity = rng.standard_normal(N)
    cols = {}
    for name, lam, spec in COLUMNS:
        if spec[0] == "trt":
            trt = np.r_[np.ones(158), 2 * np.ones(154)]
            rng.shuffle(trt)
            cols[name] = trt
            continue
        z = lam * severity + np.sqrt(1.0 - lam ** 2) * rng.standard_normal(N)
        if spec[0] == "counts":
            cols[name] = _assign_counts(z, spec[1])
        else:
            kind, mean, sd, lo, hi = spec
            x = _fit_clipped(z, kind, mean, sd, lo, hi)
            d = DECIMALS.get(name, 0)
            cols[name] = np.round(x, d) if d else np.round(x)

    eta = np.zeros(N)
    for name, coef in RISK_COEF.items():
        v = np.log(cols[name]) if name in RISK_LOGGED else cols[name]
        eta = eta + coef * v
    eta = RISK_SCALE * eta + FRAILTY_SD * rng.standard_normal(N)
    eta = eta - eta.mean()

    expo = rng.exponential(size=N)
    censor = np.round(rng.uniform(*FOLLOWUP_DAYS, size=N))

    def death_count(log_scale):
        t = np.exp(log_scale) * (expo / np.exp(eta)) ** (1.0 / WEIBULL_SHAPE)
        return int(np.sum(t <= censor))

    lo, hi = -5.0, 25.0
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if death_count(mid) > DEATHS:
            lo = mid
        else:
            hi = mid
    scale = np.exp(0.5 * (lo + hi))
    t_death = scale * (expo / np.exp(eta)) ** (1.0 / WEIBULL_SHAPE)
    status = (t_death <= censor).astype(int)
    time = np.ceil(np.minimum(t_death, censor)).astype(int)
    time = np.maximum(time, 1)
    assert status.sum() == DEATHS, status.sum()

    return time, status, cols


def write_csv(path, time, status, cols):
    names = [name for name, _, _ in COLUMNS]
    with open(path, "w") as fh:
        fh.write("time,status," + ",".join(names) + "\n")
        for i in range(N):
            row = [str(time[i]), str(status[i])]
            for name in names:
                v = cols[name][i]
                if name in INTEGER_COLS:
                    row.append(str(int(round(v))))
                else:
                    row.append(f"{v:.{DECIMALS[name]}f}")
            fh.write(",".join(row) + "\n")


def summarize(time, status, cols):
    print(f"n={N} deaths={int(status.sum())} censored={int((1 - status).sum())}")
    print(f"time range [{time.min()}, {time.max()}]")
    for name, _, spec in COLUMNS:
        x = cols[name]
        if spec[0] in ("counts", "trt"):
            vals, cnt = np.unique(x, return_counts=True)
            pretty = " ".join(f"{v:g}:{c}" for v, c in zip(vals, cnt))
            print(f"{name:9s} {pretty}")
        else:
            print(f"{name:9s} mean={x.mean():9.3f} sd={x.std(ddof=1):9.3f} "
                  f"range=[{x.min():g}, {x.max():g}]")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="src/survforest/data/pbc_synthetic.csv")
    ap.add_argument("--seed", type=int, default=750)
    args = ap.parse_args()
    time, status, cols = generate(args.seed)
    write_csv(args.out, time, status, cols)
    summarize(time, status, cols)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
