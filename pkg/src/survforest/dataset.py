"""Right-censored survival datasets: loading, validation, synthesis, corruption.

A dataset is an immutable bundle of observed times, death indicators, and a
numeric covariate matrix in which NaN marks a missing cell.  NaN is the one
representation of absence used everywhere in this package: it cannot silently
bias a split statistic, it can only poison it, and poisoning is detectable.
Integer-kind columns still live in float storage; the per-column kind flag is
what downstream imputation looks at when it must decide between averaging and
majority vote.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import optimize

CONTINUOUS = "continuous"
INTEGER = "integer"

#: report labels for outcome cells (covariate cells use the covariate name)
TIME_CELL = "@time"
STATUS_CELL = "@status"


@dataclass(frozen=True)
class SurvivalDataset:
    """n cases of (time, status, covariates) plus per-variable metadata.

    ``times`` and ``status`` are float vectors (NaN = missing outcome, which
    only the imputation pipeline accepts); nonmissing times are >= 0 and
    nonmissing status values are 0/1 with 1 = death.  ``covariates`` is an
    n x d float matrix with NaN for missing cells.  ``kinds[j]`` is
    "continuous" or "integer"; ``names[j]`` identifies column j.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    kinds: tuple
    names: tuple

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        status = np.array(self.status, dtype=float)
        cov = np.array(self.covariates, dtype=float)
        if cov.ndim != 2:
            raise ValueError("covariates must be a 2-d matrix")
        n, d = cov.shape
        if times.shape != (n,) or status.shape != (n,):
            raise ValueError("times/status length must match covariate rows")
        if n == 0:
            raise ValueError("empty dataset")
        ok = ~np.isnan(times)
        if np.any(times[ok] < 0):
            raise ValueError("negative survival times")
        ok = ~np.isnan(status)
        if not np.all((status[ok] == 0) | (status[ok] == 1)):
            raise ValueError("status values must be 0 or 1")
        kinds = tuple(self.kinds)
        names = tuple(str(x) for x in self.names)
        if len(kinds) != d or len(names) != d:
            raise ValueError("kinds/names length must match covariate columns")
        if any(k not in (CONTINUOUS, INTEGER) for k in kinds):
            raise ValueError(f"kinds must be '{CONTINUOUS}' or '{INTEGER}'")
        if len(set(names)) != d:
            raise ValueError("covariate names must be unique")
        for j, kind in enumerate(kinds):
            if kind == INTEGER:
                col = cov[:, j]
                col = col[~np.isnan(col)]
                if np.any(col != np.floor(col)):
                    raise ValueError(
                        f"integer-kind column {names[j]!r} has non-integral values")
        for arr in (times, status, cov):
            arr.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.covariates).any()
                    or np.isnan(self.times).any()
                    or np.isnan(self.status).any())

    @property
    def has_missing_outcomes(self) -> bool:
        return bool(np.isnan(self.times).any() or np.isnan(self.status).any())

    def replaced(self, **arrays) -> "SurvivalDataset":
        """Copy with some arrays swapped out; revalidates."""
        return dataclasses.replace(self, **arrays)


@dataclass(frozen=True)
class MissingCell:
    """One injected-missing position and its ground truth."""

    case: int
    column: str  # covariate name, or "@time" / "@status"
    truth: float


@dataclass(frozen=True)
class MissingnessReport:
    cells: tuple

    def truths(self, column: str) -> dict:
        """case -> ground truth for one column's injected cells."""
        return {c.case: c.truth for c in self.cells if c.column == column}


def _parse_cell(token: str):
    token = token.strip()
    if token == "" or token == "NA":
        return np.nan
    return float(token)


def load_csv(path, time_col: str, status_col: str, kinds=None) -> SurvivalDataset:
    """Read a comma-separated file with a header row into a dataset.

    Empty cells and the literal token NA are missing.  All columns other than
    ``time_col`` and ``status_col`` become covariates in file order.  Column
    kind is inferred (integer iff every nonmissing value is integral) unless
    overridden via ``kinds``, a mapping of column name -> kind.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (time_col, status_col):
            if col not in header:
                raise ValueError(f"{path}: no column named {col!r}")
        t_idx = header.index(time_col)
        s_idx = header.index(status_col)
        cov_idx = [j for j in range(len(header)) if j not in (t_idx, s_idx)]
        names = [header[j] for j in cov_idx]

        times, status, rows = [], [], []
        for r, record in enumerate(reader, start=2):
            if not record or all(tok.strip() == "" for tok in record):
                continue
            if len(record) != len(header):
                raise ValueError(f"{path}: row {r} has {len(record)} fields, "
                                 f"expected {len(header)}")

            def parse(j):
                try:
                    return _parse_cell(record[j])
                except ValueError:
                    raise ValueError(
                        f"{path}: row {r}, column {header[j]!r}: "
                        f"unparseable value {record[j]!r}") from None

            t = parse(t_idx)
            s = parse(s_idx)
            if not np.isnan(s) and s not in (0.0, 1.0):
                raise ValueError(f"{path}: row {r}, column {status_col!r}: "
                                 f"status must be 0 or 1, got {record[s_idx]!r}")
            times.append(t)
            status.append(s)
            rows.append([parse(j) for j in cov_idx])

    if not rows:
        raise ValueError(f"{path}: no data rows")
    cov = np.asarray(rows, dtype=float)

    kinds = dict(kinds or {})
    unknown = set(kinds) - set(names)
    if unknown:
        raise ValueError(f"kind override for unknown column(s) {sorted(unknown)}")
    inferred = []
    for j, name in enumerate(names):
        if name in kinds:
            inferred.append(kinds[name])
            continue
        col = cov[:, j]
        col = col[~np.isnan(col)]
        integral = col.size > 0 and np.all(col == np.floor(col))
        inferred.append(INTEGER if integral else CONTINUOUS)
    return SurvivalDataset(times=np.asarray(times), status=np.asarray(status),
                           covariates=cov, kinds=tuple(inferred),
                           names=tuple(names))


def _format_value(v: float, kind: str) -> str:
    if np.isnan(v):
        return "NA"
    if kind == INTEGER or v == np.floor(v):
        return str(int(v))
    return repr(float(v))


def save_csv(ds: SurvivalDataset, path, time_col="time", status_col="status"):
    """Write a dataset back out in the load_csv dialect (values round-trip)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([time_col, status_col, *ds.names])
        for i in range(ds.n):
            row = [_format_value(ds.times[i], CONTINUOUS),
                   _format_value(ds.status[i], INTEGER)]
            row += [_format_value(ds.covariates[i, j], ds.kinds[j])
                    for j in range(ds.d)]
            writer.writerow(row)


def bundled_pbc_path() -> Path:
    """Path of the bundled synthetic PBC-trial replica fixture.

    Generated by scripts/make_pbc_standin.py: same shape, marginal summary
    statistics and survival signal as the Mayo PBC trial benchmark (Fleming &
    Harrington 1991), but synthetic rows, not patient records.
    """
    with resources.as_file(resources.files("survforest.data")
                           .joinpath("pbc_synthetic.csv")) as p:
        return Path(p)


def simulate(n: int, d_signal: int, d_noise: int, censor_rate: float,
             seed: int) -> SurvivalDataset:
    """Synthetic benchmark: Uniform(0,1) covariates, exponential outcomes.

    Event rate for case i is exp(sum_j beta_j x_ij) with beta = (1, -1, 1, ...)
    over the signal columns and 0 over the noise columns.  Censoring times are
    exponential with a common rate calibrated so the expected censored
    fraction equals ``censor_rate`` exactly (censor_rate 0 disables censoring).
    Deterministic in ``seed``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    d = d_signal + d_noise
    if d < 1:
        raise ValueError("need at least one covariate")
    if not 0.0 <= censor_rate < 1.0:
        raise ValueError("censor_rate must be in [0, 1)")

    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, d))
    beta = np.zeros(d)
    beta[:d_signal] = [(-1.0) ** j for j in range(d_signal)]
    rate = np.exp(x @ beta)
    event = rng.exponential(1.0 / rate)

    if censor_rate == 0.0:
        times, status = event, np.ones(n)
    else:
        # censored fraction for rate c against case i is c / (c + rate_i)
        def excess(c):
            return np.mean(c / (c + rate)) - censor_rate

        c = optimize.brentq(excess, 1e-12, 1e12)
        censor = rng.exponential(1.0 / c, size=n)
        times = np.minimum(event, censor)
        status = (event <= censor).astype(float)

    names = [f"sig{j + 1}" for j in range(d_signal)]
    names += [f"noise{j + 1}" for j in range(d_noise)]
    return SurvivalDataset(times=times, status=status, covariates=x,
                           kinds=(CONTINUOUS,) * d, names=tuple(names))


def inject_missing(ds: SurvivalDataset, fraction: float, seed: int,
                   include_outcomes: bool = False):
    """Independently blank each eligible cell with probability ``fraction``.

    Eligible cells are the currently nonmissing covariate cells, plus time and
    status cells when ``include_outcomes`` is set.  Returns the corrupted
    dataset and a report of exactly the cells that were blanked, with ground
    truth; already-missing cells are left alone and never reported.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)

    cov = np.array(ds.covariates)
    hit = (rng.uniform(size=cov.shape) < fraction) & ~np.isnan(cov)
    cells = []
    for i, j in np.argwhere(hit):
        cells.append(MissingCell(case=int(i), column=ds.names[j],
                                 truth=float(cov[i, j])))
    cov[hit] = np.nan

    times = np.array(ds.times)
    status = np.array(ds.status)
    if include_outcomes:
        hit_t = (rng.uniform(size=ds.n) < fraction) & ~np.isnan(times)
        hit_s = (rng.uniform(size=ds.n) < fraction) & ~np.isnan(status)
        for i in np.flatnonzero(hit_t):
            cells.append(MissingCell(case=int(i), column=TIME_CELL,
                                     truth=float(times[i])))
        for i in np.flatnonzero(hit_s):
            cells.append(MissingCell(case=int(i), column=STATUS_CELL,
                                     truth=float(status[i])))
        times[hit_t] = np.nan
        status[hit_s] = np.nan

    out = ds.replaced(times=times, status=status, covariates=cov)
    return out, MissingnessReport(cells=tuple(cells))
