"""Posterior bias/variance summaries, house-effect table and plot-ready series.

Everything is computed per draw and then summarised; posterior means are
never plugged into a nonlinear quantity.  Biases are reported in
percentage points.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .data import PollRecord, PreparedDataset
from .model import ParameterSet, linear_predictor

PP = 100.0
INTERVAL_LEVELS = (2.5, 25.0, 75.0, 97.5)
HIST_BIN_WIDTH = 0.5

ROW_ALL = "Average absolute bias"
ROW_ELECTION_DAY = "Average absolute election day bias"
ROW_UNDECIDED = "Average absolute undecided voter bias"
ROW_HOUSE = "Average absolute house effects"
ROW_SD = "Average standard deviation"
ROW_UNDECIDED_LEVEL = "Average election day undecided"


class BiasKind(str, enum.Enum):
    ALL = "all"
    ELECTION_DAY = "election_day"
    UNDECIDED = "undecided"
    HOUSE = "house"


# which linear-predictor terms each kind keeps
_TERMS = {
    BiasKind.ALL: dict(alpha1=True, time=True, undecided=True, house=True),
    BiasKind.ELECTION_DAY: dict(alpha1=True, time=False, undecided=True, house=True),
    BiasKind.UNDECIDED: dict(alpha1=False, time=False, undecided=True, house=False),
    BiasKind.HOUSE: dict(alpha1=False, time=False, undecided=False, house=True),
}


def _race_means(values: np.ndarray, data: PreparedDataset) -> np.ndarray:
    """Average a (..., polls) array within races -> (..., races)."""
    race = data.arrays.race
    counts = np.bincount(race, minlength=data.race_count).astype(float)
    flat = values.reshape(-1, values.shape[-1])
    out = np.zeros((flat.shape[0], data.race_count))
    for r in range(data.race_count):
        out[:, r] = flat[:, race == r].sum(axis=1)
    out /= counts
    return out.reshape(values.shape[:-1] + (data.race_count,))


def race_bias(params: ParameterSet, data: PreparedDataset,
              kind: BiasKind | str = BiasKind.ALL) -> np.ndarray:
    """Per-race mean of p_i - v_r under the kind's predictor, in pp.

    Works on a single draw or a batch; the result has shape (..., races).
    """
    kind = BiasKind(kind)
    eta = linear_predictor(params, data, **_TERMS[kind])
    v = data.outcomes[data.arrays.race]
    return PP * _race_means(expit(eta) - v, data)


def race_sd(params: ParameterSet, data: PreparedDataset) -> np.ndarray:
    """sigma_r: per-race mean poll standard deviation (All predictor), in pp."""
    a = data.arrays
    p = expit(linear_predictor(params, data))
    s = np.sqrt(p * (1.0 - p) / a.n + np.asarray(params.tau1_sq)[..., a.race])
    return PP * _race_means(s, data)


def _subset(subset, n: int) -> np.ndarray:
    idx = np.arange(n) if subset is None else np.asarray(subset, dtype=np.intp)
    if idx.size == 0:
        raise ValueError("empty race subset")
    return idx


def average_abs_bias(per_race: np.ndarray, subset: Sequence[int] | None = None) -> np.ndarray:
    """mu_{b,S} per draw from (..., races) biases."""
    per_race = np.asarray(per_race, dtype=float)
    idx = _subset(subset, per_race.shape[-1])
    return np.abs(per_race[..., idx]).mean(axis=-1)


def average_sd(params: ParameterSet, data: PreparedDataset,
               subset: Sequence[int] | None = None) -> np.ndarray:
    idx = _subset(subset, data.race_count)
    return race_sd(params, data)[..., idx].mean(axis=-1)


def posterior_summary(x: np.ndarray) -> dict:
    """Mean, sd and 50% / 95% central intervals over a 1-d array of draws."""
    x = np.asarray(x, dtype=float).ravel()
    q = np.percentile(x, INTERVAL_LEVELS)
    return {
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "q2.5": float(q[0]), "q25": float(q[1]), "q75": float(q[2]), "q97.5": float(q[3]),
    }


@dataclass
class BiasReport:
    """Per-draw per-race biases (pp) for every kind the model supports."""
    data: PreparedDataset
    model: str
    biases: dict           # BiasKind -> (draws, races)
    sd: np.ndarray         # (draws, races)
    alpha2: np.ndarray | None

    @property
    def kinds(self) -> list[BiasKind]:
        return list(self.biases)

    def subsets(self) -> dict[str, np.ndarray]:
        """Race subsets keyed by column name: each year, then All."""
        years = np.array([r.year for r in self.data.races])
        out = {str(y): np.flatnonzero(years == y) for y in self.data.years}
        out["All"] = np.arange(self.data.race_count)
        return out


def bias_report(params: ParameterSet, data: PreparedDataset, model: str = "extended") -> BiasReport:
    kinds = list(BiasKind) if model == "extended" else [BiasKind.ALL, BiasKind.ELECTION_DAY]
    biases = {k: np.atleast_2d(race_bias(params, data, k)) for k in kinds}
    alpha2 = np.atleast_2d(params.alpha2) if model == "extended" else None
    return BiasReport(data, model, biases, np.atleast_2d(race_sd(params, data)), alpha2)


_KIND_ROWS = {
    BiasKind.ALL: ROW_ALL,
    BiasKind.ELECTION_DAY: ROW_ELECTION_DAY,
    BiasKind.UNDECIDED: ROW_UNDECIDED,
    BiasKind.HOUSE: ROW_HOUSE,
}


def summary_tables(report: BiasReport) -> dict:
    """Rows named as in the published tables, columns per year plus All."""
    tables: dict[str, dict] = {}
    subsets = report.subsets()
    for kind, b in report.biases.items():
        tables[_KIND_ROWS[kind]] = {c: posterior_summary(average_abs_bias(b, s))
                                    for c, s in subsets.items()}
    tables[ROW_SD] = {c: posterior_summary(report.sd[:, s].mean(axis=1))
                      for c, s in subsets.items()}
    if report.alpha2 is not None:
        tables[ROW_UNDECIDED_LEVEL] = {c: posterior_summary(PP * report.alpha2[:, s].mean(axis=1))
                                       for c, s in subsets.items()}
    return tables


def race_rows(report: BiasReport) -> list[dict]:
    """Long-format per-race summaries (one row per race and quantity)."""
    rows = []
    quantities = [(k.value, b) for k, b in report.biases.items()] + [("sd", report.sd)]
    for r, race in enumerate(report.data.races):
        group = race.margin_group.value
        for name, values in quantities:
            rows.append({"race": race.label, "state": race.state, "year": race.year,
                         "margin_group": group, "quantity": name,
                         **posterior_summary(values[:, r])})
    return rows


def house_bias(params: ParameterSet, data: PreparedDataset) -> np.ndarray:
    """b_h per draw, in pp: shape (..., houses)."""
    a = data.arrays
    kap = np.asarray(params.kappa)
    out = np.zeros(kap.shape[:-1] + (data.house_count,))
    for h in range(data.house_count):
        m = a.house == h
        v = data.outcomes[a.race[m]]
        shift = expit(a.logit_v[m] + kap[..., h:h + 1]) - v
        out[..., h] = PP * shift.mean(axis=-1)
    return out


def house_table(params: ParameterSet, data: PreparedDataset) -> list[dict]:
    b = np.atleast_2d(house_bias(params, data))
    counts = np.bincount(data.arrays.house[data.arrays.house >= 0], minlength=data.house_count)
    rows = []
    for h, name in enumerate(data.houses):
        col = b[:, h]
        rows.append({"pollster": name, "mean": float(col.mean()),
                     "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                     "polls": int(counts[h])})
    return rows


def gamma_intervals(params: ParameterSet, data: PreparedDataset) -> list[dict]:
    g = np.atleast_2d(params.gamma)
    rows = []
    for k, label in enumerate(data.group_labels):
        year, group = label.split("-", 1)
        col = g[:, k]
        q = np.percentile(col, INTERVAL_LEVELS)
        rows.append({"group": label, "year": int(year), "margin_group": group,
                     "mean": float(col.mean()), "q2.5": float(q[0]), "q25": float(q[1]),
                     "q75": float(q[2]), "q97.5": float(q[3])})
    return rows


# -- descriptive series ------------------------------------------------------

def rolling_undecided(polls: Iterable[PollRecord], election_date: dt.date,
                      half_width: int = 7, days: int = 90) -> list[tuple[dt.date, float]]:
    """Sample-size weighted mean undecided share over [x - w, x + w] for each day x."""
    pts = [(p.end_date.toordinal(), p.sample_size, p.und_share) for p in polls
           if p.und_share is not None]
    if not pts:
        return []
    d = np.array([p[0] for p in pts])
    n = np.array([p[1] for p in pts], dtype=float)
    u = np.array([p[2] for p in pts])
    out = []
    end = election_date.toordinal()
    for x in range(end - days, end + 1):
        m = (d >= x - half_width) & (d <= x + half_width)
        if m.any():
            out.append((dt.date.fromordinal(x), float(np.dot(n[m], u[m]) / n[m].sum())))
    return out


def group_scatter(data: PreparedDataset) -> list[dict]:
    """Raw per-race mean |y - v| (pp) against mean reported undecided (pp)."""
    a = data.arrays
    rows = []
    for r, race in enumerate(data.races):
        m = a.race == r
        err = PP * np.abs(a.y[m] - race.two_party_outcome).mean()
        u = a.u[m & a.has_u]
        rows.append({"race": race.label, "year": race.year,
                     "margin_group": race.margin_group.value,
                     "group": data.group_labels[data.race_group_index[r]],
                     "mean_abs_error": float(err),
                     "mean_undecided": float(PP * u.mean()) if u.size else None,
                     "polls": int(m.sum())})
    return rows


def histogram(values: Sequence[float], width: float = HIST_BIN_WIDTH) -> list[tuple[float, float, int]]:
    """Fixed-width bins anchored at 0 covering every value; counts sum to len(values)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return []
    lo = np.floor(x.min() / width)
    hi = np.floor(x.max() / width)
    k = np.floor(x / width) - lo
    counts = np.bincount(k.astype(int), minlength=int(hi - lo) + 1)
    return [((lo + i) * width, (lo + i + 1) * width, int(c)) for i, c in enumerate(counts)]


def histogram_rows(report: BiasReport | None, national: Sequence[PollRecord] = (),
                   width: float = HIST_BIN_WIDTH) -> list[dict]:
    """National undecided levels per year and per-race |undecided bias| per year."""
    rows = []
    by_year: dict[int, list[float]] = {}
    for p in national:
        if p.und_share is not None:
            by_year.setdefault(p.year, []).append(PP * p.und_share)
    for year in sorted(by_year):
        vals = by_year[year]
        for lo, hi, c in histogram(vals, width):
            rows.append({"series": "national_undecided", "year": year, "bin_lo": lo,
                         "bin_hi": hi, "count": c, "fraction": c / len(vals)})
    if report is not None and BiasKind.UNDECIDED in report.biases:
        per_race = np.abs(report.biases[BiasKind.UNDECIDED]).mean(axis=0)
        for year, idx in report.subsets().items():
            if year == "All":
                continue
            vals = per_race[idx]
            for lo, hi, c in histogram(vals, width):
                rows.append({"series": "undecided_bias", "year": int(year), "bin_lo": lo,
                             "bin_hi": hi, "count": c, "fraction": c / len(vals)})
    return rows


# -- output ----------------------------------------------------------------

SUMMARY_COLUMNS = ["mean", "sd", "q2.5", "q25", "q75", "q97.5"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def table_rows(tables: dict) -> list[dict]:
    return [{"row": row, "column": col, **stats}
            for row, cols in tables.items() for col, stats in cols.items()]


@dataclass
class SummaryBundle:
    tables: dict
    races: list[dict]
    houses: list[dict]
    gamma: list[dict]
    rolling: list[dict]
    scatter: list[dict]
    histograms: list[dict]
    meta: dict

    def to_json(self) -> dict:
        return {"tables": self.tables, "houses": self.houses, "gamma": self.gamma,
                **self.meta}


def summarize(params: ParameterSet, data: PreparedDataset, model: str = "extended",
              national: Sequence[PollRecord] = (),
              election_dates: dict[int, dt.date] | None = None,
              width: float = HIST_BIN_WIDTH, meta: dict | None = None) -> SummaryBundle:
    report = bias_report(params, data, model)
    extended = model == "extended"
    rolling = []
    if national:
        dates = election_dates or {}
        years = sorted({p.year for p in national})
        for year in years:
            day = dates.get(year)
            if day is None:
                continue
            polls = [p for p in national if p.year == year]
            for d, v in rolling_undecided(polls, day):
                rolling.append({"year": year, "date": d.isoformat(),
                                "days_to_election": (day - d).days, "undecided": PP * v})
    return SummaryBundle(
        tables=summary_tables(report),
        races=race_rows(report),
        houses=house_table(params, data) if extended else [],
        gamma=gamma_intervals(params, data) if extended else [],
        rolling=rolling,
        scatter=group_scatter(data),
        histograms=histogram_rows(report, national, width),
        meta={"model": model, "allocation_mode": data.allocation_mode.value,
              "draws": int(np.atleast_2d(params.alpha1).shape[0]),
              "races": data.race_count, "polls": len(data.polls), **(meta or {})},
    )


OUTPUT_FILES = ("bias_report.csv", "house_table.csv", "gamma_intervals.csv",
                "rolling_undecided.csv", "group_scatter.csv", "histograms.csv", "report.json")


def write_summaries(out: Path, bundle: SummaryBundle) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    # set-level table rows first, then one row per race and quantity
    cols = ["level", "scope", "year", "margin_group", "quantity"] + SUMMARY_COLUMNS
    table = [dict(r, level="set", scope=r["column"], quantity=r["row"])
             for r in table_rows(bundle.tables)]
    races = [dict(r, level="race", scope=r["race"]) for r in bundle.races]
    write_csv(out / "bias_report.csv", table + races, cols)
    write_csv(out / "house_table.csv", bundle.houses, ["pollster", "mean", "sd", "polls"])
    write_csv(out / "gamma_intervals.csv", bundle.gamma,
              ["group", "year", "margin_group", "mean", "q2.5", "q25", "q75", "q97.5"])
    write_csv(out / "rolling_undecided.csv", bundle.rolling,
              ["year", "date", "days_to_election", "undecided"])
    write_csv(out / "group_scatter.csv", bundle.scatter,
              ["race", "year", "margin_group", "group", "mean_abs_error", "mean_undecided",
               "polls"])
    write_csv(out / "histograms.csv", bundle.histograms,
              ["series", "year", "bin_lo", "bin_hi", "count", "fraction"])
    (out / "report.json").write_text(json.dumps(bundle.to_json(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return [out / f for f in OUTPUT_FILES]
