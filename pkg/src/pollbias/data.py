"""Poll and election-result ingestion, inclusion rules and model indexing."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .allocation import AllocationError, AllocationMode, two_party_share

POLL_FIELDS = ("poll_id", "state", "year", "end_date", "pollster", "sample_size",
               "rep", "dem", "und", "other")
RESULT_FIELDS = ("state", "year", "election_date", "rep_votes", "dem_votes")
SHARE_TOLERANCE = 1e-9
CLOSE_MARGIN_PCT = 6


class DataError(ValueError):
    pass


class MarginGroup(str, enum.Enum):
    STRONG_REP = "StrongRep"
    CLOSE = "Close"
    STRONG_DEM = "StrongDem"

    @property
    def index(self) -> int:
        return _MARGIN_ORDER.index(self)


_MARGIN_ORDER = (MarginGroup.STRONG_REP, MarginGroup.CLOSE, MarginGroup.STRONG_DEM)


def margin_group(rep_votes: float, dem_votes: float,
                 threshold_pct: float = CLOSE_MARGIN_PCT) -> MarginGroup:
    """Classify a race by its two-party margin.

    Exact rational arithmetic, so a margin of exactly ``threshold_pct`` is
    Close regardless of float rounding.
    """
    rep = Fraction(str(rep_votes))
    dem = Fraction(str(dem_votes))
    total = rep + dem
    if total <= 0:
        raise DataError("race has no two-party votes")
    margin = (rep - dem) * 100 / total
    limit = Fraction(str(threshold_pct))
    if abs(margin) <= limit:
        return MarginGroup.CLOSE
    return MarginGroup.STRONG_REP if margin > 0 else MarginGroup.STRONG_DEM


@dataclass(frozen=True)
class PollRecord:
    poll_id: str
    state: str
    year: int
    end_date: dt.date
    sample_size: int
    rep_share: float
    dem_share: float
    und_share: float | None = None
    other_share: float | None = None
    pollster: str = ""

    def __post_init__(self):
        if self.sample_size < 1:
            raise DataError("nonpositive sample size")
        shares = [self.rep_share, self.dem_share, self.und_share, self.other_share]
        present = [s for s in shares if s is not None]
        if any(not (0.0 <= s <= 1.0) for s in present):
            raise DataError("share outside [0, 1]")
        if sum(present) > 1.0 + SHARE_TOLERANCE:
            raise DataError("shares sum to more than 100%")


@dataclass(frozen=True)
class RaceResult:
    state: str
    year: int
    election_date: dt.date
    rep_votes: float
    dem_votes: float

    def __post_init__(self):
        if self.rep_votes < 0 or self.dem_votes < 0:
            raise DataError("negative vote count")
        if not 0.0 < self.two_party_outcome < 1.0:
            raise DataError(f"two-party outcome for {self.label} not inside (0, 1)")

    @property
    def key(self) -> tuple[str, int]:
        return (self.state, self.year)

    @property
    def label(self) -> str:
        return f"{self.state}-{self.year}"

    @property
    def two_party_outcome(self) -> float:
        total = self.rep_votes + self.dem_votes
        if total <= 0:
            return math.nan
        return self.rep_votes / total

    @property
    def margin_group(self) -> MarginGroup:
        return margin_group(self.rep_votes, self.dem_votes)


@dataclass(frozen=True)
class Reject:
    row: int | None
    poll_id: str
    reason: str


@dataclass(frozen=True)
class PollSchema:
    """Column mapping for a polls CSV plus the share units.

    ``units`` is "percent" (0-100) or "fraction" (0-1). It is never guessed.
    """
    columns: dict = field(default_factory=lambda: {f: f for f in POLL_FIELDS})
    units: str = "percent"

    def __post_init__(self):
        if self.units not in ("percent", "fraction"):
            raise DataError(f"unknown share units {self.units!r}")
        missing = set(POLL_FIELDS) - set(self.columns)
        if missing:
            raise DataError(f"schema lacks columns: {sorted(missing)}")

    @property
    def scale(self) -> float:
        return 100.0 if self.units == "percent" else 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "PollSchema":
        columns = {f: f for f in POLL_FIELDS}
        columns.update(d.get("columns", {}))
        return cls(columns=columns, units=d.get("units", "percent"))

    def to_dict(self) -> dict:
        return {"units": self.units, "columns": dict(self.columns)}

    @classmethod
    def load(cls, path: str | Path) -> "PollSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sidecar_path(polls_path: str | Path) -> Path:
    p = Path(polls_path)
    return p.with_name(p.stem + ".schema.json")


def _blank(value: str | None) -> bool:
    return value is None or value.strip() == "" or value.strip().upper() in ("NA", "NAN")


def _parse_date(value: str) -> dt.date:
    return dt.date.fromisoformat(value.strip())


def _row_to_record(row: dict, schema: PollSchema) -> PollRecord:
    col = schema.columns
    poll_id = (row.get(col["poll_id"]) or "").strip()
    state = (row.get(col["state"]) or "").strip().upper()
    if len(state) != 2 or not state.isalpha():
        raise DataError(f"bad state code {state!r}")
    try:
        year = int(row[col["year"]])
    except (TypeError, ValueError, KeyError):
        raise DataError("unparseable year") from None
    try:
        end_date = _parse_date(row[col["end_date"]])
    except (TypeError, ValueError, KeyError, AttributeError):
        raise DataError("unparseable end_date") from None

    raw_n = row.get(col["sample_size"])
    if _blank(raw_n):
        raise DataError("missing sample size")
    try:
        n = float(raw_n)
    except ValueError:
        raise DataError("unparseable sample size") from None
    if not n > 0:
        raise DataError("nonpositive sample size")
    if n != int(n):
        raise DataError("non-integer sample size")

    def share(name: str, required: bool) -> float | None:
        raw = row.get(col[name])
        if _blank(raw):
            if required:
                raise DataError(f"missing {name} share")
            return None
        try:
            value = float(raw)
        except ValueError:
            raise DataError(f"unparseable {name} share") from None
        if not math.isfinite(value):
            raise DataError(f"unparseable {name} share")
        return value

    rep = share("rep", True)
    dem = share("dem", True)
    und = share("und", False)
    other = share("other", False)
    scale = schema.scale
    reported = [s for s in (rep, dem, und, other) if s is not None]
    if any(s < 0 or s > scale for s in reported):
        raise DataError("share out of range")
    total = sum(reported)
    if total > scale * (1.0 + SHARE_TOLERANCE):
        raise DataError("shares sum to more than 100%")
    if und is None and other is not None and total < scale:
        # third party reported but the row does not reach 100%: the remainder
        # is read as an undecided category
        und = scale - total
    if rep + dem <= 0:
        raise DataError("no two-party support")

    def frac(v):
        return None if v is None else v / scale

    return PollRecord(
        poll_id=poll_id,
        state=state,
        year=year,
        end_date=end_date,
        sample_size=int(n),
        rep_share=frac(rep),
        dem_share=frac(dem),
        und_share=frac(und),
        other_share=frac(other),
        pollster=(row.get(col["pollster"]) or "").strip(),
    )


def parse_polls(path: str | Path, schema: PollSchema | None = None
                ) -> tuple[list[PollRecord], list[Reject]]:
    """Read a polls CSV. Invalid rows come back as rejects, never dropped."""
    path = Path(path)
    if schema is None:
        side = sidecar_path(path)
        schema = PollSchema.load(side) if side.exists() else PollSchema()
    records: list[PollRecord] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = [schema.columns[f] for f in POLL_FIELDS if schema.columns[f] not in header]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            poll_id = (row.get(schema.columns["poll_id"]) or "").strip()
            try:
                if not poll_id:
                    raise DataError("missing poll_id")
                if poll_id in seen:
                    raise DataError("duplicate poll_id")
                rec = _row_to_record(row, schema)
            except DataError as exc:
                rejects.append(Reject(lineno, poll_id, str(exc)))
                continue
            seen.add(poll_id)
            records.append(rec)
    return records, rejects


def parse_results(path: str | Path) -> list[RaceResult]:
    results = []
    keys = set()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: header lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                res = RaceResult(
                    state=row["state"].strip().upper(),
                    year=int(row["year"]),
                    election_date=_parse_date(row["election_date"]),
                    rep_votes=_count(row["rep_votes"]),
                    dem_votes=_count(row["dem_votes"]),
                )
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if res.key in keys:
                raise DataError(f"{path}:{lineno}: duplicate race {res.label}")
            keys.add(res.key)
            results.append(res)
    return results


def _count(value: str) -> float:
    v = float(value)
    return int(v) if v == int(v) else v


def _fmt(value: float | None, scale: float = 1.0) -> str:
    if value is None:
        return ""
    return repr(float(value) * scale)


def write_polls(path: str | Path, polls: Iterable[PollRecord], units: str = "fraction") -> None:
    """Write records in the canonical polls schema plus a units sidecar."""
    schema = PollSchema(units=units)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POLL_FIELDS)
        for p in polls:
            w.writerow([p.poll_id, p.state, p.year, p.end_date.isoformat(), p.pollster,
                        p.sample_size, _fmt(p.rep_share, schema.scale),
                        _fmt(p.dem_share, schema.scale), _fmt(p.und_share, schema.scale),
                        _fmt(p.other_share, schema.scale)])
    sidecar_path(path).write_text(json.dumps(schema.to_dict(), indent=2, sort_keys=True) + "\n")


def write_results(path: str | Path, results: Iterable[RaceResult]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([r.state, r.year, r.election_date.isoformat(), r.rep_votes, r.dem_votes])


def write_rejects(path: str | Path, rejects: Iterable[Reject]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "poll_id", "reason"])
        for r in rejects:
            w.writerow(["" if r.row is None else r.row, r.poll_id, r.reason])


@dataclass(frozen=True)
class PreparedPoll:
    record: PollRecord
    y: float
    u: float | None
    t: float
    race_index: int
    group_index: int
    house_index: int | None


class PollArrays(NamedTuple):
    y: np.ndarray
    u: np.ndarray          # NaN where not reported
    has_u: np.ndarray
    t: np.ndarray
    n: np.ndarray
    race: np.ndarray
    group: np.ndarray
    house: np.ndarray      # -1 for polls without a house effect
    logit_v: np.ndarray    # per poll


@dataclass(frozen=True)
class PreparedDataset:
    polls: tuple[PreparedPoll, ...]
    races: tuple[RaceResult, ...]
    years: tuple[int, ...]
    houses: tuple[str, ...]
    allocation_mode: AllocationMode
    window_days: int
    excluded: tuple[Reject, ...] = ()
    rejects: tuple[Reject, ...] = ()

    @property
    def group_count(self) -> int:
        return 3 * len(self.years)

    @property
    def house_count(self) -> int:
        return len(self.houses)

    @property
    def race_count(self) -> int:
        return len(self.races)

    @property
    def year_count(self) -> int:
        return len(self.years)

    @property
    def group_labels(self) -> list[str]:
        return [f"{y}-{m.value}" for y in self.years for m in _MARGIN_ORDER]

    @property
    def race_labels(self) -> list[str]:
        return [r.label for r in self.races]

    @cached_property
    def race_year_index(self) -> np.ndarray:
        pos = {y: i for i, y in enumerate(self.years)}
        return np.array([pos[r.year] for r in self.races], dtype=np.intp)

    @cached_property
    def race_group_index(self) -> np.ndarray:
        return np.array([group_index(self.years, r) for r in self.races], dtype=np.intp)

    @cached_property
    def outcomes(self) -> np.ndarray:
        return np.array([r.two_party_outcome for r in self.races])

    @cached_property
    def arrays(self) -> PollArrays:
        polls = self.polls
        u = np.array([np.nan if p.u is None else p.u for p in polls])
        v = self.outcomes[np.array([p.race_index for p in polls], dtype=np.intp)] \
            if polls else np.zeros(0)
        arrs = PollArrays(
            y=np.array([p.y for p in polls]),
            u=u,
            has_u=~np.isnan(u),
            t=np.array([p.t for p in polls]),
            n=np.array([p.record.sample_size for p in polls], dtype=float),
            race=np.array([p.race_index for p in polls], dtype=np.intp),
            group=np.array([p.group_index for p in polls], dtype=np.intp),
            house=np.array([-1 if p.house_index is None else p.house_index for p in polls],
                           dtype=np.intp),
            logit_v=np.log(v) - np.log1p(-v),
        )
        for a in arrs:
            a.flags.writeable = False
        return arrs

    def records(self) -> list[PollRecord]:
        return [p.record for p in self.polls]

    def polls_in_race(self, r: int) -> list[PreparedPoll]:
        return [p for p in self.polls if p.race_index == r]


def group_index(years: Sequence[int], race: RaceResult) -> int:
    return list(years).index(race.year) * 3 + race.margin_group.index


def prepare_dataset(polls: Sequence[PollRecord], results: Sequence[RaceResult],
                    mode: AllocationMode | str = AllocationMode.PROPORTIONAL,
                    window_days: int = 35, min_polls_per_race: int = 5,
                    min_polls_per_house: int = 8) -> PreparedDataset:
    """Apply the inclusion rules and index polls for the model.

    Filters run once, in order: election window, (even mode) missing
    undecided, per-race poll count, then house assignment.
    """
    mode = AllocationMode(mode)
    if window_days < 1:
        raise DataError("window_days must be positive")
    by_key = {r.key: r for r in results}
    rejects: list[Reject] = []
    excluded: list[Reject] = []
    kept: list[tuple[PollRecord, RaceResult, int]] = []
    for p in polls:
        race = by_key.get((p.state, p.year))
        if race is None:
            rejects.append(Reject(None, p.poll_id, "no matching race"))
            continue
        days = (race.election_date - p.end_date).days
        if days < 0:
            excluded.append(Reject(None, p.poll_id, "after election day"))
            continue
        if days > window_days:
            excluded.append(Reject(None, p.poll_id, f"more than {window_days} days before election"))
            continue
        if mode is AllocationMode.EVEN and p.und_share is None:
            excluded.append(Reject(None, p.poll_id, "no undecided share (even allocation)"))
            continue
        kept.append((p, race, days))

    counts = Counter(race.key for _, race, _ in kept)
    surviving = []
    for p, race, days in kept:
        if counts[race.key] < min_polls_per_race:
            excluded.append(Reject(None, p.poll_id,
                                   f"race has fewer than {min_polls_per_race} polls"))
        else:
            surviving.append((p, race, days))
    if not surviving:
        raise DataError("no polls survive the inclusion rules")

    races = sorted({race.key: race for _, race, _ in surviving}.values(), key=lambda r: r.key)
    race_pos = {r.key: i for i, r in enumerate(races)}
    years = tuple(sorted({r.year for r in races}))
    pollster_counts = Counter(p.pollster for p, _, _ in surviving)
    houses = tuple(sorted(name for name, c in pollster_counts.items()
                          if name and c >= min_polls_per_house))
    house_pos = {h: i for i, h in enumerate(houses)}

    prepared = []
    for p, race, days in surviving:
        R, D, U = p.rep_share, p.dem_share, p.und_share
        try:
            y = two_party_share(R, D, U, mode)
        except AllocationError as exc:
            raise DataError(f"poll {p.poll_id}: {exc}") from None
        u = None if U is None or R + D + U <= 0 else U / (R + D + U)
        prepared.append(PreparedPoll(
            record=p,
            y=y,
            u=u,
            t=days / window_days,
            race_index=race_pos[race.key],
            group_index=group_index(years, race),
            house_index=house_pos.get(p.pollster),
        ))
    prepared.sort(key=lambda q: (q.race_index, q.record.end_date, q.record.poll_id))
    excluded.sort(key=lambda r: r.poll_id)
    rejects.sort(key=lambda r: r.poll_id)
    return PreparedDataset(
        polls=tuple(prepared),
        races=tuple(races),
        years=years,
        houses=houses,
        allocation_mode=mode,
        window_days=window_days,
        excluded=tuple(excluded),
        rejects=tuple(rejects),
    )


def write_prepared(path: str | Path, data: PreparedDataset) -> None:
    """Model-ready table: raw shares plus derived y, u, t and indices."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(POLL_FIELDS) + ["y", "u", "t", "race", "group", "house",
                                        "race_label", "group_label"])
        glabels = data.group_labels
        for p in data.polls:
            r = p.record
            w.writerow([r.poll_id, r.state, r.year, r.end_date.isoformat(), r.pollster,
                        r.sample_size, _fmt(r.rep_share), _fmt(r.dem_share),
                        _fmt(r.und_share), _fmt(r.other_share), repr(p.y), _fmt(p.u),
                        repr(p.t), p.race_index, p.group_index,
                        "" if p.house_index is None else p.house_index,
                        data.races[p.race_index].label, glabels[p.group_index]])


def write_races(path: str | Path, data: PreparedDataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["race", "label"] + list(RESULT_FIELDS) + ["two_party_outcome", "margin_group",
                                                              "group", "n_polls"])
        counts = Counter(p.race_index for p in data.polls)
        for i, r in enumerate(data.races):
            w.writerow([i, r.label, r.state, r.year, r.election_date.isoformat(), r.rep_votes,
                        r.dem_votes, repr(r.two_party_outcome), r.margin_group.value,
                        int(data.race_group_index[i]), counts[i]])
