"""Forward simulation of poll datasets with known parameters."""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .allocation import AllocationMode
from .data import (MarginGroup, PollRecord, PreparedDataset, RaceResult, margin_group,
                   prepare_dataset)
from .model import UNDECIDED_SCALE, ParameterSet

VOTE_TOTAL = 10_000_000
SHARE_EPS = 1e-6


class ScenarioError(ValueError):
    pass


def election_day(year: int) -> dt.date:
    """US general election: the Tuesday after the first Monday of November."""
    d = dt.date(year, 11, 2)
    while d.weekday() != 1:
        d += dt.timedelta(days=1)
    return d


@dataclass
class RaceSpec:
    state: str
    year: int
    outcome: float
    alpha1: float = 0.0
    beta1: float = 0.0
    tau1_sq: float = 0.0
    alpha2: float = 0.04
    beta2: float = 0.0
    tau2_sq: float = 1e-4


@dataclass
class ScenarioSpec:
    races: list[RaceSpec]
    polls_per_race: int = 12
    sample_size: tuple[int, int] = (400, 1500)
    window_days: int = 35
    undecided_report_rate: float = 1.0
    # pollster name -> true house effect (logit scale)
    pollsters: dict[str, float] = field(default_factory=dict)
    unhoused_share: float = 0.0
    # group label "YEAR-Margin" -> true allocation bias; missing groups are 0
    gamma: dict[str, float] = field(default_factory=dict)
    mode: str = "proportional"
    min_polls_per_race: int = 5
    min_polls_per_house: int = 8
    seed: int = 0

    def validate(self) -> None:
        if not self.races:
            raise ScenarioError("scenario has no races")
        if self.polls_per_race < self.min_polls_per_race:
            raise ScenarioError(f"{self.polls_per_race} polls per race is below the "
                                f"minimum of {self.min_polls_per_race}")
        lo, hi = self.sample_size
        if not 1 <= lo <= hi:
            raise ScenarioError("sample_size must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.undecided_report_rate <= 1.0:
            raise ScenarioError("undecided_report_rate must lie in [0, 1]")
        if not 0.0 <= self.unhoused_share < 1.0:
            raise ScenarioError("unhoused_share must lie in [0, 1)")
        mode = AllocationMode(self.mode)
        if mode is AllocationMode.EVEN and self.undecided_report_rate < 1.0:
            raise ScenarioError("even allocation needs every poll to report undecideds")
        keys = [(r.state, r.year) for r in self.races]
        if len(set(keys)) != len(keys):
            raise ScenarioError("duplicate race")
        for r in self.races:
            if not 0.0 < r.outcome < 1.0:
                raise ScenarioError(f"outcome for {r.state}-{r.year} outside (0, 1)")
            if r.tau1_sq < 0 or r.tau2_sq < 0:
                raise ScenarioError("variances must be nonnegative")
        if self.pollsters:
            housed = self.total_polls - self.unhoused_count
            if housed // len(self.pollsters) < self.min_polls_per_house:
                raise ScenarioError("too few polls per pollster for a house effect")

    @property
    def total_polls(self) -> int:
        return self.polls_per_race * len(self.races)

    @property
    def unhoused_count(self) -> int:
        if not self.pollsters:
            return self.total_polls
        return int(round(self.unhoused_share * self.total_polls))

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["races"] = [RaceSpec(**r) for r in d["races"]]
        if "sample_size" in d:
            d["sample_size"] = tuple(d["sample_size"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_size"] = list(self.sample_size)
        return d


@dataclass
class Simulation:
    dataset: PreparedDataset
    truth: ParameterSet
    polls: list[PollRecord]
    results: list[RaceResult]
    truncated_y: int
    truncated_u: int

    @property
    def truncation_rate(self) -> float:
        n = max(len(self.polls), 1)
        return (self.truncated_y + self.truncated_u) / (2 * n)


def _race_result(r: RaceSpec) -> RaceResult:
    rep = int(round(r.outcome * VOTE_TOTAL))
    return RaceResult(r.state, r.year, election_day(r.year), rep, VOTE_TOTAL - rep)


def simulate(spec: ScenarioSpec) -> Simulation:
    """Draw polls from the generative model; fully determined by ``spec.seed``."""
    spec.validate()
    mode = AllocationMode(spec.mode)
    rng = np.random.default_rng(spec.seed)
    results = [_race_result(r) for r in spec.races]
    years = sorted({r.year for r in spec.races})

    n_total = spec.total_polls
    names = sorted(spec.pollsters)
    pollster = np.empty(n_total, dtype=object)
    unhoused = np.zeros(n_total, dtype=bool)
    if names:
        unhoused[rng.permutation(n_total)[:spec.unhoused_count]] = True
        housed_idx = np.flatnonzero(~unhoused)
        for k, i in enumerate(housed_idx):
            pollster[i] = names[k % len(names)]
    for i in np.flatnonzero(unhoused):
        pollster[i] = f"Solo {i:05d}"

    polls: list[PollRecord] = []
    trunc_y = trunc_u = 0
    lo, hi = spec.sample_size
    k = 0
    for race, res in zip(spec.races, results):
        v = res.two_party_outcome
        g_label = f"{race.year}-{margin_group(res.rep_votes, res.dem_votes).value}"
        gamma = spec.gamma.get(g_label, 0.0)
        for _ in range(spec.polls_per_race):
            days = int(rng.integers(0, spec.window_days + 1))
            t = days / spec.window_days
            n = int(rng.integers(lo, hi + 1))
            name = pollster[k]
            kappa = spec.pollsters.get(name, 0.0)

            u = race.alpha2 + t * race.beta2 + math.sqrt(race.tau2_sq) * rng.standard_normal()
            if not 0.0 <= u <= 1.0:
                trunc_u += 1
                u = min(max(u, 0.0), 1.0)
            eta = logit(v) + race.alpha1 + t * race.beta1 \
                - UNDECIDED_SCALE * race.alpha2 * gamma + kappa
            p = float(expit(eta))
            sd = math.sqrt(p * (1 - p) / n + race.tau1_sq)
            y = p + sd * rng.standard_normal()
            if not SHARE_EPS <= y <= 1 - SHARE_EPS:
                trunc_y += 1
                y = min(max(y, SHARE_EPS), 1 - SHARE_EPS)
            reported = rng.uniform() < spec.undecided_report_rate

            if mode is AllocationMode.EVEN:
                # y = (R + U/2) / (R + D + U) with R + D + U = 1
                R = y - 0.5 * u
                if R < 0 or R > 1 - u:
                    trunc_y += 1
                    R = min(max(R, 0.0), 1 - u)
                D = 1.0 - u - R
            else:
                R, D = y * (1 - u), (1 - y) * (1 - u)
            polls.append(PollRecord(
                poll_id=f"S{k:06d}",
                state=race.state,
                year=race.year,
                end_date=res.election_date - dt.timedelta(days=days),
                sample_size=n,
                rep_share=R,
                dem_share=D,
                und_share=u if reported else None,
                other_share=None,
                pollster=name,
            ))
            k += 1

    data = prepare_dataset(polls, results, mode, spec.window_days,
                           spec.min_polls_per_race, spec.min_polls_per_house)
    truth = _truth(spec, data, years)
    return Simulation(data, truth, polls, results, trunc_y, trunc_u)


def generate(spec: ScenarioSpec) -> tuple[PreparedDataset, ParameterSet]:
    sim = simulate(spec)
    return sim.dataset, sim.truth


def _truth(spec: ScenarioSpec, data: PreparedDataset, years: list[int]) -> ParameterSet:
    by_label = {f"{r.state}-{r.year}": r for r in spec.races}
    races = [by_label[lab] for lab in data.race_labels]

    def per_race(attr):
        return np.array([getattr(r, attr) for r in races], dtype=float)

    alpha1, beta1, alpha2, beta2 = (per_race(a) for a in ("alpha1", "beta1", "alpha2", "beta2"))
    tau1, tau2 = per_race("tau1_sq"), per_race("tau2_sq")
    gamma = np.array([spec.gamma.get(lab, 0.0) for lab in data.group_labels])
    kappa = np.array([spec.pollsters[h] for h in data.houses])
    year_idx = data.race_year_index
    phi = np.array([alpha2[year_idx == j].mean() for j in range(data.year_count)])

    def sd(a):
        return max(float(np.std(a)), 1e-3)

    return ParameterSet(
        alpha1=alpha1, beta1=beta1, tau1_sq=tau1, alpha2=alpha2, beta2=beta2, tau2_sq=tau2,
        gamma=gamma, kappa=kappa, phi=phi,
        mu1_alpha=float(alpha1.mean()), sigma1_alpha=sd(alpha1),
        mu1_beta=float(beta1.mean()), sigma1_beta=sd(beta1),
        sigma1_tau=max(float(np.sqrt(np.mean(tau1 ** 2))), 1e-3),
        mu_kappa=float(kappa.mean()) if kappa.size else 0.0,
        sigma_kappa=sd(kappa) if kappa.size else 0.05,
        sigma2_alpha=sd(alpha2 - phi[year_idx]),
        mu2_beta=float(beta2.mean()), sigma2_beta=sd(beta2),
        sigma2_tau=max(float(np.sqrt(np.mean(tau2 ** 2))), 1e-4),
    )


STATE_CODES = ("AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "ID", "IL",
               "IN", "IA", "KS", "KY", "LA", "ME", "MD", "MA", "MI", "MN", "MS", "MO", "MT",
               "NE", "NV", "NH", "NJ", "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA", "RI",
               "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY")


def recovery_scenario(seed: int, n_races: int = 20, polls_per_race: int = 12, year: int = 2016,
                      mode: str = "proportional", undecided_report_rate: float = 1.0
                      ) -> ScenarioSpec:
    """Single-year scenario with one third of races in each margin group.

    Allocation bias is 0 / 0.5 / 1.0 in the StrongRep / Close / StrongDem
    groups; five pollsters carry house effects between -0.1 and 0.1.
    """
    rng = np.random.default_rng([seed, 7919])
    margins = [MarginGroup.STRONG_REP, MarginGroup.CLOSE, MarginGroup.STRONG_DEM]
    outcome_ranges = {
        MarginGroup.STRONG_REP: (0.54, 0.62),
        MarginGroup.CLOSE: (0.48, 0.52),
        MarginGroup.STRONG_DEM: (0.38, 0.46),
    }
    races = []
    for i in range(n_races):
        m = margins[i % 3]
        races.append(RaceSpec(
            state=STATE_CODES[i],
            year=year,
            outcome=float(rng.uniform(*outcome_ranges[m])),
            alpha1=float(rng.uniform(-0.1, 0.1)),
            beta1=float(rng.normal(0.0, 0.05)),
            tau1_sq=float(rng.uniform(0.0, 2e-4)),
            alpha2=float(rng.uniform(0.03, 0.15)),
            beta2=float(rng.normal(0.01, 0.005)),
            tau2_sq=float(rng.uniform(1e-5, 3e-5)),
        ))
    return ScenarioSpec(
        races=races,
        polls_per_race=polls_per_race,
        sample_size=(500, 1500),
        undecided_report_rate=undecided_report_rate,
        pollsters={"House A": -0.1, "House B": -0.05, "House C": 0.0, "House D": 0.05,
                   "House E": 0.1},
        gamma={f"{year}-StrongRep": 0.0, f"{year}-Close": 0.5, f"{year}-StrongDem": 1.0},
        mode=mode,
        seed=seed,
    )
