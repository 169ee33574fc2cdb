import datetime as dt

import numpy as np
import pytest

from pollbias.data import PollRecord, RaceResult, prepare_dataset
from pollbias.synthetic import RaceSpec, ScenarioSpec, generate

ELECTION = dt.date(2016, 11, 8)


def poll(pid, state="AZ", days=10, R=0.48, D=0.42, U=0.06, n=800, pollster="", year=2016,
         other=None, election=ELECTION):
    return PollRecord(poll_id=pid, state=state, year=year,
                      end_date=election - dt.timedelta(days=days), sample_size=n,
                      rep_share=R, dem_share=D, und_share=U, other_share=other,
                      pollster=pollster)


def result(state="AZ", rep=520, dem=480, year=2016, election=ELECTION):
    return RaceResult(state=state, year=year, election_date=election, rep_votes=rep,
                      dem_votes=dem)


def small_spec(seed=0, n_races=10, polls_per_race=8, **kw):
    rng = np.random.default_rng(seed)
    races = [RaceSpec(state=s, year=2016, outcome=float(rng.uniform(0.4, 0.6)),
                      alpha1=float(rng.normal(0, 0.05)), beta1=float(rng.normal(0, 0.05)),
                      tau1_sq=1e-4, alpha2=float(rng.uniform(0.03, 0.08)), beta2=0.01,
                      tau2_sq=1e-4)
             for s in ["AZ", "CO", "FL", "GA", "IA", "MI", "NC", "NV", "OH", "PA",
                       "TX", "VA", "WI", "MN", "NH"][:n_races]]
    base = dict(races=races, polls_per_race=polls_per_race, sample_size=(500, 1200),
                pollsters={"Alpha": 0.02, "Beta": -0.03}, unhoused_share=0.25,
                gamma={"2016-Close": 0.4}, seed=seed, min_polls_per_house=8)
    base.update(kw)
    return ScenarioSpec(**base)


@pytest.fixture(scope="session")
def small_data():
    data, truth = generate(small_spec())
    return data


@pytest.fixture(scope="session")
def small_truth():
    return generate(small_spec())


@pytest.fixture
def two_race_polls():
    polls = [poll(f"AZ{i}", "AZ", days=2 + 5 * i, pollster="Big" if i < 4 else "")
             for i in range(5)]
    polls += [poll(f"OH{i}", "OH", days=3 + 6 * i, R=0.45, D=0.47, U=0.05, pollster="Big")
              for i in range(5)]
    return polls


@pytest.fixture
def two_race_results():
    return [result("AZ", 520, 480), result("OH", 470, 530)]


@pytest.fixture
def two_race_data(two_race_polls, two_race_results):
    return prepare_dataset(two_race_polls, two_race_results, "proportional")


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
