import dataclasses
import datetime as dt
import json
import random

import pytest

from conftest import ELECTION, poll, result
from pollbias.data import (DataError, MarginGroup, PollSchema, margin_group, parse_polls,
                           parse_results, prepare_dataset, write_polls, write_results)

HEADER = "poll_id,state,year,end_date,pollster,sample_size,rep,dem,und,other\n"


def write_csv(tmp_path, body, units="percent", name="polls.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    (tmp_path / (path.stem + ".schema.json")).write_text(json.dumps({"units": units}))
    return path


def test_percent_row_becomes_fractions(tmp_path):
    path = write_csv(tmp_path, "p1,AZ,2016,2016-10-30,Acme,800,48,42,6,\n")
    recs, rejects = parse_polls(path)
    assert rejects == []
    assert recs[0].rep_share == pytest.approx(0.48)
    assert recs[0].und_share == pytest.approx(0.06)
    assert recs[0].other_share is None


def test_remainder_rule_fills_undecided(tmp_path):
    path = write_csv(tmp_path, "p1,AZ,2016,2016-10-30,Acme,800,48,42,,4\n")
    recs, _ = parse_polls(path)
    assert recs[0].und_share == pytest.approx(0.06, abs=1e-12)


def test_fraction_units(tmp_path):
    path = write_csv(tmp_path, "p1,AZ,2016,2016-10-30,Acme,800,0.48,0.42,0.06,\n",
                     units="fraction")
    recs, _ = parse_polls(path)
    assert recs[0].rep_share == 0.48


@pytest.mark.parametrize("row,reason", [
    ("p1,AZ,2016,2016-10-30,Acme,0,48,42,6,", "nonpositive sample size"),
    ("p1,AZ,2016,2016-10-30,Acme,,48,42,6,", "missing sample size"),
    ("p1,AZ,2016,30/10/2016,Acme,800,48,42,6,", "unparseable end_date"),
    ("p1,AZ,2016,2016-10-30,Acme,800,58,42,6,", "shares sum to more than 100%"),
    ("p1,AZ,2016,2016-10-30,Acme,800,0,0,60,", "no two-party support"),
])
def test_bad_rows_rejected_with_reason(tmp_path, row, reason):
    path = write_csv(tmp_path, row + "\np2,AZ,2016,2016-10-30,Acme,800,48,42,6,\n")
    recs, rejects = parse_polls(path)
    assert [r.poll_id for r in recs] == ["p2"]
    assert len(rejects) == 1 and rejects[0].reason == reason and rejects[0].row == 2


def test_duplicate_poll_id_rejected(tmp_path):
    path = write_csv(tmp_path, "p1,AZ,2016,2016-10-30,A,800,48,42,6,\n"
                               "p1,AZ,2016,2016-10-29,A,800,48,42,6,\n")
    recs, rejects = parse_polls(path)
    assert len(recs) == 1 and rejects[0].reason == "duplicate poll_id"


def test_missing_header_column(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("poll_id,state\n")
    with pytest.raises(DataError, match="header"):
        parse_polls(path, PollSchema())


def test_schema_column_mapping(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("id,st,yr,date,org,n,r,d,u,o\np1,AZ,2016,2016-10-30,A,800,48,42,6,\n")
    cols = dict(zip(["poll_id", "state", "year", "end_date", "pollster", "sample_size", "rep",
                     "dem", "und", "other"], ["id", "st", "yr", "date", "org", "n", "r", "d",
                                              "u", "o"]))
    recs, _ = parse_polls(path, PollSchema(columns=cols))
    assert recs[0].pollster == "A"


def test_margin_boundary_is_close():
    # 53 : 47 is exactly 6 points
    assert margin_group(53, 47) is MarginGroup.CLOSE
    assert margin_group(5301, 4699) is MarginGroup.STRONG_REP
    assert margin_group(4699, 5301) is MarginGroup.STRONG_DEM
    assert margin_group(5295, 4705) is MarginGroup.CLOSE


def race_polls(state, k, start=1, **kw):
    return [poll(f"{state}{i}", state, days=start + i, **kw) for i in range(k)]


def test_race_with_four_polls_dropped():
    polls = race_polls("AZ", 5) + race_polls("OH", 4)
    data = prepare_dataset(polls, [result("AZ"), result("OH")], "proportional")
    assert data.race_labels == ["AZ-2016"]
    assert sum(r.reason.startswith("race has fewer") for r in data.excluded) == 4


def test_window_excludes_day_40_and_scales_time():
    polls = race_polls("AZ", 5, start=3) + [poll("old", "AZ", days=40), poll("wk", "AZ", days=7)]
    data = prepare_dataset(polls, [result("AZ")], "proportional")
    ids = {p.record.poll_id: p for p in data.polls}
    assert "old" not in ids
    assert ids["wk"].t == pytest.approx(0.2)
    assert all(0.0 <= p.t <= 1.0 for p in data.polls)


def test_window_filter_runs_before_count_filter():
    # five polls, one outside the window: the race falls below the threshold
    polls = race_polls("AZ", 4) + [poll("far", "AZ", days=36)]
    with pytest.raises(DataError, match="no polls survive"):
        prepare_dataset(polls, [result("AZ")], "proportional")


def test_unmatched_poll_is_rejected():
    polls = race_polls("AZ", 5) + [poll("x", "TX")]
    data = prepare_dataset(polls, [result("AZ")], "proportional")
    assert [r.poll_id for r in data.rejects] == ["x"]


def test_even_mode_drops_missing_undecided_before_count():
    polls = race_polls("AZ", 5) + race_polls("OH", 5)
    polls[5] = dataclasses.replace(polls[5], und_share=None)
    prop = prepare_dataset(polls, [result("AZ"), result("OH")], "proportional")
    even = prepare_dataset(polls, [result("AZ"), result("OH")], "even")
    assert prop.race_count == 2
    assert even.race_labels == ["AZ-2016"]
    assert all(p.u is not None for p in even.polls)


def test_proportional_keeps_polls_without_undecided():
    polls = race_polls("AZ", 5)
    polls[0] = dataclasses.replace(polls[0], und_share=None)
    data = prepare_dataset(polls, [result("AZ")], "proportional")
    assert len(data.polls) == 5
    assert int(data.arrays.has_u.sum()) == 4


def test_house_threshold_and_count_consistency():
    polls = (race_polls("AZ", 6, pollster="Big") + race_polls("OH", 3, pollster="Big")
             + race_polls("OH", 3, start=10, pollster="Small")[:3])
    polls = [dataclasses.replace(p, poll_id=f"id{i}") for i, p in enumerate(polls)]
    data = prepare_dataset(polls, [result("AZ"), result("OH")], "proportional")
    assert data.houses == ("Big",)
    housed = [p for p in data.polls if p.house_index is not None]
    assert len(housed) == 9
    assert all(p.record.pollster == "Big" for p in housed)


def test_derived_values():
    data = prepare_dataset(race_polls("AZ", 5), [result("AZ")], "proportional")
    p = data.polls[0]
    assert p.y == pytest.approx(0.48 / 0.90)
    assert p.u == pytest.approx(0.06 / 0.96)
    even = prepare_dataset(race_polls("AZ", 5), [result("AZ")], "even")
    assert even.polls[0].y == pytest.approx((0.48 + 0.03) / 0.96)


def test_order_independence():
    polls = race_polls("AZ", 6, pollster="A") + race_polls("OH", 6, pollster="B")
    polls = [dataclasses.replace(p, poll_id=f"id{i:02d}") for i, p in enumerate(polls)]
    results = [result("AZ"), result("OH")]
    a = prepare_dataset(polls, results, "proportional", min_polls_per_house=3)
    shuffled = polls[:]
    random.Random(4).shuffle(shuffled)
    b = prepare_dataset(shuffled, results[::-1], "proportional", min_polls_per_house=3)
    assert a == b


def test_filter_idempotence(tmp_path):
    polls = race_polls("AZ", 6, pollster="A") + race_polls("OH", 4) + [poll("z", "AZ", days=50)]
    polls = [dataclasses.replace(p, poll_id=f"id{i:02d}") for i, p in enumerate(polls)]
    results = [result("AZ"), result("OH")]
    first = prepare_dataset(polls, results, "proportional", min_polls_per_house=3)
    write_polls(tmp_path / "p.csv", first.records())
    write_results(tmp_path / "r.csv", first.races)
    recs, rejects = parse_polls(tmp_path / "p.csv")
    second = prepare_dataset(recs, parse_results(tmp_path / "r.csv"), "proportional",
                             min_polls_per_house=3)
    assert rejects == []
    assert second.polls == first.polls
    assert second.races == first.races and second.houses == first.houses


def test_results_outcome_and_group():
    r = result("AZ", 600, 400)
    assert r.two_party_outcome == 0.6 and r.margin_group is MarginGroup.STRONG_REP
    with pytest.raises(DataError):
        result("AZ", 0, 400)


def test_poll_after_election_excluded():
    polls = race_polls("AZ", 5) + [poll("late", "AZ", days=-1)]
    data = prepare_dataset(polls, [result("AZ")], "proportional")
    assert "late" in {r.poll_id for r in data.excluded}


def test_group_index_by_year_and_margin():
    e12 = dt.date(2012, 11, 6)
    polls = race_polls("AZ", 5) + [poll(f"o{i}", "OH", year=2012, days=i + 1, election=e12)
                                   for i in range(5)]
    data = prepare_dataset(polls, [result("AZ", 600, 400), result("OH", 490, 510, 2012, e12)],
                           "proportional")
    assert data.group_labels[:3] == ["2012-StrongRep", "2012-Close", "2012-StrongDem"]
    assert list(data.race_group_index) == [3, 1]
    assert ELECTION.year == 2016
