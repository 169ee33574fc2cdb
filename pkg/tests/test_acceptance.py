"""Exit criteria, each at its stated tolerance.

Every test records one PASS / FAIL / SKIP line; the lines are printed in a
block at the end of the pytest run.
"""
import csv
import datetime as dt
import json
import math
import os
import time
import warnings

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE, ELECTION, small_spec
from pollbias.allocation import identity_residual
from pollbias.data import AllocationMode, PollRecord, parse_polls, parse_results, prepare_dataset
from pollbias.model import (Posterior, exponential_lpdf, half_normal_lpdf, laplace_lpdf,
                            log_likelihood_polls, normal_lpdf)
from pollbias.nuts import SamplerConfig, check_gradient, sample
from pollbias.summaries import (OUTPUT_FILES, ROW_ELECTION_DAY, ROW_UNDECIDED,
                                ROW_UNDECIDED_LEVEL, BiasKind, average_abs_bias, average_sd,
                                race_bias, race_sd, rolling_undecided, summarize,
                                write_summaries)
from pollbias.synthetic import generate, recovery_scenario, simulate
from test_model import oracle_polls, random_params
from test_summaries import load_golden

pytestmark = pytest.mark.acceptance

EXTERNAL_POLLS = "POLLBIAS_EXTERNAL_POLLS"
EXTERNAL_RESULTS = "POLLBIAS_EXTERNAL_RESULTS"


def record(n, ok, detail):
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def quiet(f, *a, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return f(*a, **kw)


def test_1_gradient_matches_finite_differences(small_data):
    t0 = time.perf_counter()
    post = Posterior(small_data)
    rng = np.random.default_rng(2024)
    worst = max(check_gradient(post, post.initial_point(rng)) for _ in range(100))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-5 and elapsed < 60,
           f"max relative gradient error {worst:.2e} over 100 points "
           f"({small_data.race_count} races x {len(small_data.polls) // small_data.race_count}"
           f" polls) in {elapsed:.1f}s")


def test_2_prior_densities_match_closed_forms():
    xs = np.linspace(-0.9, 1.4, 20)
    worst = 0.0
    for x in xs:
        ax = abs(x)
        pairs = [(normal_lpdf(x, 0.1, 0.2), oracles.normal(x, 0.1, 0.2)),
                 (half_normal_lpdf(ax, 0.3), oracles.half_normal(ax, 0.3)),
                 (laplace_lpdf(x, 0.05), oracles.laplace(x, 0.05)),
                 (exponential_lpdf(ax, 0.05), oracles.exponential_mean(ax, 0.05))]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    record(2, worst < 1e-12, f"4 densities x 20 points, max abs difference {worst:.1e}")


def test_3_allocation_identity():
    rng = np.random.default_rng(5)
    n = 100_000
    R = rng.uniform(0.001, 1.0, n)
    D = rng.uniform(0.001, 1.0, n)
    U = rng.uniform(0.0, 1.0, n)
    lam0 = R / (R + D)
    theta = rng.uniform(-lam0, 1.0 - lam0)
    worst = max(abs(identity_residual(*t)) for t in zip(R, D, U, theta))
    record(3, worst < 1e-12, f"1e5 random (R, D, U, theta), max |residual| {worst:.1e}")


def test_4_extended_reduces_to_baseline(small_data):
    rng = np.random.default_rng(8)
    polls = oracle_polls(small_data)
    worst = worst_rel = 0.0
    for _ in range(1000):
        p = random_params(small_data, rng, gamma=False, kappa=False)
        ext = log_likelihood_polls(p, small_data, "extended")
        base = log_likelihood_polls(p, small_data, "baseline")
        worst = max(worst, abs(ext - base))
        ref = oracles.baseline_loglik(polls, p.alpha1, p.beta1, p.tau1_sq)
        worst_rel = max(worst_rel, abs(ext - ref) / max(1.0, abs(ref)))
    record(4, worst < 1e-12 and worst_rel < 1e-12,
           f"1000 points with gamma = kappa = 0: |extended - baseline| {worst:.1e}, "
           f"relative gap to scalar oracle {worst_rel:.1e}")


class StdNormal:
    dim = 5

    def __call__(self, x):
        return -0.5 * float(x @ x), -x


def test_5_sampler_on_standard_normal():
    t0 = time.perf_counter()
    d = quiet(sample, StdNormal(), SamplerConfig(chains=4, warmup=1000, samples=1000, seed=1))
    elapsed = time.perf_counter() - t0
    rhat = max(v["rhat"] for v in d.diagnostics.values())
    div = sum(d.divergence_count)
    z = max(abs(d.values[:, :, k].mean())
            / (d.values[:, :, k].std() / math.sqrt(d.diagnostics[f"x[{k}]"]["ess_bulk"]))
            for k in range(5))
    record(5, rhat < 1.01 and div == 0 and z < 4 and elapsed < 60,
           f"max R-hat {rhat:.4f}, {div} divergences, max |mean| = {z:.2f} sd/sqrt(ESS), "
           f"{elapsed:.1f}s")


RECOVERY_SEEDS = range(10)
COVERED = ("alpha1", "gamma", "kappa")


@pytest.mark.slow
def test_6_parameter_recovery():
    t0 = time.perf_counter()
    hits, signs, lines = [], [], []
    for seed in RECOVERY_SEEDS:
        data, truth = generate(recovery_scenario(seed))
        post = Posterior(data)
        d = quiet(sample, post, SamplerConfig(chains=4, warmup=1000, samples=1000, seed=seed))
        true = post.layout.pack(truth)
        mine = []
        for k, name in enumerate(d.names):
            base = name.split("[")[0]
            if base not in COVERED:
                continue
            x = d.values[:, :, k]
            lo, hi = np.percentile(x, [2.5, 97.5])
            mine.append(lo <= true[k] <= hi)
            if base == "gamma" and true[k] != 0:
                signs.append(np.sign(x.mean()) == np.sign(true[k]))
        hits += mine
        lines.append(f"seed {seed}: coverage {np.mean(mine):.2f}, "
                     f"max R-hat {d.summary['max_rhat']:.3f}, "
                     f"{sum(d.divergence_count)} divergences")
    elapsed = time.perf_counter() - t0
    coverage, sign_rate = float(np.mean(hits)), float(np.mean(signs))
    for line in lines:
        print(line)
    record(6, coverage >= 0.8 and sign_rate >= 0.95 and elapsed < 1800,
           f"95% interval coverage {coverage:.3f} over {len(hits)} (seed, parameter) pairs, "
           f"gamma sign rate {sign_rate:.2f} over {len(signs)}, {elapsed / 60:.1f} min")


def test_7_bias_arithmetic_golden():
    g, data, params = load_golden()
    exp = g["expected"]
    keys = {BiasKind.ALL: "b", BiasKind.ELECTION_DAY: "b_e", BiasKind.UNDECIDED: "b_u",
            BiasKind.HOUSE: "b_h"}
    worst = 0.0
    for kind, key in keys.items():
        b = race_bias(params, data, kind)
        worst = max(worst, abs(b[0] - exp["races"]["AZ"][key]),
                    abs(b[1] - exp["races"]["OH"][key]),
                    abs(average_abs_bias(b) - exp["mu"][key]))
    s = race_sd(params, data)
    worst = max(worst, abs(s[0] - exp["races"]["AZ"]["sigma"]),
                abs(s[1] - exp["races"]["OH"]["sigma"]),
                abs(average_sd(params, data) - exp["mean_sigma"]))
    record(7, worst < 1e-10, f"2 races, 3 polls, max abs difference from golden {worst:.1e} pp")


def national(pid, days_before, n, u):
    return PollRecord(poll_id=pid, state="US", year=2016,
                      end_date=ELECTION - dt.timedelta(days=days_before), sample_size=n,
                      rep_share=0.44, dem_share=0.42, und_share=u, other_share=None,
                      pollster="")


def test_8_rolling_average_oracle():
    s = dict(rolling_undecided([national("a", 20, 500, 0.04), national("b", 22, 1500, 0.08)],
                               ELECTION))
    worked = s[ELECTION - dt.timedelta(days=21)]
    edges = dict(rolling_undecided([national("a", 30, 1000, 0.02),
                                    national("b", 44, 1000, 0.10)], ELECTION))
    both = edges[ELECTION - dt.timedelta(days=37)]
    only_a = edges[ELECTION - dt.timedelta(days=36)]
    only_b = edges[ELECTION - dt.timedelta(days=38)]
    ok = worked == 0.07 and both == 0.06 and only_a == 0.02 and only_b == 0.10
    record(8, ok, f"worked example {worked!r}; edge days: both polls {both!r}, "
                  f"x+8 excluded {only_a!r}, x-8 excluded {only_b!r}")


def test_9_even_allocation_pipeline(tmp_path):
    sim = simulate(small_spec(seed=4, n_races=6))
    prop = prepare_dataset(sim.polls, sim.results, "proportional")
    even = prepare_dataset(sim.polls, sim.results, "even")
    worst = 0.0
    for a, b in zip(prop.polls, even.polls):
        r = a.record
        T = r.rep_share + r.dem_share + r.und_share
        shift = (r.und_share / T) * (0.5 - r.rep_share / (r.rep_share + r.dem_share))
        worst = max(worst, abs((b.y - a.y) - shift))
    same_polls = [p.record for p in prop.polls] == [p.record for p in even.polls]

    headers = {}
    for mode, data in (("proportional", prop), ("even", even)):
        post = Posterior(data)
        d = quiet(sample, post, SamplerConfig(chains=2, warmup=300, samples=200, seed=9))
        bundle = summarize(post.layout.unpack(d.matrix), data)
        out = tmp_path / mode
        write_summaries(out, bundle)
        heads = {}
        for name in OUTPUT_FILES:
            if name.endswith(".csv"):
                with open(out / name, newline="") as fh:
                    heads[name] = next(csv.reader(fh))
        report = json.loads((out / "report.json").read_text())
        heads["tables"] = list(report["tables"])
        headers[mode] = heads
    schema = headers["proportional"] == headers["even"]
    record(9, worst < 1e-12 and same_polls and schema,
           f"{len(prop.polls)} polls, max |shift - u(0.5 - R/(R+D))| {worst:.1e}; "
           f"summary schema identical across modes: {schema}")


def test_10_external_check():
    polls, results = os.environ.get(EXTERNAL_POLLS), os.environ.get(EXTERNAL_RESULTS)
    if not (polls and results):
        ACCEPTANCE.append("SKIP criterion 10: informational only; set "
                          f"{EXTERNAL_POLLS} and {EXTERNAL_RESULTS} to run it")
        pytest.skip("no external dataset supplied")
    records, _ = parse_polls(polls)
    data = prepare_dataset(records, parse_results(results), AllocationMode.PROPORTIONAL)
    post = Posterior(data)
    d = quiet(sample, post, SamplerConfig(seed=1))
    tables = summarize(post.layout.unpack(d.matrix), data).tables
    und = tables[ROW_UNDECIDED_LEVEL]["2016"]["mean"]
    bias = tables[ROW_UNDECIDED]["2016"]["mean"]
    eday = tables[ROW_ELECTION_DAY]["2016"]["mean"]
    near = abs(und - 5.5) <= 0.5 and abs(bias - 2.1) <= 0.5
    ACCEPTANCE.append(f"INFO criterion 10: 2016 election day undecided {und:.2f}% "
                      f"(paper 5.5), undecided bias {bias:.2f}pp (paper 2.1), "
                      f"election day bias {eday:.2f}pp; within 0.5pp: {near}")
