import csv
import json
import shutil

import pytest

from conftest import small_spec
from pollbias.cli import main
from pollbias.summaries import OUTPUT_FILES

FIT_FLAGS = ["--chains", "2", "--warmup", "200", "--samples", "150", "--seed", "3"]


@pytest.fixture(autouse=True)
def one_worker(monkeypatch):
    monkeypatch.setenv("POLLBIAS_THREADS", "1")


def run(*argv):
    return main([str(a) for a in argv])


def simulate_small(tmp, name="sim", **kw):
    scen = tmp / f"{name}.json"
    scen.write_text(json.dumps(small_spec(seed=2, n_races=6, **kw).to_dict()))
    out = tmp / name
    assert run("simulate", "--scenario", scen, "--out", out) == 0
    return out


def fit(sim, out, *extra):
    return run("fit", "--polls", sim / "polls.csv", "--results", sim / "results.csv",
               "--out", out, *FIT_FLAGS, *extra)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    mp = pytest.MonkeyPatch()
    mp.setenv("POLLBIAS_THREADS", "1")
    sim = simulate_small(tmp)
    assert fit(sim, tmp / "fit") == 0
    assert run("summarize", "--fit", tmp / "fit", "--out", tmp / "summary") == 0
    assert run("report", "--fit", tmp / "fit", "--out", tmp / "report") == 0
    mp.undo()
    return tmp


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_pipeline_writes_everything(pipeline):
    fit_dir, summary, report = pipeline / "fit", pipeline / "summary", pipeline / "report"
    for name in ("draws.csv", "diagnostics.json", "input/polls.csv", "input/results.csv"):
        assert (fit_dir / name).exists(), name
    for name in OUTPUT_FILES:
        assert (summary / name).exists(), name
    assert (report / "report.md").exists()
    assert (report / "gamma_intervals.png").read_bytes()[:4] == b"\x89PNG"
    m = manifest(fit_dir)
    assert set(m) == {"fit"}
    assert m["fit"]["status"] in ("converged", "not converged")
    assert m["fit"]["seed"] == 3
    assert set(m["fit"]["versions"]) >= {"pollbias", "numpy", "scipy"}
    assert len(m["fit"]["config_hash"]) == 64
    assert "draws.csv" in m["fit"]["outputs"]
    s = manifest(summary)["summarize"]
    assert s["inputs"]["draws"]["sha256"]


def test_report_mirrors_published_tables(pipeline):
    text = (pipeline / "report" / "report.md").read_text()
    for row in ("Average absolute bias", "Average absolute election day bias",
                "Average absolute undecided voter bias", "Average absolute house effects",
                "Average standard deviation", "Average election day undecided"):
        assert f"| {row} |" in text
    assert "2016-Close" in text


def test_separate_and_combined_runs_agree(pipeline):
    for name in OUTPUT_FILES:
        a = (pipeline / "summary" / name).read_bytes()
        b = (pipeline / "report" / name).read_bytes()
        assert a == b, name


def test_reruns_are_byte_identical(pipeline, tmp_path):
    sim = pipeline / "sim"
    assert fit(sim, tmp_path / "fit") == 0
    for name in ("draws.csv", "diagnostics.json"):
        assert (tmp_path / "fit" / name).read_bytes() == (pipeline / "fit" / name).read_bytes()
    assert manifest(tmp_path / "fit") == manifest(pipeline / "fit")
    assert run("report", "--fit", tmp_path / "fit", "--out", tmp_path / "report") == 0
    for p in (pipeline / "report").iterdir():
        if p.name != "manifest.json":
            assert (tmp_path / "report" / p.name).read_bytes() == p.read_bytes(), p.name


def test_ingest_one_bad_row(pipeline, tmp_path):
    sim = pipeline / "sim"
    lines = (sim / "polls.csv").read_text().splitlines()
    cells = lines[1].split(",")
    cells[5] = "-5"                         # sample_size
    lines[1] = ",".join(cells)
    bad = tmp_path / "polls.csv"
    bad.write_text("\n".join(lines) + "\n")
    shutil.copy(sim / "polls.schema.json", tmp_path / "polls.schema.json")
    out = tmp_path / "ingest"
    assert run("ingest", "--polls", bad, "--results", sim / "results.csv", "--out", out) == 0
    rejects = rows(out / "rejects.csv")
    assert len(rejects) == 2                # header plus the bad row
    assert cells[0] in rejects[1]
    assert manifest(out)["ingest"]["rejects"] == 1
    assert len(rows(out / "prepared_polls.csv")) == len(lines) - 1


def test_missing_input_gives_error_json(tmp_path, capsys):
    code = run("fit", "--polls", tmp_path / "nope.csv", "--results", tmp_path / "nope.csv",
               "--out", tmp_path / "o")
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "missing_file" and err["command"] == "fit"


def test_bad_config_gives_error_json(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sampler": {"chains": 0}}))
    code = run("ingest", "--polls", "x", "--results", "y", "--out", tmp_path, "--config", cfg)
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert set(err) == {"error", "message", "command"}


def test_summarize_without_fit(tmp_path, capsys):
    assert run("summarize", "--out", tmp_path) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "missing_fit"


def test_not_converged_run_is_flagged(pipeline, tmp_path, capsys):
    sim = pipeline / "sim"
    out = tmp_path / "short"
    code = run("fit", "--polls", sim / "polls.csv", "--results", sim / "results.csv",
               "--out", out, "--chains", "2", "--warmup", "10", "--samples", "10")
    assert code == 0
    assert manifest(out)["fit"]["status"] == "not converged"
    assert "did not converge" in capsys.readouterr().err
    assert run("summarize", "--fit", out, "--out", tmp_path / "s") == 0
    assert "did not converge" in capsys.readouterr().err
    assert run("report", "--fit", out, "--out", tmp_path / "r", "--no-figures") == 0
    assert "**Warning:**" in (tmp_path / "r" / "report.md").read_text()
    assert not list((tmp_path / "r").glob("*.png"))


def test_even_mode_pipeline(tmp_path, pipeline):
    sim = simulate_small(tmp_path, "even", mode="even")
    out = tmp_path / "fit"
    assert fit(sim, out, "--mode", "even") == 0
    assert manifest(out)["fit"]["config"]["mode"] == "even"
    assert run("summarize", "--fit", out, "--out", tmp_path / "s", "--mode", "even") == 0
    for name in OUTPUT_FILES:
        if name.endswith(".csv"):
            assert rows(tmp_path / "s" / name)[0] == rows(pipeline / "summary" / name)[0], name
    report = json.loads((tmp_path / "s" / "report.json").read_text())
    assert report["allocation_mode"] == "even"
    assert run("summarize", "--fit", out, "--out", tmp_path / "p", "--mode",
               "proportional") == 2


def test_simulate_default_scenario(tmp_path):
    assert run("simulate", "--out", tmp_path, "--seed", "4") == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["alpha1"]) == 20
    assert truth["labels"]["groups"] == ["2016-StrongRep", "2016-Close", "2016-StrongDem"]
    assert manifest(tmp_path)["simulate"]["truncation_rate"] == 0.0
