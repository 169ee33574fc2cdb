"""Command-line entry point: ingest, fit, summarize, simulate, report."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import AllocationMode
from .data import (DataError, PreparedDataset, parse_polls, parse_results,
                   prepare_dataset, write_polls, write_prepared, write_races, write_rejects,
                   write_results)
from .model import MODELS, ModelLayout, Posterior, PriorScales
from .nuts import SamplerConfig, sample
from .store import read_draws, write_draws
from .synthetic import ScenarioSpec, recovery_scenario, simulate

log = logging.getLogger("pollbias")

MANIFEST = "manifest.json"
INPUT_DIR = "input"
NOT_CONVERGED = "not converged"
BANNER = "WARNING: the fit did not converge (split R-hat > {:.2f}); summaries are unreliable."

FILTER_KEYS = ("window_days", "min_polls_per_race", "min_polls_per_house")
SAMPLER_KEYS = ("chains", "warmup", "samples", "seed", "target_accept", "max_treedepth",
                "mass_matrix")


class CliError(Exception):
    def __init__(self, message: str, kind: str = "usage", code: int = 2):
        super().__init__(message)
        self.kind, self.code = kind, code


# -- config ------------------------------------------------------------------

def load_config(args) -> dict:
    """Merge the JSON config file with command-line flags (flags win)."""
    cfg = {"mode": "proportional", "model": "extended", "filters": {}, "sampler": {},
           "priors": {}}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read config {args.config}: {e}") from None
        unknown = set(raw) - set(cfg)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        for k, v in raw.items():
            cfg[k] = dict(v) if isinstance(cfg[k], dict) else v
    for key in ("mode", "model"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    flag_names = {"window_days": "window_days", "min_polls_per_race": "min_polls_race",
                  "min_polls_per_house": "min_polls_house"}
    for key, attr in flag_names.items():
        if getattr(args, attr, None) is not None:
            cfg["filters"][key] = getattr(args, attr)
    for key in ("chains", "warmup", "samples", "seed"):
        if getattr(args, key, None) is not None:
            cfg["sampler"][key] = getattr(args, key)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    if cfg["mode"] not in {m.value for m in AllocationMode}:
        raise CliError(f"unknown allocation mode {cfg['mode']!r}")
    if cfg["model"] not in MODELS:
        raise CliError(f"unknown model {cfg['model']!r}")
    bad = set(cfg["filters"]) - set(FILTER_KEYS)
    if bad:
        raise CliError(f"unknown filter keys: {sorted(bad)}")
    for k, v in cfg["filters"].items():
        if not isinstance(v, int) or v < 1:
            raise CliError(f"filter {k} must be a positive integer")
    bad = set(cfg["sampler"]) - set(SAMPLER_KEYS)
    if bad:
        raise CliError(f"unknown sampler keys: {sorted(bad)}")
    try:
        SamplerConfig(**cfg["sampler"])
        priors = PriorScales.from_dict(cfg["priors"])
    except (TypeError, ValueError) as e:
        raise CliError(str(e)) from None
    if any(v <= 0 for k, v in priors.to_dict().items() if k != "phi_mean"):
        raise CliError("prior scales must be positive")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"pollbias": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "matplotlib": matplotlib.__version__}


def read_manifest(out: Path) -> dict:
    path = Path(out) / MANIFEST
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def write_manifest(out: Path, command: str, entry: dict) -> None:
    manifest = read_manifest(out)
    manifest[command] = entry
    (Path(out) / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def _entry(cfg: dict, inputs: dict[str, Path], outputs: list[Path], out: Path, **extra) -> dict:
    return {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("sampler", {}).get("seed"),
        "versions": versions(),
        "inputs": {k: {"path": str(p), "sha256": file_hash(p)} for k, p in inputs.items()},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        **extra,
    }


# -- shared steps ------------------------------------------------------------

def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise CliError(f"--{n.replace('_', '-')} is required")
        if n in ("polls", "results", "national", "scenario") and not Path(getattr(args, n)).exists():
            raise CliError(f"no such file: {getattr(args, n)}", kind="missing_file")


def _load_dataset(polls: Path, results: Path, cfg: dict) -> PreparedDataset:
    records, rejects = parse_polls(polls)
    races = parse_results(results)
    data = prepare_dataset(records, races, cfg["mode"], **cfg["filters"])
    if rejects:
        data = dataclasses.replace(data, rejects=tuple(rejects) + data.rejects)
    return data


def _out(args) -> Path:
    if args.out is None:
        raise CliError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    _require(args, "polls", "results")
    cfg = load_config(args)
    out = _out(args)
    data = _load_dataset(Path(args.polls), Path(args.results), cfg)
    files = [out / "prepared_polls.csv", out / "races.csv", out / "rejects.csv",
             out / "excluded.csv"]
    write_prepared(files[0], data)
    write_races(files[1], data)
    write_rejects(files[2], data.rejects)
    write_rejects(files[3], data.excluded)
    write_manifest(out, "ingest", _entry(
        cfg, {"polls": Path(args.polls), "results": Path(args.results)}, files, out,
        polls=len(data.polls), races=data.race_count, houses=data.house_count,
        rejects=len(data.rejects), excluded=len(data.excluded)))
    print(f"{len(data.polls)} polls in {data.race_count} races; {len(data.rejects)} rejected, "
          f"{len(data.excluded)} excluded by the inclusion rules")
    return 0


def cmd_fit(args) -> int:
    _require(args, "polls", "results")
    cfg = load_config(args)
    out = _out(args)
    data = _load_dataset(Path(args.polls), Path(args.results), cfg)
    # keep the exact model input next to the draws so summaries need nothing else
    inp = out / INPUT_DIR
    inp.mkdir(exist_ok=True)
    write_polls(inp / "polls.csv", data.records())
    write_results(inp / "results.csv", data.races)

    posterior = Posterior(data, cfg["model"], PriorScales.from_dict(cfg["priors"]))
    config = SamplerConfig(**cfg["sampler"])
    cfg["sampler"] = config.to_dict()
    draws = sample(posterior, config)
    files = list(write_draws(out, draws))
    files += [inp / "polls.csv", inp / "polls.schema.json", inp / "results.csv"]
    status = "converged" if draws.converged else NOT_CONVERGED
    report = draws.sampler_report()
    write_manifest(out, "fit", _entry(
        cfg, {"polls": Path(args.polls), "results": Path(args.results)}, files, out,
        status=status, unreliable=draws.unreliable, max_rhat=report.get("max_rhat"),
        divergences=report["divergences"], polls=len(data.polls), races=data.race_count))
    print(f"fit {status}: max R-hat {report.get('max_rhat')}, "
          f"divergences {sum(report['divergences'])}")
    if status == NOT_CONVERGED:
        print(BANNER.format(report.get("rhat_threshold", 1.05)), file=sys.stderr)
    return 0


def _fit_dir(args) -> Path:
    return Path(args.fit) if getattr(args, "fit", None) else Path(args.out)


def _summarize(args, out: Path):
    from .summaries import summarize, write_summaries

    fit_dir = _fit_dir(args)
    manifest = read_manifest(fit_dir)
    fit = manifest.get("fit")
    if fit is None:
        raise CliError(f"{fit_dir} holds no fit (run `pollbias fit` first)", kind="missing_fit")
    cfg = fit["config"]
    if getattr(args, "mode", None) and args.mode != cfg["mode"]:
        raise CliError(f"--mode {args.mode} does not match the fit's mode {cfg['mode']}")
    if fit.get("status") == NOT_CONVERGED:
        print(BANNER.format(1.05), file=sys.stderr)
    inp = fit_dir / INPUT_DIR
    data = _load_dataset(inp / "polls.csv", inp / "results.csv", cfg)
    stored = read_draws(fit_dir)
    layout = ModelLayout(data, cfg["model"])
    if stored.names != layout.names:
        raise CliError("draws do not match the fitted dataset", kind="mismatch", code=1)
    params = layout.unpack(stored.matrix)

    national = []
    inputs = {"draws": fit_dir / "draws.csv"}
    if getattr(args, "national", None):
        _require(args, "national")
        national, _ = parse_polls(Path(args.national))
        inputs["national"] = Path(args.national)
    dates = {r.year: r.election_date for r in data.races}
    bundle = summarize(params, data, cfg["model"], national, dates,
                       meta={"status": fit.get("status"), "fit_config_hash": fit["config_hash"]})
    files = write_summaries(out, bundle)
    return bundle, cfg, files, inputs


def cmd_summarize(args) -> int:
    out = _out(args)
    bundle, cfg, files, inputs = _summarize(args, out)
    write_manifest(out, "summarize", _entry(cfg, inputs, files, out,
                                            status=bundle.meta.get("status")))
    print(f"summaries written to {out}")
    return 0


def cmd_simulate(args) -> int:
    out = _out(args)
    if args.scenario:
        _require(args, "scenario")
        try:
            spec = ScenarioSpec.load(args.scenario)
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise CliError(f"bad scenario file: {e}") from None
        inputs = {"scenario": Path(args.scenario)}
    else:
        spec = recovery_scenario(args.seed if args.seed is not None else 0,
                                 mode=args.mode or "proportional")
        inputs = {}
    if args.seed is not None:
        spec.seed = args.seed
    sim = simulate(spec)
    files = [out / "polls.csv", out / "polls.schema.json", out / "results.csv",
             out / "scenario.json", out / "truth.json"]
    write_polls(files[0], sim.polls)
    write_results(files[2], sim.results)
    files[3].write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    truth = {k: np.asarray(v).tolist() for k, v in dataclasses.asdict(sim.truth).items()}
    truth["labels"] = {"races": sim.dataset.race_labels, "groups": sim.dataset.group_labels,
                       "houses": list(sim.dataset.houses), "years": list(sim.dataset.years)}
    files[4].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg = {"scenario": spec.to_dict()}
    write_manifest(out, "simulate", _entry(cfg, inputs, files, out,
                                           truncation_rate=sim.truncation_rate))
    print(f"{len(sim.polls)} polls for {len(sim.results)} races; "
          f"truncation rate {sim.truncation_rate:.2e}")
    return 0


def cmd_report(args) -> int:
    from .report import render_markdown

    out = _out(args)
    bundle, cfg, files, inputs = _summarize(args, out)
    figures = []
    if not args.no_figures:
        from .plotting import render_all
        figures = render_all(bundle, out)
    text = render_markdown(bundle, cfg, [p.name for p in figures])
    (out / "report.md").write_text(text, encoding="utf-8")
    files = list(files) + [out / "report.md"] + figures
    write_manifest(out, "report", _entry(cfg, inputs, files, out,
                                         status=bundle.meta.get("status")))
    print(f"report written to {out / 'report.md'}")
    return 0


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "summarize": cmd_summarize,
            "simulate": cmd_simulate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pollbias", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, sampler=False):
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--config", help="JSON config (mode, model, filters, sampler, priors)")
        sp.add_argument("--mode", choices=[m.value for m in AllocationMode])
        if data:
            sp.add_argument("--polls", help="polls CSV")
            sp.add_argument("--results", help="results CSV")
            sp.add_argument("--window-days", type=int)
            sp.add_argument("--min-polls-race", type=int)
            sp.add_argument("--min-polls-house", type=int)
        if sampler:
            sp.add_argument("--model", choices=MODELS)
            sp.add_argument("--chains", type=int)
            sp.add_argument("--warmup", type=int)
            sp.add_argument("--samples", type=int)
            sp.add_argument("--seed", type=int)

    common(sub.add_parser("ingest", help="validate and filter input files"))
    common(sub.add_parser("fit", help="sample the posterior"), sampler=True)
    for name, text in (("summarize", "bias tables and plot-ready CSVs"),
                       ("report", "markdown report with figures")):
        sp = sub.add_parser(name, help=text)
        common(sp, data=False)
        sp.add_argument("--fit", help="directory of a previous fit (default: --out)")
        sp.add_argument("--national", help="national polls CSV for the undecided series")
        if name == "report":
            sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    sp = sub.add_parser("simulate", help="write a synthetic dataset with known parameters")
    common(sp, data=False)
    sp.add_argument("--scenario", help="scenario JSON (default: built-in recovery scenario)")
    sp.add_argument("--seed", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as e:
        err = {"error": e.kind, "message": str(e), "command": args.command}
        code = e.code
    except DataError as e:
        err = {"error": "data", "message": str(e), "command": args.command}
        code = 2
    except (RuntimeError, ValueError, OSError) as e:
        err = {"error": type(e).__name__, "message": str(e), "command": args.command}
        code = 1
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
