"""Draws on disk: flat CSV (chain, iteration, named parameters) plus a JSON sidecar."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nuts import PosteriorDraws

DRAWS_FILE = "draws.csv"
DIAGNOSTICS_FILE = "diagnostics.json"


def _num(x: float) -> str:
    return "%.17g" % x


def write_draws(out: Path, draws: PosteriorDraws) -> tuple[Path, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / DRAWS_FILE
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration"] + list(draws.names))
        for c in range(draws.n_chains):
            for i in range(draws.n_samples):
                w.writerow([c, i] + [_num(v) for v in draws.values[c, i]])
    side = out / DIAGNOSTICS_FILE
    payload = {
        "sampler": _jsonable(draws.sampler_report()),
        "config": draws.config.to_dict(),
        "parameters": _jsonable(draws.diagnostics),
    }
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, side


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass
class StoredDraws:
    names: list[str]
    values: np.ndarray      # (chains, samples, dim)
    diagnostics: dict

    @property
    def matrix(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("sampler", {}).get("converged", True))


def read_draws(directory: Path) -> StoredDraws:
    directory = Path(directory)
    path = directory / DRAWS_FILE
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["chain", "iteration"]:
            raise ValueError(f"{path}: not a draws file")
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise ValueError(f"{path}: no draws")
    arr = np.array(rows)
    chains = arr[:, 0].astype(int)
    n_chains = chains.max() + 1
    per = np.bincount(chains)
    if np.any(per != per[0]):
        raise ValueError(f"{path}: chains have unequal length")
    order = np.lexsort((arr[:, 1], chains))
    values = arr[order, 2:].reshape(n_chains, per[0], -1)
    side = directory / DIAGNOSTICS_FILE
    diag = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return StoredDraws(header[2:], values, diag)
