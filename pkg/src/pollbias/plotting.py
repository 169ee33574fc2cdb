"""PNG figures drawn from a summary bundle (used by the ``report`` command)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .summaries import SummaryBundle  # noqa: E402

MARGIN_COLOURS = {"StrongRep": "#c0392b", "Close": "#7f8c8d", "StrongDem": "#2c6fbb"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def gamma_figure(bundle: SummaryBundle, path: Path) -> Path | None:
    rows = bundle.gamma
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(rows) + 1.2))
    for k, r in enumerate(rows):
        colour = MARGIN_COLOURS.get(r["margin_group"], "black")
        ax.hlines(k, r["q2.5"], r["q97.5"], colour, linewidth=1)
        ax.hlines(k, r["q25"], r["q75"], colour, linewidth=4)
        ax.plot(r["mean"], k, "o", color="white", markeredgecolor=colour, markersize=4)
    ax.axvline(0.0, color="black", linewidth=0.6, linestyle=":")
    ax.set_yticks(range(len(rows)), [r["group"] for r in rows])
    ax.invert_yaxis()
    ax.set_xlabel("gamma (logit scale)")
    ax.set_title("Undecided allocation bias: 50% and 95% intervals")
    return _save(fig, path)


def scatter_figure(bundle: SummaryBundle, path: Path) -> Path | None:
    rows = [r for r in bundle.scatter if r["mean_undecided"] is not None]
    if not rows:
        return None
    years = sorted({r["year"] for r in rows})
    fig, axes = plt.subplots(1, len(years), figsize=(3.2 * len(years), 3.2), squeeze=False,
                             sharey=True)
    for ax, year in zip(axes[0], years):
        for group, colour in MARGIN_COLOURS.items():
            pts = [r for r in rows if r["year"] == year and r["margin_group"] == group]
            ax.scatter([r["mean_undecided"] for r in pts], [r["mean_abs_error"] for r in pts],
                       s=14, color=colour, label=group)
        ax.set_title(str(year))
        ax.set_xlabel("mean undecided (%)")
    axes[0][0].set_ylabel("mean absolute error (pp)")
    axes[0][-1].legend(fontsize=7)
    return _save(fig, path)


def rolling_figure(bundle: SummaryBundle, path: Path) -> Path | None:
    if not bundle.rolling:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for year in sorted({r["year"] for r in bundle.rolling}):
        pts = [r for r in bundle.rolling if r["year"] == year]
        ax.plot([r["days_to_election"] for r in pts], [r["undecided"] for r in pts],
                label=str(year))
    ax.invert_xaxis()
    ax.set_xlabel("days to election")
    ax.set_ylabel("undecided (%)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def histogram_figure(bundle: SummaryBundle, series: str, xlabel: str, path: Path) -> Path | None:
    rows = [r for r in bundle.histograms if r["series"] == series]
    if not rows:
        return None
    years = sorted({r["year"] for r in rows})
    fig, axes = plt.subplots(len(years), 1, figsize=(5, 1.6 * len(years) + 0.6), squeeze=False,
                             sharex=True)
    for ax, year in zip(axes[:, 0], years):
        pts = [r for r in rows if r["year"] == year]
        ax.bar([r["bin_lo"] for r in pts], [r["fraction"] for r in pts],
               width=[r["bin_hi"] - r["bin_lo"] for r in pts], align="edge",
               color="#555555", edgecolor="white")
        ax.set_ylabel(str(year))
    axes[-1, 0].set_xlabel(xlabel)
    return _save(fig, path)


def house_figure(bundle: SummaryBundle, path: Path) -> Path | None:
    rows = sorted(bundle.houses, key=lambda r: r["mean"])
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(rows) + 1.2))
    for k, r in enumerate(rows):
        ax.hlines(k, r["mean"] - 2 * r["sd"], r["mean"] + 2 * r["sd"], "black", linewidth=1)
        ax.plot(r["mean"], k, "o", color="black", markersize=3)
    ax.axvline(0.0, color="black", linewidth=0.6, linestyle=":")
    ax.set_yticks(range(len(rows)), [r["pollster"] for r in rows])
    ax.set_xlabel("house bias b_h (pp), mean +/- 2 sd")
    return _save(fig, path)


def render_all(bundle: SummaryBundle, out: Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    made = [
        gamma_figure(bundle, out / "gamma_intervals.png"),
        scatter_figure(bundle, out / "group_scatter.png"),
        rolling_figure(bundle, out / "rolling_undecided.png"),
        histogram_figure(bundle, "national_undecided", "undecided (%)",
                         out / "national_undecided_hist.png"),
        histogram_figure(bundle, "undecided_bias", "|undecided bias| (pp)",
                         out / "undecided_bias_hist.png"),
        house_figure(bundle, out / "house_effects.png"),
    ]
    return [p for p in made if p is not None]
