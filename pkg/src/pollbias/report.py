"""Plain markdown report laid out like the published bias tables."""
from __future__ import annotations

from .summaries import (ROW_ALL, ROW_ELECTION_DAY, ROW_HOUSE, ROW_SD, ROW_UNDECIDED,
                        ROW_UNDECIDED_LEVEL, SummaryBundle)

HOUSE_THRESHOLD = 0.5    # pp; the published house table lists only larger effects

BASELINE_ROWS = (ROW_ALL, ROW_ELECTION_DAY, ROW_SD)
EXTENDED_ROWS = (ROW_ALL, ROW_ELECTION_DAY, ROW_UNDECIDED, ROW_HOUSE, ROW_SD,
                 ROW_UNDECIDED_LEVEL)


def _cell(stats: dict) -> str:
    return f"{stats['mean']:.1f}% ({stats['sd']:.2f})"


def bias_table(tables: dict, rows) -> list[str]:
    rows = [r for r in rows if r in tables]
    if not rows:
        return []
    cols = list(tables[rows[0]])
    lines = ["| | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for r in rows:
        lines.append(f"| {r} | " + " | ".join(_cell(tables[r][c]) for c in cols) + " |")
    return lines


def house_lines(houses: list[dict], threshold: float = HOUSE_THRESHOLD) -> list[str]:
    shown = sorted((h for h in houses if abs(h["mean"]) >= threshold),
                   key=lambda h: h["pollster"])
    lines = ["| Pollster | mean | s.d. | polls |", "|---|---|---|---|"]
    lines += [f"| {h['pollster']} | {h['mean']:.2f} | {h['sd']:.2f} | {h['polls']} |"
              for h in shown]
    hidden = len(houses) - len(shown)
    if not shown:
        lines = [f"No pollster has an average house effect of {threshold} pp or more."]
    if hidden:
        lines += ["", f"{hidden} pollster(s) below {threshold} pp omitted; "
                      "see house_table.csv for all of them."]
    return lines


def gamma_lines(gamma: list[dict]) -> list[str]:
    lines = ["| Group | mean | 50% interval | 95% interval |", "|---|---|---|---|"]
    for g in gamma:
        lines.append(f"| {g['group']} | {g['mean']:.2f} | [{g['q25']:.2f}, {g['q75']:.2f}] | "
                     f"[{g['q2.5']:.2f}, {g['q97.5']:.2f}] |")
    return lines


def render_markdown(bundle: SummaryBundle, cfg: dict, figures: list[str] = ()) -> str:
    meta = bundle.meta
    extended = meta["model"] == "extended"
    mode = meta["allocation_mode"]
    out = ["# Poll bias report", ""]
    if meta.get("status") == "not converged":
        out += ["> **Warning:** the fit did not converge (split R-hat > 1.05). "
                "Treat every number below with suspicion.", ""]
    out += [f"Model: {meta['model']}; allocation of undecided voters: {mode}; "
            f"{meta['polls']} polls in {meta['races']} races; {meta['draws']} posterior draws.",
            ""]
    title = ("Average election-level absolute bias and standard deviation "
             "(posterior mean, s.d. in brackets; percentage points)")
    out += [f"## {title}", ""]
    out += bias_table(bundle.tables, EXTENDED_ROWS if extended else BASELINE_ROWS)
    out.append("")
    if extended:
        out += ["## Average house effects (pp)", ""] + house_lines(bundle.houses) + [""]
        out += ["## Undecided allocation bias by group (logit scale)", ""]
        out += gamma_lines(bundle.gamma) + [""]
    if figures:
        out += ["## Figures", ""] + [f"![{f}]({f})" for f in figures] + [""]
    return "\n".join(out)
