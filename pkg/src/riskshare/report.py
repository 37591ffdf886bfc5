"""Side-by-side comparison of experiment records."""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from riskshare.experiment import ExperimentRecord
from riskshare.svg import line_chart

MODE_ORDER = ("monopoly-1", "monopoly-2", "duopoly")


def load_records(paths) -> list:
    return [ExperimentRecord.from_json(Path(p).read_text()) for p in paths]


def _space_key(record) -> tuple:
    return tuple(record.result["space"]["weights"])


def _order(records):
    def key(r):
        mode = r.mode
        return (MODE_ORDER.index(mode) if mode in MODE_ORDER else len(MODE_ORDER), mode, r.scenario)

    return sorted(records, key=key)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _markdown_table(header, rows) -> list:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return lines


def risk_table(records) -> list:
    """Markdown rows comparing risk records that share a probability space.

    Columns follow the order monopoly-1, monopoly-2, duopoly, then any
    other runs; a transfer column is added for each duopoly record.
    """
    records = _order(records)
    columns = []
    for r in records:
        res = r.result
        col = OrderedDict()
        col["initial risk firm 1"] = res["firms"][0]["initial_risk"]
        col["initial risk firm 2"] = res["firms"][1]["initial_risk"]
        col["initial aggregate"] = res["initial_aggregate"]
        col["final firm 1"] = res["firms"][0]["assessment"]
        col["final firm 2"] = res["firms"][1]["assessment"]
        col["final aggregate"] = res["aggregate"]
        col["fix-mix K"] = res["fix_mix_K"]
        col["IR satisfied"] = all(f["ir_satisfied"] for f in res["firms"])
        columns.append((r.mode, col))
        if r.mode == "duopoly" and res.get("transfer"):
            t = res["transfer"]["T"]
            tcol = OrderedDict((k, None) for k in col)
            tcol["initial risk firm 1"] = col["initial risk firm 1"]
            tcol["initial risk firm 2"] = col["initial risk firm 2"]
            tcol["initial aggregate"] = col["initial aggregate"]
            tcol["final firm 1"] = col["final firm 1"] - t
            tcol["final firm 2"] = col["final firm 2"] + t
            tcol["final aggregate"] = col["final aggregate"]
            tcol["IR satisfied"] = (tcol["final firm 1"] <= col["initial risk firm 1"] + 1e-9
                                    and tcol["final firm 2"] <= col["initial risk firm 2"] + 1e-9)
            columns.append((f"transfer (T = {t:.4f})", tcol))
    header = ["quantity"] + [name for name, _ in columns]
    keys = list(columns[0][1]) if columns else []
    rows = [[k] + [c[k] for _, c in columns] for k in keys]
    return _markdown_table(header, rows)


def profit_table(records) -> list:
    header = ["scenario", "strategies", "method", "payoff firm 1", "payoff firm 2", "eps", "certified"]
    rows = []
    for r in records:
        res = r.result
        rows.append([r.scenario, "x".join(map(str, res["strategy_counts"])), res["method"],
                     res["expected_payoffs"][0], res["expected_payoffs"][1], f"{res['eps']:.3g}", res["certified"]])
    return _markdown_table(header, rows)


def build_report(records) -> tuple:
    """Return ``(markdown, plots, warnings)`` for a list of records.

    Records are grouped by scenario and probability space; quantities are
    never compared or aggregated across groups, and records from more than
    one probability space raise a warning.
    """
    if not records:
        raise ValueError("a report needs at least one record")
    groups = OrderedDict()
    for r in records:
        groups.setdefault((r.result["kind"], _space_key(r), r.scenario), []).append(r)
    warnings = []
    spaces = {key[1] for key in groups}
    if len(spaces) > 1:
        warnings.append(
            f"WARNING: records come from {len(spaces)} different probability spaces; "
            "they are tabulated separately and not compared."
        )
    lines = ["# Experiment report", ""]
    lines += [f"> {w}" for w in warnings]
    if warnings:
        lines.append("")
    plots = {}
    for g, ((kind, space, name), recs) in enumerate(groups.items(), start=1):
        lines.append(f"## Group {g}: {name} ({kind} game on a {len(space)}-atom space)")
        lines.append("")
        lines.append("Records: " + ", ".join(f"`{r.stem}`" for r in recs))
        lines.append("")
        lines += risk_table(recs) if kind == "risk" else profit_table(recs)
        lines.append("")
        if kind == "risk":
            plots.update(_claim_plots(g, _order(recs)))
    return "\n".join(lines) + "\n", plots, warnings


def _claim_plots(group, records) -> dict:
    atoms = np.arange(1, records[0].result["space"]["atoms"] + 1)
    plots = {}
    for i in range(2):
        series = OrderedDict()
        series[f"W{i + 1}"] = (atoms, records[0].result["firms"][i]["endowment"])
        for r in records:
            series[f"after {r.mode}"] = (atoms, r.result["firms"][i]["position"])
        plots[f"group{group}_claims_firm{i + 1}.svg"] = line_chart(
            series, title=f"Firm {i + 1}: positions over the elementary events",
            xlabel="elementary event", ylabel="payoff",
        )
    return plots


def write_report(records, out_dir) -> tuple:
    text, plots, warnings = build_report(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.md"
    path.write_text(text)
    for name, svg in plots.items():
        (out / name).write_text(svg)
    return path, text, warnings
