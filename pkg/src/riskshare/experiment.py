"""Run a scenario and persist its result as a deterministic record."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from riskshare import __version__
from riskshare.game import MixedNashSolver
from riskshare.market import reconstruct_v
from riskshare.planner import SocialPlanner, collinearity_check, entropic_fixed_point_residual, transfer_sea
from riskshare.scenario import Scenario, canonical_json, dumps
from riskshare.svg import line_chart


class SolverFailure(RuntimeError):
    """The solver raised or produced a non-finite result."""


def mode_label(freeze_tbr) -> str:
    if freeze_tbr is None:
        return "duopoly"
    if freeze_tbr == 1.0:
        return "monopoly-1"
    if freeze_tbr == 0.0:
        return "monopoly-2"
    return f"fixed-tbr-{freeze_tbr:g}"


def git_blob_digest(data: bytes) -> str:
    """SHA-1 of ``data`` as git would hash it as a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _floats(values) -> list:
    return [float(v) for v in np.ravel(values)]


@dataclass
class ExperimentRecord:
    """Everything a run produced except wall time, which lives in a sidecar."""

    scenario: str
    mode: str
    scenario_hash: str
    input_digest: str
    result: dict
    tool_version: str = __version__
    trace: list = field(default_factory=list, repr=False)
    plots: dict = field(default_factory=dict, repr=False)
    tables: dict = field(default_factory=dict, repr=False)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def stem(self) -> str:
        return f"{self.scenario}-{self.mode}-{self.input_digest[:12]}"

    def to_json(self) -> str:
        body = {
            "scenario": self.scenario,
            "mode": self.mode,
            "scenario_hash": self.scenario_hash,
            "input_digest": self.input_digest,
            "tool_version": self.tool_version,
            "result": self.result,
        }
        return json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ExperimentRecord:
        data = json.loads(text)
        return cls(
            scenario=data["scenario"],
            mode=data["mode"],
            scenario_hash=data["scenario_hash"],
            input_digest=data["input_digest"],
            result=data["result"],
            tool_version=data["tool_version"],
        )

    def write(self, out_dir) -> Path:
        """Persist the record, trace, tables and plots under ``out_dir``.

        Records are append-only: an existing record with different content
        is never overwritten; the new one gets a numbered suffix instead.
        """
        out = Path(out_dir)
        records = out / "records"
        records.mkdir(parents=True, exist_ok=True)
        text = self.to_json()
        path = records / f"{self.stem}.json"
        k = 1
        while path.exists() and path.read_text() != text:
            path = records / f"{self.stem}.{k}.json"
            k += 1
        path.write_text(text)
        base = path.name[: -len(".json")]
        timing = {"wall_time_seconds": round(self.wall_time, 6), "record": path.name}
        (records / f"{base}.timing.json").write_text(json.dumps(timing, sort_keys=True) + "\n")
        if self.trace:
            (records / f"{base}.trace.csv").write_text(_csv(["sweep", "aggregate"], list(enumerate(self.trace))))
        for name, text_ in self.tables.items():
            (records / f"{base}.{name}").write_text(text_)
        if self.plots:
            plots = out / "plots" / base
            plots.mkdir(parents=True, exist_ok=True)
            for name, svg in self.plots.items():
                (plots / name).write_text(svg)
        return path


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def planner_for(scenario: Scenario) -> SocialPlanner:
    s = scenario.solver
    return SocialPlanner(
        type_lower=scenario.a,
        n_cells=scenario.n,
        shared_schedule=s.shared_schedule,
        freeze_tbr=s.freeze_tbr,
        enforce_ir=s.enforce_ir,
        max_iter=s.max_iter,
        tol=s.tol,
        cube_size=s.cube_size,
        min_cube=s.min_cube,
        max_cube=s.max_cube,
        n_starts=s.n_starts,
        seed=s.seed,
    )


def _risk_result(scenario: Scenario):
    firms = scenario.firm_specs()
    planner = planner_for(scenario)
    try:
        planner.fit(firms)
    except Exception as exc:  # noqa: BLE001 - any solver error is reported as a failure
        raise SolverFailure(f"planner failed: {exc}") from exc
    r = planner.result_
    if not np.isfinite(r.aggregate):
        raise SolverFailure("planner returned a non-finite aggregate")
    x, grid = r.decision, r.grid
    profiles = [reconstruct_v(x.schedule(i, grid)) for i in range(2)]
    transfer, rent = transfer_sea(r)
    firm_rows = []
    for i, firm in enumerate(firms):
        position = firm.endowment.payoffs - r.aggregators[i] * x.beta[i]
        row = {
            "risk_measure": firm.risk.describe(),
            "endowment": _floats(firm.endowment.payoffs),
            "claim": _floats(x.beta[i]),
            "position": _floats(position),
            "initial_risk": float(r.initial_risk[i]),
            "risk": float(r.risk[i]),
            "income": float(r.income[i]),
            "assessment": float(r.assessment[i]),
            "aggregator": float(r.aggregators[i]),
            "ir_satisfied": bool(r.ir_satisfied[i]),
        }
        if firm.risk.kind == "entropic":
            row["fixed_point_residual"] = entropic_fixed_point_residual(firm, r.aggregators[i], x.beta[i])
        firm_rows.append(row)
    col = collinearity_check(r)
    result = {
        "kind": "risk",
        "space": {"atoms": scenario.space.atom_count, "weights": _floats(scenario.weights)},
        "types": {"a": scenario.a, "n": scenario.n, "midpoints": _floats(grid.midpoints)},
        "shared_schedule": r.shared,
        "freeze_tbr": scenario.solver.freeze_tbr,
        "seed": scenario.solver.seed,
        "firms": firm_rows,
        "initial_aggregate": r.initial_aggregate,
        "aggregate": float(r.aggregate),
        "fix_mix_K": r.fix_mix_K,
        "transfer": None if transfer is None else {"T": float(transfer), "rent": float(rent)},
        "rent": float(rent),
        "schedules": [
            {"tail": float(x.tail[i]), "alpha": _floats(x.alpha[i]), "v": _floats(profiles[i].v),
             "root": _floats(profiles[i].root)}
            for i in range(2)
        ],
        "tbr": _floats(x.tbr),
        "collinearity_residual": col.max_residual,
        "iterations": r.iterations,
        "converged": r.converged,
        "notes": list(r.notes),
    }
    return result, [float(t) for t in r.trace], _risk_plots(result, grid)


def _risk_plots(result, grid) -> dict:
    atoms = np.arange(1, result["space"]["atoms"] + 1)
    plots = {}
    for i, firm in enumerate(result["firms"]):
        plots[f"claims_firm{i + 1}.svg"] = line_chart(
            {f"W{i + 1}": (atoms, firm["endowment"]), f"W{i + 1} - a{i + 1} Z{i + 1}": (atoms, firm["position"])},
            title=f"Firm {i + 1}: position before and after trading",
            xlabel="elementary event",
            ylabel="payoff",
        )
    mids = grid.midpoints
    plots["indirect_utility.svg"] = line_chart(
        {f"v{i + 1}": (mids, s["v"]) for i, s in enumerate(result["schedules"])},
        title="Indirect utility at cell midpoints",
        xlabel="type theta",
        ylabel="v(theta)",
    )
    plots["tbr.svg"] = line_chart(
        {"firm 1 share": (grid.edges, result["tbr"] + result["tbr"][-1:])},
        title="Tie-breaking rule",
        xlabel="type theta",
        ylabel="f1(theta)",
        step=True,
        markers=False,
    )
    return plots


def _profit_result(scenario: Scenario):
    g = scenario.game
    grid = scenario.catalogue_grid()
    solver = MixedNashSolver(
        enumeration_cap=g.enumeration_cap,
        menu_size=g.menu_size,
        max_iter=g.max_iter,
        threshold=g.threshold,
        tbr_mode=g.tbr_mode,
        seed=scenario.solver.seed,
    )
    try:
        solver.fit(grid)
    except Exception as exc:  # noqa: BLE001
        raise SolverFailure(f"equilibrium search failed: {exc}") from exc
    r = solver.result_
    a, b = r.tables
    x, y = r.profile.probs
    support = r.profile.support()
    result = {
        "kind": "profit",
        "space": {"atoms": scenario.space.atom_count, "weights": _floats(scenario.weights)},
        "types": {"a": scenario.a, "n": scenario.n},
        "tbr_mode": g.tbr_mode,
        "strategy_counts": [len(s) for s in r.strategies],
        "method": r.method,
        "eps": float(r.eps),
        "certified": bool(r.certified),
        "iterations": r.iterations,
        "expected_payoffs": [float(x @ a @ y), float(x @ b @ y)],
        "support": [
            [{"catalogue": [list(c) for c in r.strategies[i][k].contracts], "prob": float(p[k])} for k in support[i]]
            for i, p in enumerate((x, y))
        ],
    }
    tables = {}
    for name, t in (("payoff1.csv", a), ("payoff2.csv", b)):
        tables[name] = _csv(["row"] + [f"c{j}" for j in range(t.shape[1])],
                            [[i] + [repr(float(v)) for v in row] for i, row in enumerate(t)])
    return result, [float(e) for e in r.trace], {}, tables


def run_scenario(scenario: Scenario) -> ExperimentRecord:
    """Solve ``scenario`` and package the outcome as an :class:`ExperimentRecord`."""
    start = time.perf_counter()
    tables = {}
    if scenario.kind == "risk":
        result, trace, plots = _risk_result(scenario)
        mode = mode_label(scenario.solver.freeze_tbr)
    else:
        result, trace, plots, tables = _profit_result(scenario)
        mode = "nash"
    text = dumps(scenario).encode()
    return ExperimentRecord(
        scenario=scenario.name,
        mode=mode,
        scenario_hash=scenario.digest(),
        input_digest=git_blob_digest(text + canonical_json({"tool_version": __version__}).encode()),
        result=result,
        trace=trace,
        plots=plots,
        tables=tables,
        wall_time=time.perf_counter() - start,
    )


def summary_lines(record: ExperimentRecord) -> list:
    """Human-readable summary of one record."""
    r = record.result
    lines = [f"scenario {record.scenario} ({record.mode}), digest {record.input_digest[:12]}"]
    if r["kind"] == "risk":
        lines.append(f"{'':18s}{'initial':>10s}{'final':>10s}  IR")
        for i, f in enumerate(r["firms"]):
            ir = "ok" if f["ir_satisfied"] else "VIOLATED"
            lines.append(f"firm {i + 1} ({f['risk_measure']})".ljust(18)
                         + f"{f['initial_risk']:10.4f}{f['assessment']:10.4f}  {ir}")
        lines.append(f"{'aggregate':18s}{r['initial_aggregate']:10.4f}{r['aggregate']:10.4f}")
        if r["fix_mix_K"] is not None:
            lines.append(f"fix-mix K          {r['fix_mix_K']:.4f}")
        lines.append(f"sweeps {r['iterations']}, converged {r['converged']}")
    else:
        lines.append(f"strategies per firm {r['strategy_counts']}, method {r['method']}")
        lines.append(f"expected payoffs {r['expected_payoffs'][0]:.6f} / {r['expected_payoffs'][1]:.6f}")
        lines.append(f"eps certificate {r['eps']:.3g} ({'certified' if r['certified'] else 'NOT certified'})")
    return lines
