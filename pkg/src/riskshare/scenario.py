"""Scenario files: a TOML description of one experiment.

A scenario names a probability space, a type grid and either two firms
(risk game) or a catalogue grid (profit game), plus solver settings::

    name = "example"
    kind = "risk"

    [space]
    atoms = 4                      # uniform weights, or
    # weights = [0.1, 0.2, 0.3, 0.4]

    [types]
    a = 0.1
    n = 6

    [[firms]]
    endowment = [-1.0, 0.0, 1.0, 0.5]
    risk = "entropic"
    risk_aversion = 2.0

    [[firms]]
    endowment = [0.5, -1.0, 0.0, 1.0]
    risk = "avar"
    tail_level = 0.1

    [solver]
    max_iter = 500
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from riskshare.game import TBR_MODES, CatalogueGrid
from riskshare.planner import FirmSpec
from riskshare.probability import ProbSpace, TypeGrid
from riskshare.risk import KINDS, RiskMeasure

GAME_KINDS = ("risk", "profit")


class ScenarioError(ValueError):
    """A scenario file is malformed; the message names the offending key."""


@dataclass(frozen=True)
class FirmConfig:
    endowment: tuple
    risk: str = "entropic"
    risk_aversion: float = 1.0
    tail_level: float = 0.05

    def to_spec(self, space: ProbSpace) -> FirmSpec:
        return FirmSpec(space.claim(self.endowment), RiskMeasure(self.risk, self.risk_aversion, self.tail_level))


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 500
    tol: float = 1e-12
    cube_size: float = 0.25
    min_cube: float = 1e-7
    max_cube: float = 4.0
    seed: int = 0
    n_starts: int = 1
    shared_schedule: bool = True
    freeze_tbr: float | None = None
    enforce_ir: bool = True


@dataclass(frozen=True)
class GameConfig:
    basic_products: tuple
    cost_rates: tuple
    prices: tuple
    price_bound: float = 10.0
    hull_resolution: float = 1.0
    variance_loading: tuple = (0.0, 0.0)
    menu_size: int = 1
    enumeration_cap: int = 500
    tbr_mode: str = "efficient"
    threshold: float = 0.01
    max_iter: int = 100_000


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    weights: tuple
    a: float
    n: int
    firms: tuple = ()
    game: GameConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    description: str = ""

    @property
    def space(self) -> ProbSpace:
        return ProbSpace(np.array(self.weights))

    @property
    def type_grid(self) -> TypeGrid:
        return TypeGrid(self.a, self.n)

    def firm_specs(self) -> tuple:
        space = self.space
        return tuple(f.to_spec(space) for f in self.firms)

    def catalogue_grid(self) -> CatalogueGrid:
        g, space = self.game, self.space
        return CatalogueGrid(
            basic_products=tuple(tuple(space.claim(p) for p in firm) for firm in g.basic_products),
            price_grid=np.array(g.prices),
            cost_rates=g.cost_rates,
            type_grid=self.type_grid,
            hull_resolution=g.hull_resolution,
            price_bound=g.price_bound,
            variance_loading=g.variance_loading,
        )

    def with_solver(self, **changes) -> Scenario:
        return replace(self, solver=replace(self.solver, **changes))

    def to_dict(self) -> dict:
        """Plain data with the same layout as the scenario file."""
        out = {"name": self.name, "kind": self.kind}
        if self.description:
            out["description"] = self.description
        w = np.array(self.weights)
        out["space"] = {"atoms": len(w)} if np.allclose(w, w[0], rtol=0, atol=0) else {"weights": list(self.weights)}
        out["types"] = {"a": self.a, "n": self.n}
        if self.firms:
            out["firms"] = [_firm_dict(f) for f in self.firms]
        if self.game is not None:
            g = asdict(self.game)
            g["basic_products"] = [[list(p) for p in firm] for firm in self.game.basic_products]
            g["cost_rates"] = [list(r) for r in self.game.cost_rates]
            g["prices"] = list(self.game.prices)
            g["variance_loading"] = list(self.game.variance_loading)
            out["game"] = g
        solver = asdict(self.solver)
        solver["freeze_tbr"] = "none" if self.solver.freeze_tbr is None else self.solver.freeze_tbr
        out["solver"] = solver
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; equal scenarios share a digest."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def _firm_dict(f: FirmConfig) -> dict:
    out = {"endowment": list(f.endowment), "risk": f.risk}
    if f.risk == "entropic":
        out["risk_aversion"] = f.risk_aversion
    else:
        out["tail_level"] = f.tail_level
    return out


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


# -- parsing -----------------------------------------------------------------


def _take(table: dict, key: str, where: str, kind, default=...):
    path = f"{where}.{key}" if where else key
    if key not in table:
        if default is ...:
            raise ScenarioError(f"missing required key '{path}'")
        return default
    value = table[key]
    try:
        return _coerce(value, kind, path)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"key '{path}': {exc}") from None


def _coerce(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"key '{path}': expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"key '{path}': expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"key '{path}': expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ScenarioError(f"key '{path}': expected a string, got {value!r}")
        return value
    if kind == "vector":
        if not isinstance(value, list) or not value:
            raise ScenarioError(f"key '{path}': expected a nonempty list of numbers")
        return tuple(_coerce(v, float, f"{path}[{i}]") for i, v in enumerate(value))
    raise AssertionError(kind)


def _reject_unknown(table: dict, allowed, where: str):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ScenarioError(f"unknown key '{where + '.' if where else ''}{extra[0]}'")


def _table(data: dict, key: str, required=True) -> dict:
    if key not in data:
        if required:
            raise ScenarioError(f"missing required table '[{key}]'")
        return {}
    if not isinstance(data[key], dict):
        raise ScenarioError(f"key '{key}' must be a table")
    return data[key]


def scenario_from_dict(data: dict) -> Scenario:
    _reject_unknown(data, ("name", "kind", "description", "space", "types", "firms", "game", "solver"), "")
    name = _take(data, "name", "", str)
    kind = _take(data, "kind", "", str)
    if kind not in GAME_KINDS:
        raise ScenarioError(f"key 'kind': expected one of {GAME_KINDS}, got {kind!r}")
    description = _take(data, "description", "", str, "")

    space = _table(data, "space")
    _reject_unknown(space, ("atoms", "weights"), "space")
    if ("atoms" in space) == ("weights" in space):
        raise ScenarioError("table 'space' needs exactly one of 'space.atoms' or 'space.weights'")
    if "atoms" in space:
        d = _take(space, "atoms", "space", int)
        if d < 2:
            raise ScenarioError("key 'space.atoms': a probability space needs at least 2 atoms")
        weights = tuple([1.0 / d] * d)
    else:
        weights = _take(space, "weights", "space", "vector")
    try:
        ProbSpace(np.array(weights))
    except ValueError as exc:
        raise ScenarioError(f"key 'space.weights': {exc}") from None
    d = len(weights)

    types = _table(data, "types", required=False)
    _reject_unknown(types, ("a", "n"), "types")
    a = _take(types, "a", "types", float, 0.05)
    n = _take(types, "n", "types", int, 6)
    try:
        TypeGrid(a, n)
    except ValueError as exc:
        raise ScenarioError(f"table 'types': {exc}") from None

    firms, game = (), None
    if kind == "risk":
        if "game" in data:
            raise ScenarioError("key 'game' is only allowed in profit scenarios")
        raw = data.get("firms")
        if not isinstance(raw, list) or len(raw) != 2:
            raise ScenarioError("key 'firms': a risk scenario needs exactly two [[firms]] tables")
        firms = tuple(_parse_firm(f, i, d) for i, f in enumerate(raw))
    else:
        if "firms" in data:
            raise ScenarioError("key 'firms' is only allowed in risk scenarios")
        game = _parse_game(_table(data, "game"), d)

    solver = _parse_solver(_table(data, "solver", required=False))
    return Scenario(name, kind, weights, a, n, firms, game, solver, description)


def _parse_firm(table, i, d) -> FirmConfig:
    where = f"firms[{i}]"
    if not isinstance(table, dict):
        raise ScenarioError(f"key '{where}' must be a table")
    _reject_unknown(table, ("endowment", "risk", "risk_aversion", "tail_level"), where)
    endowment = _take(table, "endowment", where, "vector")
    if len(endowment) != d:
        raise ScenarioError(f"key '{where}.endowment': {len(endowment)} payoffs for a {d}-atom space")
    risk = _take(table, "risk", where, str, "entropic")
    if risk not in KINDS:
        raise ScenarioError(f"key '{where}.risk': expected one of {KINDS}, got {risk!r}")
    cfg = FirmConfig(
        endowment,
        risk,
        _take(table, "risk_aversion", where, float, 1.0),
        _take(table, "tail_level", where, float, 0.05),
    )
    try:
        RiskMeasure(cfg.risk, cfg.risk_aversion, cfg.tail_level)
    except ValueError as exc:
        key = "risk_aversion" if risk == "entropic" else "tail_level"
        raise ScenarioError(f"key '{where}.{key}': {exc}") from None
    return cfg


def _parse_game(table, d) -> GameConfig:
    where = "game"
    _reject_unknown(table, [f.name for f in fields(GameConfig)], where)
    raw = table.get("basic_products")
    if not isinstance(raw, list) or len(raw) != 2 or not all(isinstance(r, list) and r for r in raw):
        raise ScenarioError("key 'game.basic_products': expected two nonempty lists of payoff vectors")
    products = []
    for i, firm in enumerate(raw):
        vecs = []
        for j, vec in enumerate(firm):
            v = _coerce(vec, "vector", f"game.basic_products[{i}][{j}]")
            if len(v) != d:
                raise ScenarioError(f"key 'game.basic_products[{i}][{j}]': {len(v)} payoffs for a {d}-atom space")
            vecs.append(v)
        products.append(tuple(vecs))
    rates = table.get("cost_rates")
    if not isinstance(rates, list) or len(rates) != 2:
        raise ScenarioError("key 'game.cost_rates': expected one list of rates per firm")
    rates = tuple(_coerce(r, "vector", f"game.cost_rates[{i}]") for i, r in enumerate(rates))
    for i, (r, p) in enumerate(zip(rates, products)):
        if len(r) != len(p):
            raise ScenarioError(f"key 'game.cost_rates[{i}]': one rate per basic product expected")
    cfg = GameConfig(
        basic_products=tuple(products),
        cost_rates=rates,
        prices=_take(table, "prices", where, "vector"),
        price_bound=_take(table, "price_bound", where, float, 10.0),
        hull_resolution=_take(table, "hull_resolution", where, float, 1.0),
        variance_loading=_take(table, "variance_loading", where, "vector", (0.0, 0.0)),
        menu_size=_take(table, "menu_size", where, int, 1),
        enumeration_cap=_take(table, "enumeration_cap", where, int, 500),
        tbr_mode=_take(table, "tbr_mode", where, str, "efficient"),
        threshold=_take(table, "threshold", where, float, 0.01),
        max_iter=_take(table, "max_iter", where, int, 100_000),
    )
    if cfg.tbr_mode not in TBR_MODES[:2]:
        raise ScenarioError(f"key 'game.tbr_mode': expected 'efficient' or 'worst_case', got {cfg.tbr_mode!r}")
    return cfg


def _parse_solver(table) -> SolverConfig:
    where = "solver"
    _reject_unknown(table, [f.name for f in fields(SolverConfig)], where)
    defaults = SolverConfig()
    freeze = table.get("freeze_tbr", "none")
    try:
        freeze = parse_freeze_tbr(freeze)
    except ValueError as exc:
        raise ScenarioError(f"key 'solver.freeze_tbr': {exc}") from None
    return SolverConfig(
        max_iter=_take(table, "max_iter", where, int, defaults.max_iter),
        tol=_take(table, "tol", where, float, defaults.tol),
        cube_size=_take(table, "cube_size", where, float, defaults.cube_size),
        min_cube=_take(table, "min_cube", where, float, defaults.min_cube),
        max_cube=_take(table, "max_cube", where, float, defaults.max_cube),
        seed=_take(table, "seed", where, int, defaults.seed),
        n_starts=_take(table, "n_starts", where, int, defaults.n_starts),
        shared_schedule=_take(table, "shared_schedule", where, bool, defaults.shared_schedule),
        freeze_tbr=freeze,
        enforce_ir=_take(table, "enforce_ir", where, bool, defaults.enforce_ir),
    )


def parse_freeze_tbr(value) -> float | None:
    """``"none"`` or None leaves the TBR free; otherwise a value in [0, 1]."""
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    if isinstance(value, bool):
        raise ValueError(f"expected 'none' or a number in [0, 1], got {value!r}")
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected 'none' or a number in [0, 1], got {value!r}") from None
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"expected a number in [0, 1], got {value!r}")
    return f


def loads(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"invalid TOML: {exc}") from None
    return scenario_from_dict(data)


def dumps(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario.to_dict())


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ScenarioError as exc:
        raise ScenarioError(f"{path.name}: {exc}") from None


def dump(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps(scenario))


# -- bundled scenarios ---------------------------------------------------------


def bundled_names() -> list:
    files = resources.files("riskshare") / "scenarios"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def bundled(name: str) -> Scenario:
    """Load a scenario shipped with the package by name."""
    path = resources.files("riskshare") / "scenarios" / f"{name}.toml"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}; known: {', '.join(bundled_names())}")
    return loads(path.read_text())


def resolve(name_or_path: str) -> Scenario:
    """A bundled scenario name or a path to a scenario file."""
    if name_or_path in bundled_names():
        return bundled(name_or_path)
    return load(name_or_path)
