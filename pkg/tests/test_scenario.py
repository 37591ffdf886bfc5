import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskshare.scenario import (
    Scenario,
    ScenarioError,
    bundled,
    bundled_names,
    dump,
    dumps,
    load,
    loads,
    parse_freeze_tbr,
    resolve,
)

MINIMAL = """
name = "mini"
kind = "risk"

[space]
atoms = 3

[[firms]]
endowment = [-1.0, 0.0, 1.0]
risk = "entropic"
risk_aversion = 2.0

[[firms]]
endowment = [0.5, -0.5, 0.0]
risk = "avar"
tail_level = 0.3
"""


def edit(text, old, new):
    assert old in text
    return text.replace(old, new, 1)


class TestBundled:
    def test_names(self):
        assert bundled_names() == ["avar-duopoly", "entropic-duopoly", "profit-desk"]

    @pytest.mark.parametrize("name", ["avar-duopoly", "entropic-duopoly", "profit-desk"])
    def test_round_trip(self, name):
        s = bundled(name)
        assert loads(dumps(s)) == s
        assert loads(dumps(s)).digest() == s.digest()

    def test_entropic_contents(self, entropic_scenario):
        s = entropic_scenario
        assert s.kind == "risk" and s.a == 0.1 and s.n == 6
        assert s.space.is_uniform and s.space.atom_count == 14
        assert [f.risk_aversion for f in s.firms] == [2.0, 2.0]
        assert s.solver.freeze_tbr is None

    def test_unknown_bundled(self):
        with pytest.raises(ScenarioError, match="no bundled scenario"):
            bundled("nope")

    def test_catalogue_grid(self):
        grid = bundled("profit-desk").catalogue_grid()
        assert grid.product_count(0) == 4
        assert grid.type_grid.n == 6


class TestParsing:
    def test_defaults(self):
        s = loads(MINIMAL)
        assert s.a == 0.05 and s.n == 6
        assert s.solver.max_iter == 500 and s.solver.freeze_tbr is None
        assert s.firm_specs()[1].risk.tail_level == 0.3

    def test_explicit_weights(self):
        s = loads(edit(MINIMAL, "atoms = 3", "weights = [0.2, 0.3, 0.5]"))
        np.testing.assert_allclose(s.space.atom_weights, [0.2, 0.3, 0.5])
        assert loads(dumps(s)) == s

    @pytest.mark.parametrize("old, new, key", [
        ('kind = "risk"', 'kind = "risk"\nbogus = 1', "bogus"),
        ('risk_aversion = 2.0', 'risk_aversion = 2.0\ncolour = "red"', "firms[0].colour"),
        ('risk_aversion = 2.0', 'risk_aversion = "high"', "firms[0].risk_aversion"),
        ('risk_aversion = 2.0', 'risk_aversion = -1.0', "firms[0].risk_aversion"),
        ('tail_level = 0.3', 'tail_level = 1.5', "firms[1].tail_level"),
        ('endowment = [-1.0, 0.0, 1.0]', 'endowment = [-1.0, 0.0]', "firms[0].endowment"),
        ('endowment = [0.5, -0.5, 0.0]', 'endowment = [0.5, "x", 0.0]', "firms[1].endowment[1]"),
        ('risk = "avar"', 'risk = "var"', "firms[1].risk"),
        ('atoms = 3', 'atoms = 1', "space.atoms"),
        ('atoms = 3', 'weights = [0.5, 0.6, 0.1]', "space.weights"),
        ('kind = "risk"', 'kind = "poker"', "kind"),
        ('name = "mini"', '', "name"),
    ])
    def test_errors_name_the_key(self, old, new, key):
        with pytest.raises(ScenarioError, match=f"'{key}'".replace("[", r"\[").replace("]", r"\]")):
            loads(edit(MINIMAL, old, new))

    def test_solver_errors(self):
        with pytest.raises(ScenarioError, match="solver.max_iter"):
            loads(MINIMAL + "\n[solver]\nmax_iter = 1.5\n")
        with pytest.raises(ScenarioError, match="solver.freeze_tbr"):
            loads(MINIMAL + '\n[solver]\nfreeze_tbr = "sometimes"\n')
        with pytest.raises(ScenarioError, match="solver.shared_schedule"):
            loads(MINIMAL + "\n[solver]\nshared_schedule = 1\n")

    def test_kind_specific_tables(self):
        with pytest.raises(ScenarioError, match="'game'"):
            loads(MINIMAL + "\n[game]\nprices = [0.1]\n")
        profit = dumps(bundled("profit-desk"))
        with pytest.raises(ScenarioError, match="'firms'"):
            loads(profit + '\n[[firms]]\nendowment = [1.0, 2.0, 3.0, 4.0]\n')

    def test_game_errors(self):
        profit = dumps(bundled("profit-desk"))
        with pytest.raises(ScenarioError, match="game.tbr_mode"):
            loads(profit.replace('tbr_mode = "efficient"', 'tbr_mode = "fixed"'))
        with pytest.raises(ScenarioError, match="game.prices"):
            loads(profit.replace("prices = [", "prices = [true, "))

    def test_invalid_toml_reports_line(self):
        with pytest.raises(ScenarioError, match="line"):
            loads('name = "x"\nkind = \n')

    def test_two_firms_required(self):
        head = MINIMAL.split("[[firms]]")[0]
        with pytest.raises(ScenarioError, match="two"):
            loads(head + "[[firms]]\nendowment = [1.0, 2.0, 3.0]\n")


class TestFiles:
    def test_dump_load(self, tmp_path):
        s = loads(MINIMAL)
        path = tmp_path / "s.toml"
        dump(s, path)
        assert load(path) == s
        assert resolve(str(path)) == s

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot read"):
            load(tmp_path / "missing.toml")

    def test_error_carries_file_name(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(edit(MINIMAL, 'kind = "risk"', 'kind = "risk"\nbogus = 1'))
        with pytest.raises(ScenarioError, match="bad.toml: unknown key 'bogus'"):
            load(path)

    def test_resolve_bundled(self):
        assert resolve("avar-duopoly").name == "avar-duopoly"


class TestFreezeTbr:
    @pytest.mark.parametrize("value, expected", [("none", None), (None, None), ("0", 0.0), (1, 1.0), ("0.25", 0.25)])
    def test_values(self, value, expected):
        assert parse_freeze_tbr(value) == expected

    @pytest.mark.parametrize("value", ["2", -0.1, True, "x"])
    def test_invalid(self, value):
        with pytest.raises(ValueError):
            parse_freeze_tbr(value)


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3),
    st.floats(0.01, 0.99),
    st.integers(1, 40),
    st.sampled_from([None, 0.0, 1.0, 0.5]),
    st.integers(0, 2**31),
)
def test_round_trip_property(endowment, a, n, freeze, seed):
    s = loads(MINIMAL)
    firms = (type(s.firms[0])(tuple(endowment), "entropic", 1.5, 0.05), s.firms[1])
    s = Scenario(s.name, s.kind, s.weights, a, n, firms, None, s.solver, "generated")
    s = s.with_solver(freeze_tbr=freeze, seed=seed)
    back = loads(dumps(s))
    assert back == s
    assert back.digest() == s.digest()
