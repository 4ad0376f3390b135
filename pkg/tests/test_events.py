import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regionsim.events import EventModel, VariantKind, gen_outcome, outcome_spec, resolve_level
from regionsim.traces import MomentTable, Moments
from regionsim.truncnorm import trunc_moments

METRICS = ("time", "shots", "victims")


def table(region_cells, group_cells, glob, groups, rates=None, budget=None):
    """``*_cells`` map key -> Moments used for every metric."""
    cells = {"region": {r: {o: m for o in METRICS} for r, m in region_cells.items()},
             "group": {g: {o: m for o in METRICS} for g, m in group_cells.items()},
             "global": {"all": {o: glob for o in METRICS}}}
    rates = rates or {lvl: {} for lvl in ("region", "group")}
    rates.setdefault("global", {"all": (0.1, 0.05)})
    budget = budget or {r: 10.0 for r in groups}
    return MomentTable(cells, rates, budget, groups)


def test_variant_parse():
    v = VariantKind.parse("group-coupling")
    assert (v.pooling, v.generation) == ("group", "coupling")
    assert str(v) == "group-coupling"
    with pytest.raises(ValueError):
        VariantKind.parse("region-bogus")


def test_fallback_examples():
    t = table({0: Moments(3, 5.0, 1.0, 8.0), 1: Moments(12, 5.0, 1.0, 8.0), 2: Moments(12, 5.0, 0.0, 5.0)},
              {"hallway": Moments(40, 6.0, 2.0, 9.0)}, Moments(100, 7.0, 3.0, 12.0),
              {0: "hallway", 1: "hallway", 2: "hallway"})
    assert resolve_level(0, "time", t, 8)[1] == "group"
    assert resolve_level(1, "time", t, 8)[1] == "region"
    assert resolve_level(2, "time", t, 8)[1] == "group"
    # pooling starts coarser for group/global variants
    assert resolve_level(1, "time", t, 8, start="group")[1] == "group"
    assert resolve_level(1, "time", t, 8, start="global")[1] == "global"


def test_degenerate_global_is_deterministic():
    t = table({0: Moments(1, 4.0, 0.0, 4.0)}, {}, Moments(1, 4.0, 0.0, 4.0), {0: "hallway"})
    m, lvl = resolve_level(0, "time", t)
    assert lvl == "global"
    x = gen_outcome(0, VariantKind("sampling"), t, 300.0, np.random.default_rng(0))
    assert x[0] == 4.0


def test_empty_global_rejected():
    t = table({}, {}, Moments(0, 0.0, 0.0, 0.0), {0: "hallway"})
    with pytest.raises(ValueError):
        resolve_level(0, "time", t)


def rich_table():
    groups = {0: "hallway", 1: "classroom"}
    return table({0: Moments(30, 10.0, 9.0, 20.0), 1: Moments(30, 20.0, 16.0, 30.0)},
                 {"hallway": Moments(30, 10.0, 9.0, 20.0), "classroom": Moments(30, 20.0, 16.0, 30.0)},
                 Moments(60, 15.0, 30.0, 30.0), groups,
                 rates={"region": {0: (0.3, 0.1), 1: (0.2, 0.05)}, "group": {}}, budget={0: 5.0, 1: 7.0})


def test_coupling_substitution():
    t = rich_table()
    rng = np.random.default_rng(0)
    d, s, v = gen_outcome(0, VariantKind("coupling"), t, 300.0, rng)
    assert s == pytest.approx(d * 0.3)
    assert v == pytest.approx(min(d * 0.1, 20.0))


def test_means_variant_is_constant():
    t = rich_table()
    rng = np.random.default_rng(0)
    outs = {gen_outcome(1, VariantKind("means"), t, 300.0, rng) for _ in range(20)}
    assert outs == {(20.0, 20.0, 20.0)}


def test_sampling_matches_table():
    t = rich_table()
    rng = np.random.default_rng(1)
    draws = np.array([gen_outcome(0, VariantKind("sampling"), t, 300.0, rng) for _ in range(10_000)])
    for col, upper in ((0, 300.0), (1, math.inf), (2, 20.0)):
        m, v = trunc_moments(outcome_spec(Moments(30, 10.0, 9.0, 20.0), 0.0, upper))
        assert abs(draws[:, col].mean() - m) < 4 * math.sqrt(v / len(draws))
        assert draws[:, col].var() == pytest.approx(v, rel=0.06)


def test_dwell_respects_cap_and_support():
    t = rich_table()
    rng = np.random.default_rng(2)
    for cap in (3.0, 12.0, 300.0):
        for _ in range(500):
            d, s, v = gen_outcome(1, VariantKind("sampling"), t, cap, rng)
            assert 0 <= d <= cap and s >= 0 and 0 <= v <= 30.0


def test_coupling_rate_consistency():
    t = rich_table()
    rng = np.random.default_rng(3)
    d = s = 0.0
    for _ in range(100_000):
        x = gen_outcome(0, VariantKind("coupling"), t, 300.0, rng)
        d, s = d + x[0], s + x[1]
    assert s / d == pytest.approx(0.3, rel=0.02)


def test_event_model_json_and_diagnostics():
    em = EventModel(rich_table(), VariantKind("sampling", "group"), 5)
    back = EventModel.from_json(em.to_json())
    assert back.variant == em.variant and back.n_min == 5 and back.table.cells == em.table.cells
    csv = em.diagnostics_csv([0, 1])
    assert csv.splitlines()[0] == "region,outcome,n,mean,var,max,level_used,clamped"
    assert len(csv.splitlines()) == 7
    assert em.victim_budget(1) == 7.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 20), st.floats(0.0, 5.0), st.integers(0, 60), st.floats(0.0, 5.0), st.integers(5, 10))
def test_fallback_rule_is_pure(n_r, v_r, n_g, v_g, n_min):
    t = table({0: Moments(n_r, 3.0, v_r, 6.0)}, {"hallway": Moments(n_g, 4.0, v_g, 8.0)},
              Moments(100, 5.0, 1.0, 9.0), {0: "hallway"})
    expected = "region" if n_r >= n_min and v_r > 0 else ("group" if n_g >= n_min and v_g > 0 else "global")
    assert resolve_level(0, "shots", t, n_min)[1] == expected
