import json
import math

import mpmath
import numpy as np
import pytest
import scipy.stats as ss
from hypothesis import given, settings, strategies as st
from scipy import special
from scipy.spatial.distance import jensenshannon

from regionsim.stats import TestResult as Result
from regionsim.stats import (color, fidelity_report, fmt_msd, jsd, kde_diag, levene, policy_table,
                             reference_row, rows_to_csv, skewness, spearman, welch_t)


def test_welch_examples():
    r = welch_t([1, 2, 3], [1, 2, 3])
    assert (r.statistic, r.p) == (0.0, 1.0)
    r = welch_t([1, 2, 3, 4], [3, 4, 5, 6])
    assert r.statistic == pytest.approx(-2.0 / math.sqrt(5 / 6), abs=1e-12)
    assert r.statistic == pytest.approx(-2.1909, abs=1e-4)
    assert r.df == pytest.approx(6.0, abs=1e-12)
    ref = ss.ttest_ind([1, 2, 3, 4], [3, 4, 5, 6], equal_var=False)
    assert r.p == pytest.approx(ref.pvalue, abs=1e-12)
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, 30)
    assert welch_t(x, x + 100).p < 0.001


def test_welch_degenerate(caplog):
    with caplog.at_level("WARNING"):
        assert welch_t([2, 2], [2, 2, 2]).p == 1.0
        assert welch_t([2, 2], [3, 3]).p == 0.0
    assert "zero variance" in caplog.text
    with pytest.raises(ValueError):
        welch_t([1], [1, 2])


def test_levene_examples():
    r = levene([1, 2, 3], [1, 2, 3])
    assert (r.statistic, r.p) == (0.0, 1.0)
    x, y = [10, 20, 30], [1, 2, 3]
    r = levene(x, y)
    # deviations {10,0,10} and {1,0,1}: between 54, within 202/3
    assert r.statistic == pytest.approx(4 * 54 / (202 / 3), abs=1e-12)
    ref = ss.levene(x, y, center="mean")
    assert r.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert r.p == pytest.approx(ref.pvalue, abs=1e-12)
    assert levene(y, x) == r
    med = levene(x, y, center="median")
    assert med.p == pytest.approx(ss.levene(x, y, center="median").pvalue, abs=1e-12)


def test_jsd_examples():
    assert jsd([0.2, 0.8], [0.2, 0.8]) == 0.0
    expected = 0.5 * 1 * math.log2(1 / 0.75) + 0.5 * (0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25))
    assert jsd([1, 0], [0.5, 0.5]) == pytest.approx(expected, abs=1e-12)
    assert jsd([1, 0], [0.5, 0.5]) == pytest.approx(0.3113, abs=1e-4)
    assert jsd([1, 0, 0], [0, 0, 1]) == pytest.approx(1.0, abs=1e-12)
    assert jsd([2, 2], [1, 1]) == 0.0
    with pytest.raises(ValueError):
        jsd([1, -0.1], [0.5, 0.5])
    with pytest.raises(ValueError):
        jsd([1, 0], [1, 0, 0])


def test_spearman_examples(caplog):
    assert spearman([1, 2, 3, 4], [2, 5, 9, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-12)
    x = np.arange(10.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    with caplog.at_level("WARNING"):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])


def test_skewness_and_kde():
    assert skewness([-2, -1, 0, 1, 2]) == 0.0
    rng = np.random.default_rng(0)
    x = rng.gamma(2.0, size=500)
    assert skewness(x) == pytest.approx(ss.skew(x, bias=False), abs=1e-12)
    ones = sum(kde_diag(np.random.default_rng(s).normal(size=1000))[0] == 1 for s in range(40))
    assert ones >= 38
    mix = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 1, 500)])
    assert kde_diag(mix)[0] == 2
    assert kde_diag([1, 2, 3, 4]) is None


def test_stars_and_colors():
    assert Result(0, 1, 0.04).stars == "*"
    assert Result(0, 1, 0.0005).stars == "***"
    assert Result(0, 1, 0.2).stars == ""
    ok, bad = Result(0, 1, 0.5), Result(0, 1, 0.01)
    assert color(ok, ok) == "green" and color(ok, bad) == "yellow" and color(bad, ok) == "yellow"
    assert color(bad, bad) == "red"


def test_reference_row_format():
    # a sample whose mean and sd are exactly 93.7 and 42.3
    d = 42.3
    row = reference_row({"shots": [93.7 - d, 93.7, 93.7 + d]})
    assert row["Shots"] == "93.7 ± 42.3"
    assert fmt_msd([1.0, 3.0], 2) == "2.00 ± 1.41"


def test_bootstrap_self_consistency():
    rng = np.random.default_rng(0)
    obs = {"nodes": rng.poisson(38, 60).astype(float), "shots": rng.gamma(5, 20, 60)}
    greens = 0
    for _ in range(20):
        gen = {k: rng.choice(v, 600) for k, v in obs.items()}
        rep = fidelity_report(gen, obs)
        greens += all(d["color"] == "green" for d in rep.outcomes.values())
    assert greens >= 14


def test_delta_rho_sign_and_tables():
    rng = np.random.default_rng(1)
    gv = [(int(r), float(t), float(s), float(v)) for r, t, s, v in
          zip(rng.integers(0, 3, 200), rng.gamma(3, 3, 200), rng.poisson(3, 200), rng.poisson(1, 200))]
    ov = gv[::2]
    gen = {"victims": [1.0, 2.0, 3.0]}
    rep = fidelity_report(gen, gen, gv, ov, label="region-sampling")
    for pair in ("t,s", "t,v"):
        assert rep.delta_rho[pair] == pytest.approx(rep.rho[pair] - rep.rho[f"{pair} emp"])
    assert 0 <= rep.jsd["time"] <= 1
    assert set(rep.metadata["value_jsd"]) == {"time", "shots", "victims"}
    row = rep.outcome_row()
    assert row["Victims"].endswith("✓✓") and row["Victims color"] == "green"
    assert "JSD Time" in rep.fidelity_row()
    json.loads(rep.to_json())
    assert rows_to_csv([row]).splitlines()[0].startswith("Model,Victims")


def test_policy_table_delta():
    rows = policy_table({"none": [10.0, 10.0], "pursue": [5.0, 6.0]})
    assert rows[0]["Delta"] == "--"
    assert rows[1]["Delta"] == "-45.0%"


# brute-force special-function oracle on a probe grid
PROBES = [-6.0, -3.2, -1.0, -0.1, 0.0, 0.4, 1.7, 4.5]


def test_special_functions_vs_quadrature():
    mpmath.mp.dps = 30
    phi = lambda t: mpmath.exp(-t * t / 2) / mpmath.sqrt(2 * mpmath.pi)
    for z in PROBES:
        ref = float(mpmath.quad(phi, [-mpmath.inf, z]))
        assert special.ndtr(z) == pytest.approx(ref, rel=1e-8, abs=1e-300)
        assert special.ndtr(special.ndtri(ref)) == pytest.approx(ref, rel=1e-8)
    for df in (2.5, 6.0, 30.0):
        c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
        dens = lambda t: c * (1 + t * t / df) ** (-(df + 1) / 2)
        for t in PROBES:
            ref = float(mpmath.quad(dens, [-mpmath.inf, t]))
            assert special.stdtr(df, t) == pytest.approx(ref, rel=1e-8)
    for d1, d2 in ((1.0, 4.0), (1.0, 58.0)):
        c = 1 / mpmath.beta(d1 / 2, d2 / 2) * (d1 / d2) ** (d1 / 2)
        dens = lambda x: c * x ** (d1 / 2 - 1) * (1 + d1 * x / d2) ** (-(d1 + d2) / 2)
        for w in (0.05, 0.5, 3.2, 12.0):
            ref = float(mpmath.quad(dens, [w, mpmath.inf]))
            assert special.fdtrc(d1, d2, w) == pytest.approx(ref, rel=1e-8)


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=30)


@settings(max_examples=60, deadline=None)
@given(samples, samples, st.randoms(use_true_random=False))
def test_reorder_invariance(x, y, rnd):
    if np.var(x) == 0 and np.var(y) == 0:
        return
    xs, ys = list(x), list(y)
    rnd.shuffle(xs)
    rnd.shuffle(ys)
    for f in (welch_t, levene):
        a, b = f(x, y), f(xs, ys)
        assert a.p == pytest.approx(b.p, abs=1e-9)
        assert 0 <= a.p <= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=10).filter(lambda v: sum(v) > 0),
       st.integers(0, 10 ** 6))
def test_jsd_properties(p, seed):
    q = np.random.default_rng(seed).uniform(0, 1, len(p))
    a, b = jsd(p, q), jsd(q, p)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0 <= a <= 1
    assert jsd(p, p) == pytest.approx(0.0, abs=1e-12)
    pn, qn = np.array(p) / sum(p), q / q.sum()
    assert a == pytest.approx(jensenshannon(pn, qn, base=2) ** 2, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-100, 100), st.integers(-100, 100)), min_size=3, max_size=25))
def test_spearman_monotone_invariance(pairs):
    x, y = np.array(pairs, float).T
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    r = spearman(x, y)
    assert spearman(np.exp(x / 50), y ** 3) == pytest.approx(r, abs=1e-9)
    assert spearman(x, y) == pytest.approx(ss.spearmanr(x, y).statistic, abs=1e-9)
