"""Two-sample tests, divergences and the comparison tables used to judge
generated rollouts against observed episodes."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special
from scipy.stats import rankdata

log = logging.getLogger(__name__)

ALPHA = 0.05
STAR_LEVELS = (0.05, 0.01, 0.001)
SUMMARY_COLUMNS = ("nodes", "time", "shots", "victims")
TABLE_HEADERS = {"nodes": "Nodes", "time": "Time", "shots": "Shots", "victims": "Victims"}
CHECK, CROSS = "✓", "×"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: float | tuple[float, float]
    p: float

    @property
    def stars(self) -> str:
        return "*" * sum(self.p < t for t in STAR_LEVELS)

    @property
    def passes(self) -> bool:
        """No significant difference at the 5% level."""
        return self.p > ALPHA


def _pair(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or y.size < 2:
        raise ValueError("each sample needs at least 2 values")
    return x, y


def _degenerate(x, y, what: str) -> TestResult:
    log.warning("%s: both samples have zero variance; testing exact equality", what)
    same = bool(np.isclose(x.mean(), y.mean(), rtol=0, atol=1e-12))
    return TestResult(0.0 if same else math.copysign(math.inf, x.mean() - y.mean()), math.nan,
                      1.0 if same else 0.0)


def welch_t(x, y) -> TestResult:
    """Unequal-variance t-test with Satterthwaite degrees of freedom."""
    x, y = _pair(x, y)
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    if vx + vy == 0:
        return _degenerate(x, y, "welch_t")
    t = (x.mean() - y.mean()) / math.sqrt(vx + vy)
    # variance shares keep the Satterthwaite formula clear of underflow
    a, b = vx / (vx + vy), vy / (vx + vy)
    df = 1.0 / (a * a / (x.size - 1) + b * b / (y.size - 1))
    p = float(min(1.0, 2.0 * special.stdtr(df, -abs(t))))
    return TestResult(float(t), float(df), p)


def levene(x, y, center: str = "mean") -> TestResult:
    """Levene's W on absolute deviations from the group mean (or median)."""
    x, y = _pair(x, y)
    if center not in ("mean", "median"):
        raise ValueError(f"center must be 'mean' or 'median', got {center!r}")
    if x.var() == 0 and y.var() == 0:
        return _degenerate(x, y, "levene")
    loc = np.mean if center == "mean" else np.median
    z = [np.abs(g - loc(g)) for g in (x, y)]
    n = np.array([g.size for g in z], float)
    N, k = n.sum(), 2
    zbar = np.array([g.mean() for g in z])
    zall = np.concatenate(z).mean()
    between = float(np.sum(n * (zbar - zall) ** 2))
    within = float(sum(np.sum((g - m) ** 2) for g, m in zip(z, zbar)))
    dfs = (float(k - 1), float(N - k))
    if within == 0:
        return TestResult(0.0 if between == 0 else math.inf, dfs, 1.0 if between == 0 else 0.0)
    W = (N - k) / (k - 1) * between / within
    return TestResult(W, dfs, float(special.fdtrc(dfs[0], dfs[1], W)))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits between two histograms."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError("histograms need the same number of bins")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("negative probability mass")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histogram has no mass")
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks; NaN (with a warning) for constant input."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size != y.size or x.size < 3:
        raise ValueError("need two equal-length samples of at least 3 values")
    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        log.warning("spearman: constant input, correlation undefined")
        return math.nan
    return float(rx @ ry) / denom


def skewness(x) -> float:
    """Adjusted Fisher-Pearson sample skewness."""
    x = np.asarray(x, float)
    n = x.size
    d = x - x.mean()
    m2, m3 = np.mean(d ** 2), np.mean(d ** 3)
    if m2 == 0:
        return 0.0
    return float(math.sqrt(n * (n - 1)) / (n - 2) * m3 / m2 ** 1.5)


PEAK_FLOOR = 0.05  # peaks below this fraction of the highest density are tail noise


def kde_diag(samples, grid_points: int = 512) -> tuple[int, float] | None:
    """Peak count of a Gaussian KDE (Silverman bandwidth) and sample skewness.

    A peak is a strict local maximum of the density on the grid that
    reaches ``PEAK_FLOOR`` of the global maximum. Returns None for fewer
    than 5 samples.
    """
    x = np.asarray(samples, float)
    if x.size < 5:
        return None
    sd = x.std(ddof=1)
    if sd == 0:
        return 1, 0.0
    bw = (0.75 * x.size) ** -0.2 * sd
    grid = np.linspace(x.min() - 3 * bw, x.max() + 3 * bw, grid_points)
    dens = np.exp(-0.5 * ((grid[:, None] - x[None, :]) / bw) ** 2).sum(axis=1)
    mid = dens[1:-1]
    peaks = int(np.sum((mid > dens[:-2]) & (mid > dens[2:]) & (mid >= PEAK_FLOOR * dens.max())))
    return peaks, skewness(x)


def histogram(values, edges) -> np.ndarray:
    h, _ = np.histogram(values, bins=edges)
    return h.astype(float)


# ---------------------------------------------------------------------------
# comparison tables


def summarize(values) -> tuple[float, float]:
    a = np.asarray(values, float)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def fmt_msd(values, digits: int = 1) -> str:
    m, s = summarize(values)
    return f"{m:.{digits}f} ± {s:.{digits}f}"


def color(welch: TestResult, lev: TestResult) -> str:
    hits = int(welch.passes) + int(lev.passes)
    return ("red", "yellow", "green")[hits]


@dataclass
class FidelityReport:
    """Generated-vs-observed comparison for one model configuration."""

    label: str
    outcomes: dict[str, dict] = field(default_factory=dict)  # column -> welch, levene, color, cells
    jsd: dict[str, float] = field(default_factory=dict)
    rho: dict[str, float] = field(default_factory=dict)      # "t,s" / "t,v" for model and emp
    delta_rho: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def outcome_row(self) -> dict:
        row = {"Model": self.label}
        for col, d in self.outcomes.items():
            marks = (CHECK if d["welch"].passes else CROSS) + (CHECK if d["levene"].passes else CROSS)
            row[TABLE_HEADERS[col]] = f"{d['generated']} {marks}"
            row[f"{TABLE_HEADERS[col]} color"] = d["color"]
        return row

    def fidelity_row(self) -> dict:
        row = {"Model": self.label}
        for o in ("time", "shots", "victims"):
            if o in self.jsd:
                row[f"JSD {TABLE_HEADERS[o]}"] = round(self.jsd[o], 3)
        for pair in ("t,s", "t,v"):
            if pair in self.delta_rho:
                row[f"rho({pair})"] = round(self.rho[pair], 3)
                row[f"delta_rho({pair})"] = round(self.delta_rho[pair], 3)
        return row

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, TestResult):
                return {**asdict(o), "stars": o.stars}
            raise TypeError(type(o))

        return json.dumps({"label": self.label, "outcomes": self.outcomes, "jsd": self.jsd,
                           "rho": self.rho, "delta_rho": self.delta_rho, "metadata": self.metadata},
                          default=enc, indent=1)


def reference_row(observed: dict[str, list[float]], label: str = "Participants") -> dict:
    row = {"Model": label}
    for col in SUMMARY_COLUMNS:
        if col in observed:
            row[TABLE_HEADERS[col]] = fmt_msd(observed[col])
    return row


def _region_shares(visits, regions, outcome_idx: int) -> np.ndarray:
    """Per-region share of the total of one outcome."""
    idx = {r: i for i, r in enumerate(regions)}
    h = np.zeros(len(regions))
    for v in visits:
        h[idx[v[0]]] += v[1 + outcome_idx]
    return h


def fidelity_report(generated: dict[str, list[float]], observed: dict[str, list[float]],
                    generated_visits=None, observed_visits=None, regions=None,
                    label: str = "model", bins: int = 20) -> FidelityReport:
    """Compare episode summaries and, when visit lists are given, spatial
    and temporal structure.

    ``generated``/``observed`` map summary columns (nodes, time, shots,
    victims) to per-episode values. Visit lists hold
    ``(region, dwell, shots, victims)`` tuples. Spatial JSD compares
    per-region outcome-share distributions; when ``bins`` is positive the
    pooled per-visit outcome histograms over the observed range are also
    reported under ``metadata["value_jsd"]``.
    """
    if not generated or not observed:
        raise ValueError("both sides need summaries")
    rep = FidelityReport(label)
    for col in SUMMARY_COLUMNS:
        if col not in generated or col not in observed:
            continue
        w = welch_t(generated[col], observed[col])
        lv = levene(generated[col], observed[col])
        rep.outcomes[col] = {"welch": w, "levene": lv, "color": color(w, lv),
                             "generated": fmt_msd(generated[col]), "observed": fmt_msd(observed[col])}
    if generated_visits is not None and observed_visits is not None:
        gv, ov = list(generated_visits), list(observed_visits)
        if regions is None:
            regions = sorted({v[0] for v in gv} | {v[0] for v in ov})
        value_jsd = {}
        for i, o in enumerate(("time", "shots", "victims")):
            g, e = _region_shares(gv, regions, i), _region_shares(ov, regions, i)
            if g.sum() > 0 and e.sum() > 0:
                rep.jsd[o] = jsd(g, e)
            if bins > 0:
                gvals = np.array([v[1 + i] for v in gv])
                ovals = np.array([v[1 + i] for v in ov])
                lo, hi = min(gvals.min(), ovals.min()), max(gvals.max(), ovals.max())
                if hi > lo:
                    edges = np.linspace(lo, hi, bins + 1)
                    value_jsd[o] = jsd(histogram(np.clip(gvals, lo, hi), edges), histogram(ovals, edges))
        rep.metadata["value_jsd"] = value_jsd
        rep.metadata["spatial_jsd"] = "per-region share of total outcome"
        for pair, j in (("t,s", 2), ("t,v", 3)):
            rm = spearman([v[1] for v in gv], [v[j] for v in gv])
            re_ = spearman([v[1] for v in ov], [v[j] for v in ov])
            rep.rho[pair], rep.rho[f"{pair} emp"] = rm, re_
            rep.delta_rho[pair] = rm - re_
    return rep


def rows_to_csv(rows: list[dict]) -> str:
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def policy_table(victims: dict[str, list[float]], baseline: str = "none") -> list[dict]:
    """Mean ± sd victims per strategy and percent change against ``baseline``."""
    base = float(np.mean(victims[baseline])) if baseline in victims else None
    rows = []
    for name, v in victims.items():
        m, s = summarize(v)
        delta = "--" if name == baseline or not base else f"{100.0 * (m - base) / base:+.1f}%"
        rows.append({"Robot Strategy": name, "Victims": f"{m:.2f} ± {s:.2f}", "Delta": delta})
    return rows
