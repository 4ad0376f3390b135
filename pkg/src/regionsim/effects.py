"""Robot influence on event outcomes.

Smoke deposited by robots spreads over the region graph through an
exponential distance kernel; the summed influence ``R`` shifts each outcome
additively by a per-region slope ``k``. Slopes are fitted by shrunken
per-region least squares on residuals against no-robot baseline means.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .events import N_MIN, resolve_level
from .graph import RegionGraph
from .traces import OUTCOMES, Corpus, MomentTable, kfold_indices

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5
DEFAULT_TAU = 10.0
VAR_EPS = 1e-9
LAMBDA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 41))


@dataclass
class SmokeField:
    """Smoke intensity per region (indexed like the graph's region order)."""

    intensity: np.ndarray
    history: list[tuple[int, float, float]] = field(default_factory=list)
    decay_rate: float = 0.0  # per second; 0 disables temporal decay

    @classmethod
    def empty(cls, n: int, decay_rate: float = 0.0) -> "SmokeField":
        return cls(np.zeros(n), [], decay_rate)

    def deposit(self, index: int, amount: float = 1.0, time: float = 0.0):
        self.intensity[index] += amount
        self.history.append((index, time, amount))

    def advance(self, dt: float):
        if self.decay_rate > 0 and dt > 0:
            self.intensity *= math.exp(-self.decay_rate * dt)


def influence(intensity: np.ndarray, D: np.ndarray, lam: float) -> np.ndarray:
    """``R_i = sum_j intensity_j * exp(-lam * D_ij)``; unreachable pairs add 0."""
    if not lam > 0:
        raise ValueError(f"decay parameter must be positive, got {lam}")
    W = np.exp(-lam * D)  # exp(-inf) == 0
    return W @ np.asarray(intensity, dtype=float)


def field_vector(graph: RegionGraph, smoke: dict[int, float] | None) -> np.ndarray:
    v = np.zeros(len(graph))
    for r, a in (smoke or {}).items():
        v[graph.index[r]] += a
    return v


def corpus_influence(corpus: Corpus, graph: RegionGraph, lam: float) -> list[np.ndarray]:
    """Per-visit R at visit start, recomputed from the logged smoke fields."""
    W = np.exp(-lam * graph.hops)
    out = []
    for ep in corpus.episodes:
        rs = np.zeros(len(ep))
        for j, v in enumerate(ep):
            if v.smoke:
                i = graph.index[v.region_id]
                rs[j] = sum(a * W[i, graph.index[r]] for r, a in v.smoke.items())
        out.append(rs)
    return out


@dataclass
class EffectModel:
    """Decay ``lam``, shrinkage ``tau`` and slopes ``k[outcome][region]``."""

    lam: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU
    k: dict[str, dict[int, float]] = field(default_factory=lambda: {o: {} for o in OUTCOMES})
    suppressed: dict[str, dict[int, bool]] = field(default_factory=lambda: {o: {} for o in OUTCOMES})

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    def coeff(self, outcome: str, region: int) -> float:
        return self.k[outcome].get(region, 0.0)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": 1, "lambda": self.lam, "tau": self.tau,
            "k": {o: {str(r): v for r, v in d.items()} for o, d in self.k.items()},
            "suppressed": {o: {str(r): v for r, v in d.items()} for o, d in self.suppressed.items()},
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EffectModel":
        doc = json.loads(text)
        return cls(doc["lambda"], doc["tau"],
                   {o: {int(r): v for r, v in d.items()} for o, d in doc["k"].items()},
                   {o: {int(r): v for r, v in d.items()} for o, d in doc.get("suppressed", {}).items()})


def modulate(outcome: tuple[float, float, float], R: float, model: EffectModel, region: int,
             victim_cap: float = math.inf, time_cap: float = math.inf) -> tuple[float, float, float]:
    """Additive shift ``X + R * k`` per outcome, clamped to physical bounds."""
    if R < 0:
        raise ValueError("influence must be non-negative")
    dwell, shots, victims = outcome
    if R == 0:
        return dwell, shots, victims
    dwell = min(max(dwell + R * model.coeff("time", region), 0.0), time_cap)
    shots = max(shots + R * model.coeff("shots", region), 0.0)
    victims = min(max(victims + R * model.coeff("victims", region), 0.0), victim_cap)
    return dwell, shots, victims


def _slopes(regions: np.ndarray, R: np.ndarray, e: np.ndarray, n_regions: int):
    """Per-region ``Cov(R, e) / Var(R)`` plus counts and variances."""
    n = np.bincount(regions, minlength=n_regions).astype(float)
    safe = np.maximum(n, 1.0)
    mR = np.bincount(regions, R, n_regions) / safe
    me = np.bincount(regions, e, n_regions) / safe
    dR, de = R - mR[regions], e - me[regions]
    sRR = np.bincount(regions, dR * dR, n_regions)
    sRe = np.bincount(regions, dR * de, n_regions)
    see = np.bincount(regions, de * de, n_regions)
    denom = np.maximum(n - 1.0, 1.0)
    varR, vare = sRR / denom, see / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        khat = np.where(sRR > 0, sRe / sRR, 0.0)
    return khat, n, varR, vare


def fit_coeffs(baseline: MomentTable, robot: Corpus, graph: RegionGraph, tau: float = DEFAULT_TAU,
               lam: float = DEFAULT_LAMBDA, n_min: int = N_MIN, influences=None) -> EffectModel:
    """Shrinkage-weighted per-region slopes of baseline residuals on R.

    ``influences`` (per-episode arrays) overrides the R stored on visits.
    The raw slope is multiplied by ``n / (n + tau)``; regions with fewer than
    ``n_min`` visits, or near-constant R or residuals, get k = 0.
    """
    visits = [v for ep in robot.episodes for v in ep if not math.isnan(v.dwell)]
    if not visits:
        raise ValueError("robot-present corpus is empty")
    if influences is None:
        R = np.array([v.R for v in visits])
    else:
        R = np.concatenate([np.asarray(r, float) for r in influences])
        R = R[[not math.isnan(v.dwell) for ep in robot.episodes for v in ep]]
    regions = np.array([graph.index[v.region_id] for v in visits])
    ids = graph.ids
    model = EffectModel(lam=lam, tau=tau)
    for o in OUTCOMES:
        base = np.array([resolve_level(r, o, baseline, n_min)[0].mean for r in ids])
        x = np.array([v.outcome(o) for v in visits])
        khat, n, varR, vare = _slopes(regions, R, x - base[regions], len(ids))
        keep = (n >= n_min) & (varR >= VAR_EPS) & (vare >= VAR_EPS)
        k = np.where(keep, khat * n / (n + tau), 0.0)
        model.k[o] = {r: float(k[i]) for i, r in enumerate(ids)}
        model.suppressed[o] = {r: bool(not keep[i]) for i, r in enumerate(ids)}
    return model


def _flatten(robot: Corpus, graph: RegionGraph):
    """Visits with known dwell as arrays: episode, region index, outcomes,
    smoke field matrix."""
    ep_idx, reg, X, F = [], [], [], []
    for e, ep in enumerate(robot.episodes):
        for v in ep:
            if math.isnan(v.dwell):
                continue
            ep_idx.append(e)
            reg.append(graph.index[v.region_id])
            X.append([v.outcome(o) for o in OUTCOMES])
            F.append(field_vector(graph, v.smoke))
    return np.array(ep_idx), np.array(reg), np.array(X, float), np.array(F, float)


def calibrate_lambda(baseline: MomentTable, robot: Corpus, graph: RegionGraph,
                     grid=LAMBDA_GRID, tau: float = DEFAULT_TAU, folds: int = 5, seed: int = 0,
                     n_min: int = N_MIN) -> tuple[float, list[float]]:
    """Grid-search the decay parameter by held-out squared residual.

    Each candidate recomputes per-visit R from the logged smoke fields,
    refits slopes on the training folds and scores modulated predictions on
    the held-out fold (squared residuals scaled by the global baseline
    variance of each outcome). Returns ``(best_lambda, scores)``; ties
    resolve to the smaller value.
    """
    grid = sorted(grid)
    if not grid:
        raise ValueError("empty lambda grid")
    if len(grid) == 1:
        return grid[0], [0.0]
    ep, reg, X, F = _flatten(robot, graph)
    if not len(reg):
        raise ValueError("robot-present corpus is empty")
    ids = graph.ids
    base = np.array([[resolve_level(r, o, baseline, n_min)[0].mean for o in OUTCOMES] for r in ids])
    scale = np.array([baseline.get("global", "all", o).var or 1.0 for o in OUTCOMES])
    E = X - base[reg]
    n_folds = min(folds, len(robot))
    if n_folds >= 2:
        splits = [(np.isin(ep, tr), np.isin(ep, te)) for tr, te in kfold_indices(len(robot), n_folds, seed)]
    else:
        splits = [(np.ones(len(ep), bool),) * 2]

    scores = []
    for lam in grid:
        W = np.exp(-lam * graph.hops)
        R = np.einsum("ij,ij->i", F, W[reg])
        total = 0.0
        for tr, te in splits:
            for c in range(len(OUTCOMES)):
                khat, n, varR, vare = _slopes(reg[tr], R[tr], E[tr, c], len(ids))
                keep = (n >= n_min) & (varR >= VAR_EPS) & (vare >= VAR_EPS)
                k = np.where(keep, khat * n / (n + tau), 0.0)
                resid = E[te, c] - R[te] * k[reg[te]]
                total += float(resid @ resid) / scale[c]
        scores.append(total)
    s = np.array(scores)
    best = int(np.flatnonzero(s <= s.min() * (1 + 1e-12))[0])
    if s.max() - s.min() <= 1e-9 * max(abs(s.min()), 1.0):
        log.warning("lambda score curve is flat; returning smallest grid value")
    return grid[best], scores


def impact_rank(model: EffectModel, mean_dwell: dict[int, float] | None = None) -> list[int]:
    """Regions sorted by victim sensitivity to robot influence, most negative
    first. With ``mean_dwell`` the per-visit slope is turned into a rate
    slope by dividing by the region's mean dwell time."""
    ks = model.k["victims"]
    if not ks or all(v == 0 for v in ks.values()):
        log.warning("all victim coefficients are zero; ranking falls back to id order")

    def sens(r):
        k = ks[r]
        if mean_dwell is not None and mean_dwell.get(r, 0) > 0:
            k = k / mean_dwell[r]
        return k

    return sorted(sorted(ks), key=sens)


def high_impact(ranking: list[int], count: int = 1) -> list[int]:
    return ranking[:count]


def low_impact(ranking: list[int], count: int = 1) -> list[int]:
    return ranking[::-1][:count]
