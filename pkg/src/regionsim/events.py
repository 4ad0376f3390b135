"""In-region event outcomes: hierarchical fallback over pooled moments and the
three generation variants (means, sampling, coupling)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .traces import LEVELS, MomentTable, Moments
from .truncnorm import Bounds, TruncSpec, match_moments, sample

GENERATIONS = ("means", "sampling", "coupling")
N_MIN = 8


@dataclass(frozen=True)
class VariantKind:
    generation: str = "sampling"
    pooling: str = "region"

    def __post_init__(self):
        if self.generation not in GENERATIONS or self.pooling not in LEVELS:
            raise ValueError(f"unknown variant {self.pooling}-{self.generation}")

    @classmethod
    def parse(cls, text: str) -> "VariantKind":
        """``"region-sampling"`` -> VariantKind("sampling", "region")."""
        pooling, _, generation = text.partition("-")
        return cls(generation, pooling)

    def __str__(self):
        return f"{self.pooling}-{self.generation}"


def _usable(m: Moments, n_min: int) -> bool:
    return m.n >= n_min and m.var > 0


def resolve_level(region: int, metric: str, table: MomentTable, n_min: int = N_MIN,
                  start: str = "region") -> tuple[Moments, str]:
    """Moments for ``metric`` at the finest usable level.

    A level is usable when it has at least ``n_min`` samples and positive
    variance. Global moments are returned unconditionally (zero variance
    then means a deterministic outcome).
    """
    glob = table.get("global", "all", metric)
    if glob.n == 0:
        raise ValueError("moment table has no global samples")
    for level in LEVELS[LEVELS.index(start):-1]:
        m = table.get(level, table.key_for(level, region), metric)
        if _usable(m, n_min):
            return m, level
    return glob, "global"


@lru_cache(maxsize=65536)
def _spec(mean: float, var: float, lower: float, upper: float) -> TruncSpec:
    if not lower < mean < upper:
        # no room on one side of the mean: the outcome is pinned
        return TruncSpec.point(min(max(mean, lower), upper))
    return match_moments(mean, var, Bounds(lower, upper))


def outcome_spec(moments: Moments, lower: float, upper: float) -> TruncSpec:
    m = moments.mean
    if lower < m < upper:
        # only the symmetric half-width matters; canonical bounds keep the cache hot
        upper = min(upper, 2.0 * m - lower)
    return _spec(m, moments.var, lower, upper)


def victim_cap(table: MomentTable, region: int, level: str) -> float:
    return table.get(level, table.key_for(level, region), "victims").max


def gen_outcome(region: int, variant: VariantKind, table: MomentTable, time_cap: float,
                rng: np.random.Generator, n_min: int = N_MIN) -> tuple[float, float, float]:
    """Draw ``(dwell, shots, victims)`` for one visit to ``region``.

    ``time_cap`` is the upper bound for dwell time (the remaining episode
    budget, or the full cap in visit-count-matched runs).
    """
    start = variant.pooling
    t_m, t_lvl = resolve_level(region, "time", table, n_min, start)
    s_m, s_lvl = resolve_level(region, "shots", table, n_min, start)
    v_m, v_lvl = resolve_level(region, "victims", table, n_min, start)
    vcap = victim_cap(table, region, v_lvl)

    if variant.generation == "means":
        return t_m.mean, s_m.mean, min(v_m.mean, vcap)

    dwell = sample(outcome_spec(t_m, 0.0, time_cap), rng)
    if variant.generation == "sampling":
        shots = sample(outcome_spec(s_m, 0.0, math.inf), rng)
        victims = sample(outcome_spec(v_m, 0.0, vcap), rng)
        return dwell, shots, victims

    shot_rate, victim_rate = table.rates[t_lvl][table.key_for(t_lvl, region)]
    return dwell, dwell * shot_rate, min(dwell * victim_rate, victim_cap(table, region, t_lvl))


@dataclass
class EventModel:
    """A fitted event generator: moment table + variant + fallback threshold."""

    table: MomentTable
    variant: VariantKind = VariantKind()
    n_min: int = N_MIN

    def generate(self, region: int, time_cap: float, rng: np.random.Generator):
        return gen_outcome(region, self.variant, self.table, time_cap, rng, self.n_min)

    def mean_time(self, region: int) -> float:
        return resolve_level(region, "time", self.table, self.n_min, self.variant.pooling)[0].mean

    def victim_budget(self, region: int) -> float:
        return self.table.budget.get(region, 0.0)

    def to_json(self) -> str:
        return json.dumps({"format_version": 1, "variant": str(self.variant), "n_min": self.n_min,
                           "table": json.loads(self.table.to_json())}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EventModel":
        doc = json.loads(text)
        return cls(MomentTable.from_json(doc["table"]), VariantKind.parse(doc["variant"]), doc["n_min"])

    def diagnostics_csv(self, regions, time_cap: float = 300.0) -> str:
        """Per-region, per-outcome fallback and clamping report."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "outcome", "n", "mean", "var", "max", "level_used", "clamped"])
        for r in regions:
            for metric in ("time", "shots", "victims"):
                own = self.table.get("region", r, metric)
                m, lvl = resolve_level(r, metric, self.table, self.n_min, self.variant.pooling)
                upper = {"time": time_cap, "shots": math.inf,
                         "victims": victim_cap(self.table, r, lvl)}[metric]
                spec = outcome_spec(m, 0.0, upper)
                w.writerow([r, metric, own.n, own.mean, own.var, own.max, lvl, int(spec.clamped)])
        return buf.getvalue()
