"""Trace ingestion: 2 Hz tick logs -> region visits -> pooled outcome moments."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .graph import RegionGraph

log = logging.getLogger(__name__)

TICK_SECONDS = 0.5
OUTCOMES = ("time", "shots", "victims")
LEVELS = ("region", "group", "global")


class TraceError(ValueError):
    """Malformed or inconsistent trace data; message carries the row number."""


@dataclass(frozen=True)
class TickRecord:
    episode_id: str
    tick: int
    region_id: int
    shots_cum: int
    victims_cum: int
    robots: tuple[int, ...] = ()
    smoke: tuple[tuple[int, float], ...] = ()  # deposits made at this tick
    row: int = 0


@dataclass(frozen=True)
class VisitEvent:
    episode_id: str
    seq: int
    region_id: int
    dwell: float
    shots: float
    victims: float
    R: float = 0.0
    # smoke intensity per region at visit start (robot-present data only)
    smoke: dict[int, float] | None = field(default=None, compare=False, hash=False)
    # regions still holding potential targets at visit start; None = unknown
    targets: frozenset[int] | None = None

    def outcome(self, name: str) -> float:
        return {"time": self.dwell, "shots": self.shots, "victims": self.victims}[name]


@dataclass
class Corpus:
    episodes: list[list[VisitEvent]]
    provenance: str = "ingested"
    condition: str = "baseline"

    def __len__(self):
        return len(self.episodes)

    def visits(self) -> Iterable[VisitEvent]:
        for ep in self.episodes:
            yield from ep

    def subset(self, idx: Sequence[int]) -> "Corpus":
        return Corpus([self.episodes[i] for i in idx], self.provenance, self.condition)

    def visit_counts(self) -> list[int]:
        return [len(ep) for ep in self.episodes]


# ---------------------------------------------------------------------------
# parsing


def _nearest_region(graph: RegionGraph, x: float, y: float, floor: int) -> int | None:
    best, best_d = None, math.inf
    for r in graph.regions:
        if r.floor != floor:
            continue
        d = math.dist((x, y), r.centroid)
        if d < best_d:
            best, best_d = r.id, d
    return best


def _parse_smoke(region_cell: str, amount_cell: str) -> tuple[tuple[int, float], ...]:
    if not region_cell:
        return ()
    regions = [int(v) for v in region_cell.split(";")]
    amounts = [float(v) for v in amount_cell.split(";")] if amount_cell else [1.0] * len(regions)
    if len(amounts) != len(regions):
        raise ValueError("smoke_region/smoke_intensity length mismatch")
    return tuple(zip(regions, amounts))


def parse_trace(document: bytes | str, graph: RegionGraph) -> list[TickRecord]:
    """Parse a tick-level trace CSV.

    Either a ``region_id`` column or ``x,y,floor`` columns must be present;
    positions are assigned to the nearest centroid on the same floor.
    Records are returned grouped by episode (first-appearance order) and
    sorted by tick.
    """
    text = document.decode() if isinstance(document, bytes) else document
    if not text.strip():
        log.warning("empty trace document")
        return []
    reader = csv.DictReader(io.StringIO(text))
    cols = set(reader.fieldnames or ())
    required = {"episode_id", "tick", "shots_cum", "victims_cum"}
    missing = required - cols
    if missing:
        raise TraceError(f"row 1: missing columns {sorted(missing)}")
    positional = "region_id" not in cols
    if positional and not {"x", "y", "floor"} <= cols:
        raise TraceError("row 1: need region_id or x,y,floor columns")

    by_ep: dict[str, list[TickRecord]] = {}
    for rowno, row in enumerate(reader, start=2):
        try:
            if positional:
                region = _nearest_region(graph, float(row["x"]), float(row["y"]), int(row["floor"]))
                if region is None:
                    raise ValueError(f"no region on floor {row['floor']}")
            else:
                region = int(row["region_id"])
            robots = tuple(
                int(row[c]) for c in ("robot1_region", "robot2_region") if row.get(c) not in (None, "")
            )
            rec = TickRecord(
                episode_id=row["episode_id"],
                tick=int(row["tick"]),
                region_id=region,
                shots_cum=int(float(row["shots_cum"])),
                victims_cum=int(float(row["victims_cum"])),
                robots=robots,
                smoke=_parse_smoke(row.get("smoke_region") or "", row.get("smoke_intensity") or ""),
                row=rowno,
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise TraceError(f"row {rowno}: malformed row ({exc})") from None
        if region not in graph.index:
            raise TraceError(f"row {rowno}: unknown region {region}")
        for r in rec.robots:
            if r not in graph.index:
                raise TraceError(f"row {rowno}: unknown robot region {r}")
        if rec.tick < 0 or rec.shots_cum < 0 or rec.victims_cum < 0:
            raise TraceError(f"row {rowno}: negative tick or counter")
        by_ep.setdefault(rec.episode_id, []).append(rec)

    out = []
    for ep, recs in by_ep.items():
        recs.sort(key=lambda r: r.tick)
        for prev, cur in zip(recs, recs[1:]):
            if cur.tick == prev.tick:
                raise TraceError(f"row {cur.row}: duplicate tick {cur.tick} in episode {ep}")
            if cur.shots_cum < prev.shots_cum:
                raise TraceError(f"row {cur.row}: shots_cum decreases in episode {ep}")
            if cur.victims_cum < prev.victims_cum:
                raise TraceError(f"row {cur.row}: victims_cum decreases in episode {ep}")
        out.extend(recs)
    return out


def extract_visits(ticks: Sequence[TickRecord], condition: str | None = None) -> Corpus:
    """Collapse consecutive same-region ticks into visit events.

    Dwell is the run length times 0.5 s; shots and victims are counter
    deltas over the run. The last run of an episode is closed at the final
    tick. Smoke fields are accumulated deposits up to the visit's first tick.
    """
    episodes: dict[str, list[TickRecord]] = {}
    for t in ticks:
        episodes.setdefault(t.episode_id, []).append(t)
    has_smoke = any(t.smoke or t.robots for t in ticks)

    out = []
    for ep, recs in episodes.items():
        visits = []
        field_: dict[int, float] = defaultdict(float)
        prev_shots = prev_victims = 0
        start = 0
        for i, rec in enumerate(recs):
            if i > start and rec.region_id == recs[start].region_id:
                for reg, amt in rec.smoke:
                    field_[reg] += amt
                continue
            if i > start:
                visits.append(_close_run(ep, len(visits), recs[start:i], prev_shots, prev_victims,
                                         snapshot, has_smoke))
                prev_shots, prev_victims = recs[i - 1].shots_cum, recs[i - 1].victims_cum
                start = i
            for reg, amt in rec.smoke:
                field_[reg] += amt
            snapshot = dict(field_)
        if recs:
            visits.append(_close_run(ep, len(visits), recs[start:], prev_shots, prev_victims,
                                     snapshot, has_smoke))
            out.append(visits)
    if condition is None:
        condition = "robot-present" if has_smoke else "baseline"
    return Corpus(out, "ingested", condition)


def _close_run(ep, seq, run, prev_shots, prev_victims, smoke, has_smoke) -> VisitEvent:
    last = run[-1]
    return VisitEvent(
        episode_id=ep,
        seq=seq,
        region_id=run[0].region_id,
        dwell=len(run) * TICK_SECONDS,
        shots=float(last.shots_cum - prev_shots),
        victims=float(last.victims_cum - prev_victims),
        smoke=smoke if has_smoke else None,
    )


def corpus_to_ticks(corpus: Corpus) -> list[TickRecord]:
    """Render a corpus as 2 Hz ticks (inverse of :func:`extract_visits`).

    Dwell times must be positive multiples of 0.5 s and outcomes integers;
    counters step up on the last tick of each visit.
    """
    out = []
    for ep in corpus.episodes:
        tick = shots = victims = 0
        prev_field: dict[int, float] = {}
        for v in ep:
            n = v.dwell / TICK_SECONDS
            if n < 1 or abs(n - round(n)) > 1e-9:
                raise ValueError(f"dwell {v.dwell} is not a positive multiple of {TICK_SECONDS}")
            deposits = ()
            if v.smoke is not None:
                deposits = tuple(
                    (r, v.smoke[r] - prev_field.get(r, 0.0))
                    for r in sorted(v.smoke) if v.smoke[r] - prev_field.get(r, 0.0) > 1e-12
                )
                prev_field = dict(v.smoke)
            n = int(round(n))
            for j in range(n):
                if j == n - 1:
                    shots += int(round(v.shots))
                    victims += int(round(v.victims))
                out.append(TickRecord(v.episode_id, tick, v.region_id, shots, victims,
                                      smoke=deposits if j == 0 else ()))
                tick += 1
    return out


def write_trace(ticks: Sequence[TickRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode_id", "tick", "region_id", "shots_cum", "victims_cum",
                "robot1_region", "robot2_region", "smoke_region", "smoke_intensity"])
    for t in ticks:
        robots = list(t.robots) + [""] * (2 - len(t.robots))
        w.writerow([t.episode_id, t.tick, t.region_id, t.shots_cum, t.victims_cum, *robots[:2],
                    ";".join(str(r) for r, _ in t.smoke),
                    ";".join(repr(a) for _, a in t.smoke)])
    return buf.getvalue()


# visit-level CSV: episode_id,seq,region_id,dwell_s,shots,victims[,R,smoke,targets]


def _fmt_smoke(smoke: dict[int, float] | None) -> str:
    if smoke is None:
        return ""
    return "|".join(f"{r}:{a!r}" for r, a in sorted(smoke.items()))


def _fmt_targets(targets: frozenset[int] | None) -> str:
    if targets is None:
        return ""
    return ";".join(str(r) for r in sorted(targets)) or "-"


def _parse_targets(cell: str | None) -> frozenset[int] | None:
    if not cell:
        return None
    return frozenset(int(r) for r in cell.split(";") if r and r != "-")


def write_visits(corpus: Corpus) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode_id", "seq", "region_id", "dwell_s", "shots", "victims", "R", "smoke", "targets"])
    for v in corpus.visits():
        w.writerow([v.episode_id, v.seq, v.region_id,
                    "" if math.isnan(v.dwell) else repr(v.dwell),
                    repr(v.shots), repr(v.victims), repr(v.R), _fmt_smoke(v.smoke),
                    _fmt_targets(v.targets)])
    return buf.getvalue()


def parse_visits(document: bytes | str, graph: RegionGraph | None = None,
                 condition: str | None = None) -> Corpus:
    """Parse a visit-level CSV. Empty ``dwell_s`` marks an unknown dwell
    (external region sequences); such visits are used for transition
    evaluation only."""
    text = document.decode() if isinstance(document, bytes) else document
    reader = csv.DictReader(io.StringIO(text))
    episodes: dict[str, list[VisitEvent]] = {}
    any_smoke = False
    for rowno, row in enumerate(reader, start=2):
        try:
            smoke = None
            if row.get("smoke"):
                smoke = {int(k): float(a) for k, a in (p.split(":") for p in row["smoke"].split("|"))}
                any_smoke = True
            dwell = float(row["dwell_s"]) if row.get("dwell_s") not in (None, "", "null") else math.nan
            v = VisitEvent(
                episode_id=row["episode_id"],
                seq=int(row["seq"]),
                region_id=int(row["region_id"]),
                dwell=dwell,
                shots=float(row.get("shots") or 0.0),
                victims=float(row.get("victims") or 0.0),
                R=float(row.get("R") or 0.0),
                smoke=smoke,
                targets=_parse_targets(row.get("targets")),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise TraceError(f"row {rowno}: malformed row ({exc})") from None
        if graph is not None and v.region_id not in graph.index:
            raise TraceError(f"row {rowno}: unknown region {v.region_id}")
        if not math.isnan(v.dwell) and v.dwell <= 0:
            raise TraceError(f"row {rowno}: dwell must be positive")
        episodes.setdefault(v.episode_id, []).append(v)
    out = []
    for ep, visits in episodes.items():
        visits.sort(key=lambda v: v.seq)
        if [v.seq for v in visits] != list(range(len(visits))):
            raise TraceError(f"episode {ep}: seq must be contiguous from 0")
        out.append(visits)
    if condition is None:
        condition = "robot-present" if any_smoke else "baseline"
    return Corpus(out, "ingested", condition)


# ---------------------------------------------------------------------------
# pooled moments


@dataclass(frozen=True)
class Moments:
    n: int
    mean: float
    var: float
    max: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Moments":
        a = np.asarray(values, dtype=float)
        if a.size == 0:
            return cls(0, 0.0, 0.0, 0.0)
        var = float(a.var(ddof=1)) if a.size > 1 else 0.0
        return cls(int(a.size), float(a.mean()), var, float(a.max()))


@dataclass
class MomentTable:
    """Outcome moments pooled at region, group and global level.

    ``cells[level][key][outcome]`` holds :class:`Moments`; keys are region
    ids, group names and ``"all"``. ``rates[level][key]`` is the
    ``(shots/s, victims/s)`` total ratio. ``budget[region]`` is the largest
    per-episode victim total observed in that region.
    """

    cells: dict[str, dict]
    rates: dict[str, dict]
    budget: dict[int, float]
    group_of: dict[int, str]

    def get(self, level: str, key, outcome: str) -> Moments:
        return self.cells[level].get(key, {}).get(outcome, Moments(0, 0.0, 0.0, 0.0))

    def key_for(self, level: str, region: int):
        if level == "region":
            return region
        if level == "group":
            return self.group_of[region]
        return "all"

    def to_json(self) -> str:
        def cell(c):
            return {o: vars(m) for o, m in c.items()}

        doc = {
            "levels": {lvl: {str(k): cell(c) for k, c in self.cells[lvl].items()} for lvl in LEVELS},
            "rates": {lvl: {str(k): {"shots": r[0], "victims": r[1]} for k, r in self.rates[lvl].items()}
                      for lvl in LEVELS},
            "budget": {str(k): v for k, v in self.budget.items()},
            "group_of": {str(k): v for k, v in self.group_of.items()},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str | dict) -> "MomentTable":
        doc = json.loads(text) if isinstance(text, str) else text

        def key(lvl, k):
            return int(k) if lvl == "region" else k

        cells = {lvl: {key(lvl, k): {o: Moments(**m) for o, m in c.items()}
                       for k, c in doc["levels"][lvl].items()} for lvl in LEVELS}
        rates = {lvl: {key(lvl, k): (r["shots"], r["victims"]) for k, r in doc["rates"][lvl].items()}
                 for lvl in LEVELS}
        return cls(cells, rates, {int(k): v for k, v in doc["budget"].items()},
                   {int(k): v for k, v in doc["group_of"].items()})


def pool_moments(corpus: Corpus, graph: RegionGraph) -> MomentTable:
    """Pool visit outcomes into a :class:`MomentTable` (n-1 variance)."""
    group_of = {r.id: r.group for r in graph.regions}
    samples: dict[str, dict] = {lvl: defaultdict(lambda: {o: [] for o in OUTCOMES}) for lvl in LEVELS}
    per_episode: dict[int, list[float]] = defaultdict(list)
    n_visits = 0
    for ep in corpus.episodes:
        totals: dict[int, float] = defaultdict(float)
        for v in ep:
            if math.isnan(v.dwell):
                continue
            n_visits += 1
            totals[v.region_id] += v.victims
            for lvl, key in (("region", v.region_id), ("group", group_of[v.region_id]), ("global", "all")):
                for o in OUTCOMES:
                    samples[lvl][key][o].append(v.outcome(o))
        for r, t in totals.items():
            per_episode[r].append(t)
    if n_visits == 0:
        raise ValueError("corpus has no visits with known dwell time")

    cells = {lvl: {k: {o: Moments.of(vals) for o, vals in c.items()} for k, c in samples[lvl].items()}
             for lvl in LEVELS}
    rates = {}
    for lvl in LEVELS:
        rates[lvl] = {}
        for k, c in samples[lvl].items():
            t = sum(c["time"])
            rates[lvl][k] = (sum(c["shots"]) / t, sum(c["victims"]) / t) if t > 0 else (0.0, 0.0)

    region_budget = {r: max(v) for r, v in per_episode.items()}
    group_budget: dict[str, float] = defaultdict(float)
    for r, b in region_budget.items():
        group_budget[group_of[r]] = max(group_budget[group_of[r]], b)
    global_budget = max(region_budget.values(), default=0.0)
    budget = {}
    for r in graph.ids:
        if r in region_budget:
            budget[r] = region_budget[r]
        else:
            budget[r] = group_budget.get(group_of[r], global_budget)
    return MomentTable(cells, rates, budget, group_of)


def kfold_split(corpus: Corpus, k: int, seed: int) -> list[tuple[Corpus, Corpus]]:
    """Episode-level k-fold partition: each episode is tested exactly once."""
    return [(corpus.subset(tr), corpus.subset(te)) for tr, te in kfold_indices(len(corpus), k, seed)]


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[list[int], list[int]]]:
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= {n} episodes, got k={k}")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((sorted(train.tolist()), sorted(test.tolist())))
    return out


def with_influence(corpus: Corpus, values: Sequence[Sequence[float]]) -> Corpus:
    """Copy of ``corpus`` with per-visit robot influence replaced."""
    eps = [[replace(v, R=float(r)) for v, r in zip(ep, rs)] for ep, rs in zip(corpus.episodes, values)]
    return Corpus(eps, corpus.provenance, corpus.condition)
