"""Synthetic worlds with known ground truth: a two-floor school layout, a
planted transition policy, planted outcome distributions and planted robot
effects. Corpora are produced by the same rollout loop as the simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .effects import DEFAULT_LAMBDA, EffectModel, influence
from .engine import RobotPolicy, SimConfig, batch_rollout, logs_to_corpus
from .graph import RegionGraph, load_layout
from .traces import OUTCOMES, TICK_SECONDS, Corpus, MomentTable, Moments, VisitEvent
from .transition import SoftmaxModel

# planted transition weights; heading persistence dominates
PLANTED_WEIGHTS = {
    "betweenness": 4.0,
    "direction_similarity": 3.0,
    "recency": -1.5,
    "has_target": 0.8,
    "is_entrance": -0.5,
    "is_outside": -1.0,
}
DOMINANT_FEATURE = "direction_similarity"

# per-group planted outcome parameters: dwell mean (s), shot base, shots per
# second, victim base, victims per second, victim budget per episode
GROUP_PARAMS = {
    "classroom": (12.0, 2.6, 0.02, 2.0, 0.02, 12.0),
    "hallway": (6.0, 2.4, 0.02, 1.6, 0.01, 20.0),
    "common": (14.0, 2.8, 0.02, 2.2, 0.02, 16.0),
    "stairwell": (5.0, 2.0, 0.01, 1.5, 0.01, 12.0),
    "entrance": (7.0, 2.2, 0.02, 1.5, 0.01, 10.0),
    "outdoor": (8.0, 2.0, 0.01, 1.5, 0.01, 6.0),
}
DWELL_SHAPE = 6.0


def school_layout() -> RegionGraph:
    """Two floors joined by two stairwell pairs; 31 regions, max degree 5."""
    regions = []

    def add(id_, name, group, floor, xy, area, entrance=False, outside=False):
        regions.append({"id": id_, "name": name, "group": group, "floor": floor, "centroid": list(xy),
                        "area": area, "is_entrance": entrance, "is_outside": outside})

    add(0, "entrance-west", "entrance", 0, (0, 0), 30, entrance=True)
    add(1, "entrance-east", "entrance", 0, (50, 0), 30, entrance=True)
    add(2, "lot-west", "outdoor", 0, (-10, 0), 400, outside=True)
    add(3, "lot-east", "outdoor", 0, (60, 0), 400, outside=True)
    for f, base in ((0, 4), (1, 18)):
        for j in range(4):
            add(base + j, f"hall-{f}{j}", "hallway", f, (10 + 10 * j, 0), 60)
    rooms0 = [(8, 4, (8, 8)), (9, 4, (12, -8)), (10, 5, (20, 8)), (11, 6, (28, 8)), (12, 6, (32, -8)),
              (13, 7, (40, 8))]
    rooms1 = [(22, 18, (8, 8)), (23, 18, (12, -8)), (24, 19, (20, 8)), (25, 20, (28, 8)), (26, 20, (32, -8)),
              (27, 21, (40, 8))]
    for k, (rid, _, xy) in enumerate(rooms0 + rooms1):
        add(rid, f"room-{rid}", "classroom", 0 if k < 6 else 1, xy, 70 + 5 * (k % 3))
    add(14, "cafeteria", "common", 0, (20, -12), 300)
    add(15, "library", "common", 0, (30, -14), 200)
    add(28, "commons-upper", "common", 1, (20, -12), 250)
    add(16, "stairs-west-0", "stairwell", 0, (10, -6), 20)
    add(17, "stairs-east-0", "stairwell", 0, (40, -6), 20)
    add(29, "stairs-west-1", "stairwell", 1, (10, -6), 20)
    add(30, "stairs-east-1", "stairwell", 1, (40, -6), 20)

    edges = [(2, 0), (3, 1), (0, 4), (1, 7), (4, 5), (5, 6), (6, 7), (18, 19), (19, 20), (20, 21),
             (5, 14), (14, 2), (6, 15), (19, 28),
             (4, 16), (7, 17), (16, 29), (17, 30), (29, 18), (30, 21)]
    edges += [(h, r) for r, h, _ in rooms0 + rooms1]
    return load_layout({"regions": regions, "edges": [list(e) for e in edges]})


def _count(rng: np.random.Generator, mean: float) -> int:
    """Binomial count with the given mean and success probability of at least 3/4."""
    n = max(1, math.ceil(mean / 0.75))
    return int(rng.binomial(n, min(mean / n, 1.0)))


@dataclass
class PlantedEvents:
    """Ground-truth outcome generator (duck-types the fitted event model).

    Dwell is gamma distributed and quantized to the tick length, and capped
    at the remaining episode time; shots and victims have a
    per-visit base plus a dwell-proportional part,
    drawn as binomial counts.
    """

    dwell_mean: dict[int, float]
    shot_base: dict[int, float]
    shot_rate: dict[int, float]
    victim_base: dict[int, float]
    victim_rate: dict[int, float]
    budget: dict[int, float]
    shape: float = DWELL_SHAPE

    def generate(self, region: int, time_cap: float, rng: np.random.Generator):
        raw = rng.gamma(self.shape, self.dwell_mean[region] / self.shape)
        dwell = max(TICK_SECONDS, round(raw / TICK_SECONDS) * TICK_SECONDS)
        dwell = min(dwell, time_cap)
        shots = _count(rng, self.shot_base[region] + self.shot_rate[region] * dwell)
        victims = _count(rng, self.victim_base[region] + self.victim_rate[region] * dwell)
        return dwell, float(shots), float(victims)

    def time_bound(self, region: int, remaining: float, t_max: float) -> float:
        return max(remaining, TICK_SECONDS)

    def mean_time(self, region: int) -> float:
        return self.dwell_mean[region]

    def victim_budget(self, region: int) -> float:
        return self.budget[region]


@dataclass
class PlantedWorld:
    graph: RegionGraph
    transition: SoftmaxModel
    events: PlantedEvents
    effects: EffectModel
    dominant: str = DOMINANT_FEATURE

    def sim_config(self, **kw) -> SimConfig:
        kw.setdefault("transition", self.transition)
        kw.setdefault("events", self.events)
        return SimConfig(graph=self.graph, **kw)


# planted sensitivity of each group to robot influence, relative to the base slope
EFFECT_SCALE = {"classroom": 1.5, "common": 1.5, "hallway": 1.0, "stairwell": 0.5, "entrance": 0.5,
                "outdoor": 0.2}


def planted_effects(graph: RegionGraph, k_victims: float = -0.05, k_shots: float = -0.05,
                    k_time: float = 0.0, lam: float = DEFAULT_LAMBDA, uniform: bool = False) -> EffectModel:
    """Planted slopes per outcome; group-scaled unless ``uniform``."""
    ks = {"time": k_time, "shots": k_shots, "victims": k_victims}

    def scale(r):
        return 1.0 if uniform else EFFECT_SCALE[graph[r].group]

    return EffectModel(lam=lam, k={o: {r: ks[o] * scale(r) for r in graph.ids} for o in OUTCOMES},
                       suppressed={o: {r: False for r in graph.ids} for o in OUTCOMES})


def planted_world(seed: int = 0, weights: dict[str, float] | None = None,
                  graph: RegionGraph | None = None, k_victims: float = -0.05) -> PlantedWorld:
    """Build the default synthetic world; per-region parameters jitter
    around the group values with ``seed``."""
    graph = graph or school_layout()
    rng = np.random.default_rng(seed)
    cols = [dict() for _ in range(6)]
    for r in graph.regions:
        params = GROUP_PARAMS[r.group]
        jitter = rng.uniform(0.8, 1.2, size=6)
        for c, (p, j) in enumerate(zip(params, jitter)):
            cols[c][r.id] = p * j if c < 5 else float(round(p * j))
    dwell, sb, sr, vb, vr, budget = cols
    events = PlantedEvents(dwell, sb, sr, vb, vr, budget)
    transition = SoftmaxModel(weights or PLANTED_WEIGHTS)
    return PlantedWorld(graph, transition, events, planted_effects(graph, k_victims))


class RandomWalkPolicy(RobotPolicy):
    """Robots pick uniformly among their allowed moves (synthetic robot-present data)."""

    name = "random-walk"

    def decide(self, sim):
        return [m[int(sim.rng.integers(len(m)))] for m in (sim.moves(i) for i in range(sim.n_robots))]


def synth_corpus(world: PlantedWorld, episodes: int, seed: int, robots: bool = False,
                 policy: RobotPolicy | None = None, workers: int = 1, **sim_kw) -> Corpus:
    """Episodes from the planted world. With ``robots`` the planted effect
    model is active and robots follow ``policy`` (random walk by default)."""
    if robots:
        sim_kw.setdefault("effects", world.effects)
        policy = policy or RandomWalkPolicy()
    else:
        policy = None
    cfg = world.sim_config(**sim_kw)
    logs = batch_rollout(cfg, policy, episodes, seed, workers)
    corpus = logs_to_corpus(logs, "robot-present" if robots else "baseline")
    corpus.provenance = "synthetic"
    for i, ep in enumerate(corpus.episodes):
        corpus.episodes[i] = [_relabel(v, f"synth-{seed}-{i}") for v in ep]
    return corpus


def _relabel(v: VisitEvent, episode_id: str) -> VisitEvent:
    return VisitEvent(episode_id, v.seq, v.region_id, v.dwell, v.shots, v.victims, v.R, v.smoke, v.targets)


# ---------------------------------------------------------------------------
# direct effect-recovery data


@dataclass
class RecoveryData:
    baseline: MomentTable
    robot: Corpus
    k: float
    lam: float
    means: dict[str, dict[int, float]] = field(default_factory=dict)


def effect_recovery_data(graph: RegionGraph, n_per_region: int = 200, k: float = -2.0,
                         lam: float = DEFAULT_LAMBDA, noise_sd: float = 1.0, seed: int = 0,
                         max_sources: int = 4, max_intensity: float = 5.0) -> RecoveryData:
    """Visits with random smoke fields and outcomes ``mean + k * R + noise``.

    The baseline table carries the exact planted means (large ``n``), so
    residuals isolate the planted slope. Outcomes are left unclamped.
    """
    rng = np.random.default_rng(seed)
    n = len(graph)
    base = {o: {r: float(rng.uniform(20.0, 60.0)) for r in graph.ids} for o in OUTCOMES}
    episodes = []
    for j in range(n_per_region):
        ep = []
        for seq, r in enumerate(graph.ids):
            field_ = np.zeros(n)
            src = rng.choice(n, size=int(rng.integers(1, max_sources + 1)), replace=False)
            field_[src] = rng.uniform(0.0, max_intensity, size=len(src))
            R = float(influence(field_, graph.hops, lam)[graph.index[r]])
            vals = [base[o][r] + k * R + rng.normal(0.0, noise_sd) for o in OUTCOMES]
            smoke = {graph.ids[i]: float(field_[i]) for i in np.flatnonzero(field_)}
            ep.append(VisitEvent(f"rec-{j}", seq, r, vals[0], vals[1], vals[2], R, smoke))
        episodes.append(ep)
    big = 10 ** 6
    cells = {"region": {r: {o: Moments(big, base[o][r], noise_sd ** 2, base[o][r] + 5 * noise_sd)
                            for o in OUTCOMES} for r in graph.ids},
             "group": {}, "global": {"all": {o: Moments(big, float(np.mean(list(base[o].values()))),
                                                         1.0, 100.0) for o in OUTCOMES}}}
    table = MomentTable(cells, {"region": {}, "group": {}, "global": {"all": (0.0, 0.0)}},
                        {r: math.inf for r in graph.ids}, {r.id: r.group for r in graph.regions})
    return RecoveryData(table, Corpus(episodes, "synthetic", "robot-present"), k, lam, base)


@dataclass
class ConstantEvents:
    """Every visit has the same outcome; useful for control experiments."""

    dwell: float = 10.0
    shots: float = 0.0
    victims: float = 0.0
    budget: float = math.inf

    def generate(self, region, time_cap, rng):
        return min(self.dwell, time_cap), self.shots, self.victims

    def mean_time(self, region):
        return self.dwell

    def victim_budget(self, region):
        return self.budget


def path_layout(n: int = 6) -> RegionGraph:
    """``n`` hallway regions in a row; region 0 is the entrance."""
    regions = [{"id": i, "name": f"cell-{i}", "group": "entrance" if i == 0 else "hallway", "floor": 0,
                "centroid": [10.0 * i, 0.0], "area": 50.0, "is_entrance": i == 0} for i in range(n)]
    return load_layout({"regions": regions, "edges": [[i, i + 1] for i in range(n - 1)]})
