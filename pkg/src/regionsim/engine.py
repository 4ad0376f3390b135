"""Discrete-event rollouts: the adversary jumps from visit to visit, outcomes
are drawn from the event model and shifted by robot influence, and robots
move one hop per event boundary."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .effects import EffectModel, SmokeField, modulate
from .features import TransitionContext
from .graph import RegionGraph
from .stats import summarize
from .traces import Corpus, VisitEvent

TERMINATIONS = ("time-budget", "visit-count", "replay")
SUMMARY_KEYS = ("nodes", "time", "shots", "victims")
MAX_EVENTS = 100_000


class RobotPolicy:
    """Chooses a destination (current region or a neighbor) for every idle
    robot at each event boundary."""

    present = True
    name = "policy"

    def reset(self, sim: "Simulation"):
        pass

    def decide(self, sim: "Simulation") -> list[int]:
        raise NotImplementedError


class NoRobots(RobotPolicy):
    present = False
    name = "none"

    def decide(self, sim):
        return []


@dataclass
class SimConfig:
    graph: RegionGraph
    transition: object                # TransitionModel: .choose(ctx, graph, rng, greedy)
    events: object                    # EventModel-like: .generate/.mean_time/.victim_budget
    effects: EffectModel | None = None
    t_max: float = 300.0
    start: str | int = "entrance"     # "entrance" (lowest id), "random" entrance, or a region id
    robots: int = 2
    robot_speed: float = 0.5          # regions per second
    robot_starts: tuple[int, ...] | None = None
    robot_floor: int = 0              # floor used for default robot starts
    multi_floor: bool = True
    termination: str = "time-budget"
    target_visits: tuple[int, ...] | None = None   # cycled per episode in visit-count mode
    replay: tuple[tuple[int, ...], ...] | None = None  # region sequences for replay mode
    greedy: bool = False
    smoke_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.robot_speed > 0:
            raise ValueError("robot speed must be positive")
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination mode {self.termination!r}")
        if self.termination == "visit-count" and not self.target_visits:
            raise ValueError("visit-count mode needs target_visits")
        if self.termination == "replay" and not self.replay:
            raise ValueError("replay mode needs region sequences")
        if self.effects is not None:
            known = set(self.graph.ids)
            for o, ks in self.effects.k.items():
                if set(ks) - known:
                    raise ValueError(f"effect model references regions missing from the graph ({o})")


@dataclass
class WorldState:
    clock: float
    ctx: TransitionContext
    robot_region: list[int]
    robot_dest: list[int | None]
    robot_progress: list[float]
    robot_floor: list[int]
    smoke: SmokeField
    budget: dict[int, float]
    totals: dict[str, float] = field(default_factory=lambda: dict.fromkeys(SUMMARY_KEYS, 0.0))

    @property
    def adversary(self) -> int:
        return self.ctx.current

    def targets(self) -> frozenset[int]:
        return frozenset(r for r, b in self.budget.items() if b > 0)


@dataclass
class RolloutLog:
    events: list[VisitEvent] = field(default_factory=list)
    clocks: list[float] = field(default_factory=list)          # clock at the end of each event
    robot_moves: list[tuple[float, int, int, int]] = field(default_factory=list)  # clock, robot, from, to
    robot_regions: list[tuple[int, ...]] = field(default_factory=list)  # at each event start
    termination: str = ""
    episode: int = 0

    @property
    def summary(self) -> dict[str, float]:
        return {
            "nodes": float(len(self.events)),
            "time": float(sum(e.dwell for e in self.events)),
            "shots": float(sum(e.shots for e in self.events)),
            "victims": float(sum(e.victims for e in self.events)),
        }


def default_robot_starts(graph: RegionGraph, count: int, floor: int = 0) -> tuple[int, ...]:
    """The ``count`` highest-betweenness regions on ``floor`` (ties by id)."""
    cands = [r.id for r in graph.regions if r.floor == floor] or graph.ids
    ranked = sorted(cands, key=lambda r: (-graph.betweenness[graph.index[r]], r))
    return tuple(ranked[i % len(ranked)] for i in range(count))


def robot_distance(state: WorldState, graph: RegionGraph, robot: int) -> float:
    """Hop distance from a robot to the adversary on the full graph (inf if unreachable)."""
    return float(graph.hops[graph.index[state.robot_region[robot]], graph.index[state.adversary]])


class Simulation:
    """One episode as a step-wise state machine.

    ``reset`` places the adversary and robots; each ``step`` applies robot
    decisions, generates the visit at the adversary's current region,
    advances clock and robots, then moves the adversary on.
    """

    def __init__(self, config: SimConfig, policy: RobotPolicy | None = None):
        self.config = config
        self.graph = config.graph
        self.policy = policy or NoRobots()
        self.n_robots = config.robots if self.policy.present else 0

    # -- setup ---------------------------------------------------------------

    def _start_region(self, rng) -> int:
        g, start = self.graph, self.config.start
        if self.config.termination == "replay":
            return self._route[0]
        if isinstance(start, (int, np.integer)):
            if start not in g.index:
                raise ValueError(f"start region {start} not in graph")
            return int(start)
        ents = g.entrances() or g.ids
        if start == "entrance":
            return ents[0]
        if start == "random":
            return ents[int(rng.integers(len(ents)))]
        raise ValueError(f"unknown start rule {start!r}")

    def reset(self, rng: np.random.Generator, episode: int = 0) -> WorldState:
        cfg, g = self.config, self.graph
        self.rng = rng
        self.episode = episode
        self._route = cfg.replay[episode % len(cfg.replay)] if cfg.termination == "replay" else None
        self.target_visits = (cfg.target_visits[episode % len(cfg.target_visits)]
                              if cfg.termination == "visit-count" else None)
        start = self._start_region(rng)
        starts = cfg.robot_starts or default_robot_starts(g, self.n_robots, cfg.robot_floor)
        if len(starts) < self.n_robots:
            raise ValueError("fewer robot starts than robots")
        starts = [int(r) for r in starts[:self.n_robots]]
        for r in starts:
            if r not in g.index:
                raise ValueError(f"robot start {r} not in graph")
        self.state = WorldState(
            clock=0.0,
            ctx=TransitionContext(start),
            robot_region=list(starts),
            robot_dest=[None] * self.n_robots,
            robot_progress=[0.0] * self.n_robots,
            robot_floor=[g[r].floor for r in starts],
            smoke=SmokeField.empty(len(g), cfg.smoke_decay),
            budget={r: float(cfg.events.victim_budget(r)) for r in g.ids},
        )
        for r in starts:
            self.state.smoke.deposit(g.index[r], 1.0, 0.0)
        self.log = RolloutLog(episode=episode)
        self.done = False
        self.policy.reset(self)
        return self.state

    # -- robots --------------------------------------------------------------

    def moves(self, robot: int) -> tuple[int, ...]:
        """Allowed destinations: the current region first, then neighbors
        (restricted to the robot's floor in single-floor mode)."""
        s, g = self.state, self.graph
        here = s.robot_region[robot]
        if s.robot_dest[robot] is not None:
            return (s.robot_dest[robot],)
        nbrs = g.neighbors(here)
        if not self.config.multi_floor:
            nbrs = tuple(r for r in nbrs if g[r].floor == s.robot_floor[robot])
        return (here,) + nbrs

    def idle(self, robot: int) -> bool:
        return self.state.robot_dest[robot] is None

    def _apply(self, decisions):
        s = self.state
        for i in range(self.n_robots):
            if not self.idle(i):
                continue
            dest = int(decisions[i])
            if dest not in self.moves(i):
                raise ValueError(f"robot {i}: destination {dest} not allowed from {s.robot_region[i]}")
            if dest != s.robot_region[i]:
                s.robot_dest[i] = dest
                s.robot_progress[i] = 0.0

    def _advance_robots(self, dt: float):
        s, g = self.state, self.graph
        for i in range(self.n_robots):
            if s.robot_dest[i] is None:
                continue
            s.robot_progress[i] += self.config.robot_speed * dt
            if s.robot_progress[i] >= 1.0:
                prev, s.robot_region[i] = s.robot_region[i], s.robot_dest[i]
                s.robot_dest[i] = None
                s.robot_progress[i] = 0.0
                s.smoke.deposit(g.index[s.robot_region[i]], 1.0, s.clock)
                self.log.robot_moves.append((s.clock, i, prev, s.robot_region[i]))

    # -- events --------------------------------------------------------------

    def time_bound(self, region: int) -> float:
        cfg, ev = self.config, self.config.events
        remaining = cfg.t_max - self.state.clock
        if hasattr(ev, "time_bound"):
            return ev.time_bound(region, remaining, cfg.t_max)
        if cfg.termination == "time-budget" and remaining > ev.mean_time(region):
            return remaining
        return cfg.t_max

    def influence(self, region: int) -> float:
        if self.config.effects is None:
            return 0.0
        W = np.exp(-self.config.effects.lam * self.graph.hops[self.graph.index[region]])
        return float(W @ self.state.smoke.intensity)

    def step(self, decisions=None) -> VisitEvent:
        """Advance one visit event. ``decisions`` defaults to the policy's."""
        if self.done:
            raise RuntimeError("episode already terminated")
        cfg, g, s, rng = self.config, self.graph, self.state, self.rng
        if self.n_robots:
            self._apply(self.policy.decide(self) if decisions is None else decisions)
        region = s.adversary
        self.log.robot_regions.append(tuple(s.robot_region))
        U = self.time_bound(region)
        outcome = cfg.events.generate(region, U, rng)
        dwell, shots, victims = (float(x) for x in outcome)
        R = self.influence(region)
        if cfg.effects is not None and R > 0:
            dwell, shots, victims = modulate((dwell, shots, victims), R, cfg.effects, region,
                                             victim_cap=s.budget[region], time_cap=U)
        victims = min(victims, s.budget[region])
        ev = VisitEvent(
            episode_id=str(self.episode), seq=len(self.log.events), region_id=region,
            dwell=dwell, shots=shots, victims=victims, R=R,
            smoke={r: float(s.smoke.intensity[g.index[r]]) for r in g.ids
                   if s.smoke.intensity[g.index[r]] > 0} if self.n_robots else None,
            targets=s.targets(),
        )
        s.budget[region] -= victims
        s.clock += dwell
        s.smoke.advance(dwell)
        for k, v in zip(SUMMARY_KEYS, (1.0, dwell, shots, victims)):
            s.totals[k] += v
        self.log.events.append(ev)
        self.log.clocks.append(s.clock)
        self._advance_robots(dwell)

        reason = self._terminated()
        if reason:
            self.done = True
            self.log.termination = reason
            return ev
        ctx = s.ctx
        if self._route is not None:
            nxt = self._route[len(self.log.events)]
        else:
            nxt = cfg.transition.choose(TransitionContext(
                region, ctx.previous, dict(ctx.last_visit), s.clock, s.targets(), ctx.steps), g, rng,
                greedy=cfg.greedy)
        last = dict(ctx.last_visit)
        last[region] = s.clock
        s.ctx = TransitionContext(int(nxt), region, last, s.clock, s.targets(), ctx.steps + 1)
        return ev

    def _terminated(self) -> str:
        n = len(self.log.events)
        mode = self.config.termination
        if mode == "time-budget" and self.state.clock >= self.config.t_max:
            return "time-budget"
        if mode == "visit-count" and n >= self.target_visits:
            return "visit-count"
        if mode == "replay" and n >= len(self._route):
            return "replay"
        if n >= MAX_EVENTS:
            return "max-events"
        return ""


def run_episode(config: SimConfig, policy: RobotPolicy | None, rng: np.random.Generator,
                episode: int = 0) -> RolloutLog:
    sim = Simulation(config, policy)
    sim.reset(rng, episode)
    while not sim.done:
        sim.step()
    return sim.log


def episode_rng(base_seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([base_seed, i])


def _chunk(config, policy, indices, base_seed):
    return [run_episode(config, policy, episode_rng(base_seed, i), i) for i in indices]


def batch_rollout(config: SimConfig, policy: RobotPolicy | None, n: int, base_seed: int,
                  workers: int = 1) -> list[RolloutLog]:
    """``n`` independent episodes; episode ``i`` draws from stream ``(base_seed, i)``
    so results do not depend on ``workers``."""
    if n < 1:
        raise ValueError("need at least one episode")
    if workers <= 1:
        return _chunk(config, policy, range(n), base_seed)
    parts = [list(p) for p in np.array_split(np.arange(n), workers) if len(p)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_chunk, config, policy, p, base_seed) for p in parts]
        return [log for f in futures for log in f.result()]


# ---------------------------------------------------------------------------
# exports


def logs_to_corpus(logs: list[RolloutLog], condition: str = "baseline") -> Corpus:
    return Corpus([list(l.events) for l in logs], "generated", condition)


def logs_to_csv(logs: list[RolloutLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "seq", "region", "dwell_s", "shots", "victims", "R", "clock_s"])
    for log_ in logs:
        for ev, clock in zip(log_.events, log_.clocks):
            w.writerow([log_.episode, ev.seq, ev.region_id, repr(ev.dwell), repr(ev.shots),
                        repr(ev.victims), repr(ev.R), repr(clock)])
    return buf.getvalue()


def summaries(logs: list[RolloutLog]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {k: [] for k in SUMMARY_KEYS}
    for l in logs:
        for k, v in l.summary.items():
            out[k].append(v)
    return out


def summary_json(logs: list[RolloutLog]) -> str:
    cols = summaries(logs)
    doc = {"episodes": len(logs),
           "terminations": {r: sum(l.termination == r for l in logs) for r in {l.termination for l in logs}}}
    for k, v in cols.items():
        m, s = summarize(v)
        doc[k] = {"mean": m, "sd": s}
    return json.dumps(doc, indent=1, sort_keys=True)


def corpus_summaries(corpus: Corpus) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {k: [] for k in SUMMARY_KEYS}
    for ep in corpus.episodes:
        out["nodes"].append(float(len(ep)))
        out["time"].append(float(sum(v.dwell for v in ep)))
        out["shots"].append(float(sum(v.shots for v in ep)))
        out["victims"].append(float(sum(v.victims for v in ep)))
    return out


def visit_tuples(events) -> list[tuple[int, float, float, float]]:
    return [(v.region_id, v.dwell, v.shots, v.victims) for v in events if not math.isnan(v.dwell)]
