"""Per-candidate features for next-region prediction.

Static features depend only on the candidate region and feed the graph
embedding; dynamic ones depend on the adversary's state and enter the
scoring head directly.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .graph import RegionGraph
from .traces import Corpus

RECENCY_TAU = 60.0  # seconds
DEFAULT_DWELL = 8.0  # clock step for visits with unknown dwell


@dataclass
class TransitionContext:
    current: int
    previous: int | None = None
    last_visit: dict[int, float] = field(default_factory=dict)  # region -> clock when last left
    clock: float = 0.0
    targets: frozenset[int] | None = None  # None: every region has targets
    steps: int = 0

    def has_target(self, region: int) -> bool:
        return self.targets is None or region in self.targets


def direction_similarity(ctx: TransitionContext, cand: int, graph: RegionGraph) -> float:
    if ctx.previous is None:
        return 0.0
    (px, py), (cx, cy), (nx, ny) = (graph[ctx.previous].centroid, graph[ctx.current].centroid,
                                    graph[cand].centroid)
    ux, uy, vx, vy = cx - px, cy - py, nx - cx, ny - cy
    nu, nv = math.hypot(ux, uy), math.hypot(vx, vy)
    if nu == 0 or nv == 0:
        return 0.0
    return (ux * vx + uy * vy) / (nu * nv)


def recency(ctx: TransitionContext, cand: int, graph: RegionGraph) -> float:
    t = ctx.last_visit.get(cand)
    if t is None:
        return 0.0
    return math.exp(-max(ctx.clock - t, 0.0) / RECENCY_TAU)


def has_target(ctx: TransitionContext, cand: int, graph: RegionGraph) -> float:
    return 1.0 if ctx.has_target(cand) else 0.0


def same_floor(ctx: TransitionContext, cand: int, graph: RegionGraph) -> float:
    return 1.0 if graph[cand].floor == graph[ctx.current].floor else 0.0


def _closeness(graph: RegionGraph) -> np.ndarray:
    D = graph.hops
    out = np.zeros(len(graph))
    for i in range(len(graph)):
        reach = D[i][np.isfinite(D[i]) & (D[i] > 0)]
        out[i] = len(reach) / reach.sum() if reach.size else 0.0
    return out


def _static(name: str, graph: RegionGraph) -> np.ndarray:
    regs = graph.regions
    if name == "betweenness":
        return graph.betweenness.copy()
    if name == "is_entrance":
        return np.array([float(r.is_entrance) for r in regs])
    if name == "is_outside":
        return np.array([float(r.is_outside) for r in regs])
    if name == "area":
        a = np.array([r.area for r in regs])
        return a / a.max()
    if name == "degree":
        d = np.array([len(graph.adjacency[r.id]) for r in regs], float)
        return d / max(d.max(), 1.0)
    if name == "closeness":
        return _closeness(graph)
    if name == "floor":
        f = np.array([r.floor for r in regs], float)
        return f / max(f.max(), 1.0)
    raise KeyError(name)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "static" or "dynamic"
    fn: Callable[[TransitionContext, int, RegionGraph], float] | None = None


SELECTED = ("direction_similarity", "recency", "has_target", "betweenness", "is_entrance", "is_outside")


class FeatureRegistry:
    """Ordered, uniquely named feature extractors."""

    def __init__(self, features: list[Feature]):
        names = [f.name for f in features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        self.features = list(features)
        self._by_name = {f.name: f for f in features}
        self._static_cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def __getstate__(self):
        state = dict(self.__dict__)
        del state["_static_cache"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._static_cache = weakref.WeakKeyDictionary()

    def __iter__(self) -> Iterator[Feature]:
        return iter(self.features)

    def __len__(self):
        return len(self.features)

    def __getitem__(self, name: str) -> Feature:
        return self._by_name[name]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def subset(self, names) -> "FeatureRegistry":
        return FeatureRegistry([self._by_name[n] for n in names])

    def split(self, names=None) -> tuple[list[str], list[str]]:
        names = self.names if names is None else list(names)
        return ([n for n in names if self._by_name[n].kind == "static"],
                [n for n in names if self._by_name[n].kind == "dynamic"])

    def static_column(self, name: str, graph: RegionGraph) -> np.ndarray:
        cache = self._static_cache.setdefault(graph, {})
        if name not in cache:
            cache[name] = _static(name, graph)
        return cache[name]

    def value(self, name: str, ctx: TransitionContext, cand: int, graph: RegionGraph) -> float:
        f = self._by_name[name]
        if f.kind == "static":
            return float(self.static_column(name, graph)[graph.index[cand]])
        return float(f.fn(ctx, cand, graph))


def default_registry() -> FeatureRegistry:
    """The six selected features plus graph-theoretic extras as candidates."""
    return FeatureRegistry([
        Feature("direction_similarity", "dynamic", direction_similarity),
        Feature("recency", "dynamic", recency),
        Feature("has_target", "dynamic", has_target),
        Feature("betweenness", "static"),
        Feature("is_entrance", "static"),
        Feature("is_outside", "static"),
        Feature("degree", "static"),
        Feature("closeness", "static"),
        Feature("area", "static"),
        Feature("floor", "static"),
        Feature("same_floor", "dynamic", same_floor),
    ])


def compute_features(ctx: TransitionContext, cand: int, graph: RegionGraph,
                     registry: FeatureRegistry | None = None) -> np.ndarray:
    """One value per registered feature for moving to ``cand``."""
    registry = registry or default_registry()
    if cand not in graph.neighbors(ctx.current):
        raise ValueError(f"region {cand} is not adjacent to {ctx.current}")
    return np.array([registry.value(n, ctx, cand, graph) for n in registry.names])


def static_matrix(graph: RegionGraph, registry: FeatureRegistry, names) -> np.ndarray:
    """``|V| x len(names)`` static inputs; a constant column when empty."""
    if not names:
        return np.ones((len(graph), 1))
    return np.column_stack([registry.static_column(n, graph) for n in names])


def transitions(corpus: Corpus) -> Iterator[tuple[TransitionContext, int, int]]:
    """Yield ``(context, next_region, episode_index)`` for every observed move.

    The context is the state when the adversary leaves the current visit:
    clock at the end of its dwell, last-exit times of earlier regions and
    the target set recorded at the start of the next visit.
    """
    for e, ep in enumerate(corpus.episodes):
        clock = 0.0
        last: dict[int, float] = {}
        prev = None
        for j, v in enumerate(ep):
            clock += DEFAULT_DWELL if math.isnan(v.dwell) else v.dwell
            if j + 1 < len(ep):
                nxt = ep[j + 1]
                yield (TransitionContext(v.region_id, prev, dict(last), clock, nxt.targets, j),
                       nxt.region_id, e)
            last[v.region_id] = clock
            prev = v.region_id
