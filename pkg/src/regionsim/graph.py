"""Building region graph: loading, validation and derived metrics."""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

GROUPS = ("classroom", "hallway", "common", "stairwell", "entrance", "outdoor")
INF = math.inf


class LayoutError(ValueError):
    """Raised for malformed or inconsistent layout documents."""


@dataclass(frozen=True)
class Region:
    id: int
    name: str
    group: str
    floor: int
    centroid: tuple[float, float]
    area: float
    is_entrance: bool = False
    is_outside: bool = False


@dataclass(frozen=True, eq=False)
class RegionGraph:
    """Directed region graph with eagerly computed metrics.

    Regions are stored sorted by id; ``index`` maps a region id to its row
    in ``hops``, ``distances`` and ``betweenness``. ``hops`` is always the
    hop-count matrix; ``distances`` follows ``distance_mode``.
    """

    regions: tuple[Region, ...]
    edges: frozenset[tuple[int, int]]
    distance_mode: str = "hops"
    index: dict[int, int] = field(init=False, repr=False)
    adjacency: dict[int, tuple[int, ...]] = field(init=False, repr=False)
    hops: np.ndarray = field(init=False, repr=False)
    distances: np.ndarray = field(init=False, repr=False)
    betweenness: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ids = [r.id for r in self.regions]
        set_ = object.__setattr__
        set_(self, "regions", tuple(sorted(self.regions, key=lambda r: r.id)))
        set_(self, "index", {r.id: i for i, r in enumerate(self.regions)})
        if len(self.index) != len(ids):
            raise LayoutError("duplicate region id")
        adj: dict[int, list[int]] = {r.id: [] for r in self.regions}
        for a, b in self.edges:
            if a not in adj or b not in adj:
                bad = a if a not in adj else b
                raise LayoutError(f"edge ({a}, {b}) references undefined region id {bad}")
            adj[a].append(b)
        set_(self, "adjacency", {k: tuple(sorted(v)) for k, v in adj.items()})
        set_(self, "hops", shortest_path_matrix(self))
        set_(self, "distances", self.hops if self.distance_mode == "hops"
             else shortest_path_matrix(self, mode=self.distance_mode))
        set_(self, "betweenness", betweenness(self))

    def __len__(self):
        return len(self.regions)

    def __getitem__(self, region_id: int) -> Region:
        try:
            return self.regions[self.index[region_id]]
        except KeyError:
            raise KeyError(f"unknown region id {region_id}") from None

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.regions]

    def neighbors(self, region_id: int) -> tuple[int, ...]:
        return neighbors(self, region_id)

    def dist(self, a: int, b: int) -> float:
        return float(self.hops[self.index[a], self.index[b]])

    @property
    def max_degree(self) -> int:
        return max((len(v) for v in self.adjacency.values()), default=0)

    @property
    def diameter(self) -> float:
        finite = self.hops[np.isfinite(self.hops)]
        return float(finite.max()) if finite.size else 0.0

    def entrances(self) -> list[int]:
        return [r.id for r in self.regions if r.is_entrance]

    def subgraph(self, keep: Iterable[int]) -> "RegionGraph":
        keep = set(keep)
        return RegionGraph(
            tuple(r for r in self.regions if r.id in keep),
            frozenset((a, b) for a, b in self.edges if a in keep and b in keep),
            self.distance_mode,
        )

    def to_document(self) -> dict:
        return {
            "regions": [
                {
                    "id": r.id, "name": r.name, "group": r.group, "floor": r.floor,
                    "centroid": list(r.centroid), "area": r.area,
                    "is_entrance": r.is_entrance, "is_outside": r.is_outside,
                }
                for r in self.regions
            ],
            "edges": [[a, b, {"directed": True}] for a, b in sorted(self.edges)],
        }


def _check_region(raw: dict) -> Region:
    try:
        rid = int(raw["id"])
    except (KeyError, TypeError, ValueError):
        raise LayoutError(f"region without a valid integer id: {raw!r}") from None
    try:
        region = Region(
            id=rid,
            name=str(raw.get("name", f"r{rid}")),
            group=str(raw["group"]),
            floor=int(raw.get("floor", 0)),
            centroid=(float(raw["centroid"][0]), float(raw["centroid"][1])),
            area=float(raw["area"]),
            is_entrance=bool(raw.get("is_entrance", False)),
            is_outside=bool(raw.get("is_outside", False)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise LayoutError(f"region {rid}: malformed field ({exc})") from None
    if rid < 0:
        raise LayoutError(f"region {rid}: negative id")
    if region.group not in GROUPS:
        raise LayoutError(f"region {rid}: unknown group {region.group!r}")
    if not region.area > 0:
        raise LayoutError(f"region {rid}: area must be positive, got {region.area}")
    if region.is_outside and region.group != "outdoor":
        raise LayoutError(f"region {rid}: is_outside requires group 'outdoor'")
    if region.is_entrance and region.group != "entrance":
        raise LayoutError(f"region {rid}: is_entrance requires group 'entrance'")
    return region


def load_layout(document: bytes | str | dict, distance_mode: str = "hops") -> RegionGraph:
    """Parse a layout JSON document into a validated :class:`RegionGraph`.

    Edges are ``[from, to]`` pairs inserted in both directions, unless a
    third element ``{"directed": true}`` marks a one-way movement.
    """
    if isinstance(document, dict):
        doc = document
    else:
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise LayoutError(f"layout is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "regions" not in doc:
        raise LayoutError("layout must be an object with a 'regions' array")

    regions = []
    seen = set()
    for raw in doc["regions"]:
        region = _check_region(raw)
        if region.id in seen:
            raise LayoutError(f"duplicate region id {region.id}")
        seen.add(region.id)
        regions.append(region)

    edges = set()
    for pair in doc.get("edges", []):
        try:
            a, b = int(pair[0]), int(pair[1])
        except (TypeError, ValueError, IndexError):
            raise LayoutError(f"malformed edge {pair!r}") from None
        for end in (a, b):
            if end not in seen:
                raise LayoutError(f"edge ({a}, {b}) references undefined region id {end}")
        directed = len(pair) > 2 and isinstance(pair[2], dict) and pair[2].get("directed", False)
        edges.add((a, b))
        if not directed:
            edges.add((b, a))

    graph = RegionGraph(tuple(regions), frozenset(edges), distance_mode)
    for r in graph.regions:
        if not r.is_outside and not graph.adjacency[r.id]:
            log.warning("indoor region %d has no outgoing edges", r.id)
    return graph


def neighbors(graph: RegionGraph, region_id: int) -> tuple[int, ...]:
    """Out-neighbors of ``region_id`` in ascending id order."""
    try:
        return graph.adjacency[region_id]
    except KeyError:
        raise KeyError(f"unknown region id {region_id}") from None


def _bfs(adj: dict[int, tuple[int, ...]], source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def shortest_path_matrix(graph: RegionGraph, mode: str = "hops") -> np.ndarray:
    """All-pairs shortest-path distances, ``inf`` where unreachable.

    ``mode="hops"`` counts edges; ``mode="euclidean"`` weights each edge by
    the distance between region centroids (Dijkstra).
    """
    n = len(graph.regions)
    ids = [r.id for r in graph.regions]
    D = np.full((n, n), INF)
    if mode == "hops":
        for i, s in enumerate(ids):
            for t, d in _bfs(graph.adjacency, s).items():
                D[i, graph.index[t]] = d
        return D
    if mode != "euclidean":
        raise ValueError(f"unknown distance mode {mode!r}")
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    rows, cols, w = [], [], []
    for a, b in graph.edges:
        ca, cb = graph[a].centroid, graph[b].centroid
        rows.append(graph.index[a])
        cols.append(graph.index[b])
        # zero-length edges would vanish from the sparse matrix
        w.append(max(math.dist(ca, cb), 1e-9))
    M = csr_matrix((w, (rows, cols)), shape=(n, n))
    return dijkstra(M, directed=True)


def betweenness(graph: RegionGraph) -> np.ndarray:
    """Normalized betweenness centrality (Brandes, unweighted, directed).

    Scores are divided by ``(n - 1)(n - 2)``, the number of ordered
    source-target pairs that exclude the node itself.
    """
    ids = [r.id for r in graph.regions]
    n = len(ids)
    cb = dict.fromkeys(ids, 0.0)
    for s in ids:
        stack = []
        preds: dict[int, list[int]] = {v: [] for v in ids}
        sigma = dict.fromkeys(ids, 0.0)
        dist = dict.fromkeys(ids, -1)
        sigma[s], dist[s] = 1.0, 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in graph.adjacency[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(ids, 0.0)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    scale = (n - 1) * (n - 2)
    out = np.array([cb[v] for v in ids])
    return out / scale if scale > 0 else np.zeros(n)
