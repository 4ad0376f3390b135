"""Independent reference implementations used by unit and acceptance tests."""
import math
from collections import deque

import numpy as np


def bfs_hops(graph, source):
    dist = {source: 0}
    q = deque([source])
    while q:
        v = q.popleft()
        for w in sorted(graph.adjacency[v]):
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def nearest(graph, cand, regions):
    d = bfs_hops(graph, cand)
    return min((d.get(r, math.inf) for r in regions), default=math.inf)


def cosine(graph, prev, cur, cand):
    u = np.subtract(graph[cur].centroid, graph[prev].centroid)
    v = np.subtract(graph[cand].centroid, graph[cur].centroid)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    return 0.0 if nu == 0 or nv == 0 else float(u @ v / (nu * nv))


def heuristic_oracle(kind, ctx, graph, rng):
    """Sort candidates by (score, id) and take the first; RA draws one integer."""
    cands = sorted(graph.adjacency[ctx.current])

    def ra():
        return cands[int(rng.integers(len(cands)))]

    if kind == "RA":
        return ra()
    if kind == "CT":
        targets = [r.id for r in graph.regions if r.id != ctx.current
                   and (ctx.targets is None or r.id in ctx.targets)]
        if not targets:
            return ra()
        key = lambda c: (nearest(graph, c, targets), c)
    elif kind == "CV":
        if ctx.previous is None:
            return ra()
        key = lambda c: (-cosine(graph, ctx.previous, ctx.current, c), c)
    elif kind in ("CE", "FE"):
        ents = [r.id for r in graph.regions if r.is_entrance]
        sign = -1 if kind == "FE" else 1
        key = lambda c: (sign * nearest(graph, c, ents), c)
    elif kind == "LA":
        key = lambda c: (-graph[c].area, c)
    else:
        raise ValueError(kind)
    return sorted(cands, key=key)[0]


def numeric_grad(f, params, eps=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``params``."""
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        it = np.nditer(v, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = v[i]
            v[i] = old + eps
            up = f()
            v[i] = old - eps
            down = f()
            v[i] = old
            g[i] = (up - down) / (2 * eps)
        out[k] = g
    return out


def rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))
