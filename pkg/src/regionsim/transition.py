"""Next-region prediction: heuristic baselines, a GraphSAGE-style neighbor
scorer trained by cross-entropy, greedy forward feature selection and
episode-level accuracy evaluation."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .features import (SELECTED, FeatureRegistry, TransitionContext, default_registry,
                       direction_similarity, static_matrix, transitions)
from .graph import RegionGraph
from .traces import Corpus, kfold_split

log = logging.getLogger(__name__)

HEURISTICS = ("RA", "CT", "CV", "CE", "FE", "LA")
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# heuristic baselines


def _nearest(graph: RegionGraph, cand: int, targets) -> float:
    i = graph.index[cand]
    return min((graph.hops[i, graph.index[t]] for t in targets), default=math.inf)


def _argbest(cands, score, maximize: bool) -> int:
    # candidates are ascending, so strict comparison keeps the lowest id on ties
    best, best_s = cands[0], score(cands[0])
    for c in cands[1:]:
        s = score(c)
        if (s > best_s) if maximize else (s < best_s):
            best, best_s = c, s
    return best


def heuristic_next(kind: str, ctx: TransitionContext, graph: RegionGraph,
                   rng: np.random.Generator) -> int:
    """Next region under one of the baseline movement rules."""
    cands = graph.neighbors(ctx.current)
    if not cands:
        raise ValueError(f"region {ctx.current} has no neighbors")
    if kind == "RA":
        return cands[int(rng.integers(len(cands)))]
    if kind == "CT":
        targets = [r for r in graph.ids if r != ctx.current and ctx.has_target(r)]
        if not targets:
            return heuristic_next("RA", ctx, graph, rng)
        return _argbest(cands, lambda c: _nearest(graph, c, targets), maximize=False)
    if kind == "CV":
        if ctx.previous is None:
            return heuristic_next("RA", ctx, graph, rng)
        return _argbest(cands, lambda c: direction_similarity(ctx, c, graph), maximize=True)
    if kind in ("CE", "FE"):
        ents = graph.entrances()
        return _argbest(cands, lambda c: _nearest(graph, c, ents), maximize=kind == "FE")
    if kind == "LA":
        return _argbest(cands, lambda c: graph[c].area, maximize=True)
    raise ValueError(f"unknown heuristic {kind!r}")


# ---------------------------------------------------------------------------
# transition datasets


@dataclass
class TransitionSet:
    """Padded arrays over observed transitions (candidates ascending by id)."""

    cur: np.ndarray        # (B,) region index
    cand: np.ndarray       # (B, C) region index, 0 where padded
    mask: np.ndarray       # (B, C)
    dyn: np.ndarray        # (B, C, F_dyn)
    target: np.ndarray     # (B,) position of the observed next region
    episode: np.ndarray    # (B,)
    dyn_names: list[str]
    contexts: list[TransitionContext] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.cur)

    def take(self, idx, contexts: bool = True) -> "TransitionSet":
        idx = np.asarray(idx, dtype=int)
        return TransitionSet(self.cur[idx], self.cand[idx], self.mask[idx], self.dyn[idx],
                             self.target[idx], self.episode[idx], self.dyn_names,
                             [self.contexts[i] for i in idx] if self.contexts and contexts else [])

    def columns(self, names) -> "TransitionSet":
        cols = [self.dyn_names.index(n) for n in names]
        out = copy.copy(self)
        out.dyn = self.dyn[:, :, cols]
        out.dyn_names = list(names)
        return out


def build_transitions(corpus: Corpus, graph: RegionGraph, registry: FeatureRegistry | None = None,
                      dyn_names=None) -> TransitionSet:
    registry = registry or default_registry()
    if dyn_names is None:
        dyn_names = registry.split()[1]
    C = max(graph.max_degree, 1)
    rows = list(transitions(corpus))
    B = len(rows)
    cur = np.zeros(B, int)
    cand = np.zeros((B, C), int)
    mask = np.zeros((B, C), bool)
    dyn = np.zeros((B, C, len(dyn_names)))
    target = np.zeros(B, int)
    episode = np.zeros(B, int)
    ctxs = []
    fns = [registry[n].fn for n in dyn_names]
    for b, (ctx, nxt, e) in enumerate(rows):
        cands = graph.neighbors(ctx.current)
        if nxt not in cands:
            raise ValueError(f"episode {e}: transition {ctx.current}->{nxt} is not an edge")
        cur[b] = graph.index[ctx.current]
        for c, r in enumerate(cands):
            cand[b, c] = graph.index[r]
            mask[b, c] = True
            for f, fn in enumerate(fns):
                dyn[b, c, f] = fn(ctx, r, graph)
        target[b] = cands.index(nxt)
        episode[b] = e
        ctxs.append(ctx)
    return TransitionSet(cur, cand, mask, dyn, target, episode, list(dyn_names), ctxs)


# ---------------------------------------------------------------------------
# GraphSAGE-style scorer


@dataclass
class ScorerConfig:
    hidden: int = 64
    head_hidden: int = 64
    layers: int = 3
    dropout: float = 0.1
    l2: float = 1e-4
    lr: float = 1e-3
    batch: int = 32
    max_epochs: int = 200
    patience: int = 15
    plateau: int = 5
    min_lr: float = 1e-5
    seed: int = 0


# reduced scorer used inside feature selection
SELECTION_CONFIG = ScorerConfig(hidden=16, head_hidden=16, max_epochs=20, batch=256, lr=5e-3, patience=5)


@dataclass
class ScorerWeights:
    params: dict[str, np.ndarray]
    static_names: list[str]
    dynamic_names: list[str]
    layers: int = 3
    dropout: float = 0.1
    l2: float = 1e-4

    @property
    def hidden(self) -> int:
        return self.params["Ws0"].shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "format_version": FORMAT_VERSION,
            "static_features": self.static_names,
            "dynamic_features": self.dynamic_names,
            "layers": self.layers, "dropout": self.dropout, "l2": self.l2,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.tolist() for k, v in self.params.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "ScorerWeights":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported weights format {doc.get('format_version')}")
        params = {k: np.array(v, dtype=float).reshape(doc["shapes"][k]) for k, v in doc["params"].items()}
        return cls(params, doc["static_features"], doc["dynamic_features"], doc["layers"],
                   doc["dropout"], doc["l2"])


def init_weights(n_static: int, n_dyn: int, rng: np.random.Generator, hidden: int = 64,
                 head_hidden: int = 64, layers: int = 3) -> dict[str, np.ndarray]:
    p = {}
    width = n_static
    for l in range(layers):
        p[f"Ws{l}"] = nn.glorot(rng, width, hidden)
        p[f"Wn{l}"] = nn.glorot(rng, width, hidden)
        p[f"b{l}"] = np.zeros(hidden)
        width = hidden
    p["Wh"] = nn.glorot(rng, 2 * hidden + n_dyn, head_hidden)
    p["bh"] = np.zeros(head_hidden)
    p["wo"] = nn.glorot(rng, head_hidden, 1)[:, 0]
    return p


def mean_adjacency(graph: RegionGraph) -> np.ndarray:
    """Row ``i`` averages over the in-neighbors of region ``i``."""
    n = len(graph)
    A = np.zeros((n, n))
    for a, b in graph.edges:
        A[graph.index[b], graph.index[a]] = 1.0
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


def sage_embed(X: np.ndarray, A: np.ndarray, params: dict[str, np.ndarray], layers: int = 3,
               dropout: float = 0.0, rng: np.random.Generator | None = None, cache: list | None = None):
    """Mean-aggregate neighbors, combine with self, affine, ELU; repeated.

    Dropout is applied only when ``rng`` is given (training mode).
    """
    if X.shape[1] != params["Ws0"].shape[0]:
        raise ValueError(f"static feature width {X.shape[1]} != {params['Ws0'].shape[0]}")
    H = X
    for l in range(layers):
        M = A @ H
        S = H @ params[f"Ws{l}"] + M @ params[f"Wn{l}"] + params[f"b{l}"]
        E = nn.elu(S)
        if rng is not None and dropout > 0:
            drop = (rng.random(E.shape) >= dropout) / (1.0 - dropout)
        else:
            drop = None
        if cache is not None:
            cache.append((H, M, S, drop))
        H = E if drop is None else E * drop
    return H


def head_logits(H: np.ndarray, params, cur, cand, dyn, cache: dict | None = None):
    Hc = np.broadcast_to(H[cur][:, None, :], cand.shape + (H.shape[1],))
    Z = np.concatenate([Hc, H[cand], dyn], axis=-1)
    U = Z @ params["Wh"] + params["bh"]
    V = nn.elu(U)
    if cache is not None:
        cache.update(Z=Z, U=U, V=V)
    return V @ params["wo"]


def loss_and_grad(params, X, A, data: TransitionSet, layers: int = 3, l2: float = 0.0,
                  dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Mean cross-entropy of observed moves plus ``l2 * sum(W**2)``, with
    analytic gradients for every parameter."""
    stack: list = []
    H = sage_embed(X, A, params, layers, dropout, rng, stack)
    hc: dict = {}
    logits = head_logits(H, params, data.cur, data.cand, data.dyn, hc)
    P = nn.masked_softmax(logits, data.mask)
    B = len(data.cur)
    rows = np.arange(B)
    loss = -np.mean(np.log(P[rows, data.target]))
    weights = [k for k in params if k[0] in "Ww"]
    loss += l2 * sum(float(np.sum(params[k] ** 2)) for k in weights)

    g = {}
    dlog = P.copy()
    dlog[rows, data.target] -= 1.0
    dlog /= B
    V, Z = hc["V"].reshape(-1, hc["V"].shape[-1]), hc["Z"].reshape(-1, hc["Z"].shape[-1])
    flat = dlog.reshape(-1)
    g["wo"] = flat @ V
    dU = flat[:, None] * params["wo"] * nn.elu_grad(hc["U"].reshape(V.shape))
    g["Wh"] = Z.T @ dU
    g["bh"] = dU.sum(axis=0)
    dZ = dU @ params["Wh"].T
    h, n = H.shape[1], H.shape[0]
    # scatter-add into node rows through one-hot matrices
    S_cur = np.zeros((n, B))
    S_cur[data.cur, rows] = 1.0
    S_cand = np.zeros((n, flat.size))
    S_cand[data.cand.reshape(-1), np.arange(flat.size)] = 1.0
    dH = S_cur @ dZ[:, :h].reshape(B, -1, h).sum(axis=1) + S_cand @ dZ[:, h:2 * h]
    for l in reversed(range(layers)):
        Hp, M, S, drop = stack[l]
        dE = dH if drop is None else dH * drop
        dS = dE * nn.elu_grad(S)
        g[f"Ws{l}"] = Hp.T @ dS
        g[f"Wn{l}"] = M.T @ dS
        g[f"b{l}"] = dS.sum(axis=0)
        dH = dS @ params[f"Ws{l}"].T + A.T @ (dS @ params[f"Wn{l}"].T)
    for k in weights:
        g[k] = g[k] + 2.0 * l2 * params[k]
    return loss, g


def train_scorer(train: Corpus | TransitionSet, val: Corpus | TransitionSet, graph: RegionGraph,
                 config: ScorerConfig = ScorerConfig(), features=SELECTED,
                 registry: FeatureRegistry | None = None) -> tuple[ScorerWeights, list[dict]]:
    """Fit the scorer with Adam, early stopping and plateau LR halving.

    Returns the best-validation-loss weights and the per-epoch history.
    """
    registry = registry or default_registry()
    static_names, dyn_names = registry.split(features)
    if isinstance(train, Corpus):
        train = build_transitions(train, graph, registry, dyn_names)
    else:
        train = train.columns(dyn_names)
    if isinstance(val, Corpus):
        val = build_transitions(val, graph, registry, dyn_names)
    else:
        val = val.columns(dyn_names)
    if len(train) == 0:
        raise ValueError("no training transitions")

    rng = np.random.default_rng(config.seed)
    X = static_matrix(graph, registry, static_names)
    A = mean_adjacency(graph)
    params = init_weights(X.shape[1], len(dyn_names), rng, config.hidden, config.head_hidden,
                          config.layers)
    opt = nn.Adam(params, config.lr)
    best, best_loss = copy.deepcopy(params), math.inf
    since_best = since_improve = 0
    plateau_best = math.inf
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        tl = 0.0
        for s in range(0, len(order), config.batch):
            batch = train.take(order[s:s + config.batch], contexts=False)
            loss, grads = loss_and_grad(params, X, A, batch, config.layers, config.l2,
                                        config.dropout, rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            opt.step(params, grads)
            tl += loss * len(batch)
        val_set = val if len(val) else train
        vl, _ = loss_and_grad(params, X, A, val_set, config.layers, 0.0)
        history.append({"epoch": epoch, "train_loss": tl / len(train), "val_loss": vl, "lr": opt.lr})
        if vl < best_loss - 1e-9:
            best, best_loss, since_best = copy.deepcopy(params), vl, 0
        else:
            since_best += 1
        if vl < plateau_best - 1e-9:
            plateau_best, since_improve = vl, 0
        else:
            since_improve += 1
            if since_improve >= config.plateau:
                opt.lr = max(opt.lr * 0.5, config.min_lr)
                since_improve = 0
        if since_best >= config.patience:
            break
    return ScorerWeights(best, static_names, dyn_names, config.layers, config.dropout, config.l2), history


# ---------------------------------------------------------------------------
# transition models


class TransitionModel:
    """Common interface: a distribution over neighbors and a next-region pick."""

    variant = "?"

    def distribution(self, ctx: TransitionContext, graph: RegionGraph) -> tuple[tuple[int, ...], np.ndarray]:
        raise NotImplementedError

    def choose(self, ctx, graph, rng, greedy: bool = False) -> int:
        cands, p = self.distribution(ctx, graph)
        if greedy:
            return cands[int(np.argmax(p))]
        return cands[int(rng.choice(len(cands), p=p))]

    def predict(self, ctx, graph, rng) -> int:
        cands, p = self.distribution(ctx, graph)
        return cands[int(np.argmax(p))]

    def predict_set(self, data: TransitionSet, graph: RegionGraph, rng) -> np.ndarray:
        """Predicted candidate position for every transition in ``data``."""
        out = np.zeros(len(data), int)
        for b, ctx in enumerate(data.contexts):
            r = self.predict(ctx, graph, rng)
            out[b] = graph.neighbors(ctx.current).index(r)
        return out


class HeuristicModel(TransitionModel):
    def __init__(self, kind: str):
        if kind not in HEURISTICS:
            raise ValueError(f"unknown heuristic {kind!r}")
        self.variant = kind

    def predict(self, ctx, graph, rng) -> int:
        return heuristic_next(self.variant, ctx, graph, rng)

    def choose(self, ctx, graph, rng, greedy: bool = False) -> int:
        return heuristic_next(self.variant, ctx, graph, rng)

    def distribution(self, ctx, graph):
        cands = graph.neighbors(ctx.current)
        if self.variant == "RA":
            return cands, np.full(len(cands), 1.0 / len(cands))
        pick = heuristic_next(self.variant, ctx, graph, np.random.default_rng(0))
        return cands, np.array([float(c == pick) for c in cands])


class SoftmaxModel(TransitionModel):
    """Softmax over a weighted sum of features (the synthetic ground truth)."""

    variant = "SOFTMAX"

    def __init__(self, weights: dict[str, float], registry: FeatureRegistry | None = None,
                 temperature: float = 1.0):
        self.weights = dict(weights)
        self.registry = registry or default_registry()
        self.temperature = temperature

    def logits(self, ctx, graph):
        cands = graph.neighbors(ctx.current)
        z = np.array([sum(w * self.registry.value(n, ctx, c, graph) for n, w in self.weights.items())
                      for c in cands]) / self.temperature
        return cands, z

    def distribution(self, ctx, graph):
        cands, z = self.logits(ctx, graph)
        if not cands:
            raise ValueError(f"region {ctx.current} has no neighbors")
        e = np.exp(z - z.max())
        return cands, e / e.sum()


class StationaryModel(TransitionModel):
    """An adversary that never leaves its region."""

    variant = "STAY"

    def choose(self, ctx, graph, rng, greedy=False):
        return ctx.current

    def predict(self, ctx, graph, rng):
        return ctx.current


class GNNModel(TransitionModel):
    variant = "GNN"

    def __init__(self, weights: ScorerWeights, registry: FeatureRegistry | None = None):
        self.weights = weights
        self.registry = registry or default_registry()
        self._emb: dict[int, np.ndarray] = {}

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_emb"] = {}
        return state

    def embeddings(self, graph: RegionGraph) -> np.ndarray:
        key = id(graph)
        if key not in self._emb:
            X = static_matrix(graph, self.registry, self.weights.static_names)
            self._emb = {key: sage_embed(X, mean_adjacency(graph), self.weights.params, self.weights.layers)}
        return self._emb[key]

    def distribution(self, ctx, graph):
        return score_neighbors(ctx, graph, self)

    def predict_set(self, data, graph, rng):
        data = data.columns(self.weights.dynamic_names)
        logits = head_logits(self.embeddings(graph), self.weights.params, data.cur, data.cand, data.dyn)
        return np.argmax(np.where(data.mask, logits, -np.inf), axis=1)


def score_neighbors(ctx: TransitionContext, graph: RegionGraph, model: GNNModel):
    """Softmax over the current region's neighbors under the trained scorer."""
    cands = graph.neighbors(ctx.current)
    if not cands:
        raise ValueError(f"region {ctx.current} has no neighbors")
    H = model.embeddings(graph)
    reg = model.registry
    dyn = np.array([[reg.value(n, ctx, c, graph) for n in model.weights.dynamic_names] for c in cands])
    dyn = dyn.reshape(1, len(cands), len(model.weights.dynamic_names))
    cur = np.array([graph.index[ctx.current]])
    cand = np.array([[graph.index[c] for c in cands]])
    z = head_logits(H, model.weights.params, cur, cand, dyn)[0]
    e = np.exp(z - z.max())
    return cands, e / e.sum()


def make_model(variant: str, weights: ScorerWeights | None = None, **kw) -> TransitionModel:
    if variant in HEURISTICS:
        return HeuristicModel(variant)
    if variant == "GNN":
        if weights is None:
            raise ValueError("GNN variant needs trained weights")
        return GNNModel(weights, kw.get("registry"))
    raise ValueError(f"unknown transition variant {variant!r}")


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class AccuracyReport:
    model: str
    per_episode: list[float]
    mean: float
    ci: tuple[float, float]


def _t_ci(x: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    from scipy.special import stdtrit

    m = float(np.mean(x))
    if len(x) < 2:
        return m, m
    half = stdtrit(len(x) - 1, 0.5 + level / 2) * np.std(x, ddof=1) / np.sqrt(len(x))
    return m - half, m + half


def eval_accuracy(model: TransitionModel, corpus: Corpus | TransitionSet, graph: RegionGraph,
                  rng: np.random.Generator | None = None, registry: FeatureRegistry | None = None
                  ) -> AccuracyReport:
    """Per-episode top-1 accuracy with a t-based 95% interval."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if isinstance(corpus, Corpus):
        short = sum(1 for ep in corpus.episodes if len(ep) < 2)
        if short:
            log.warning("skipping %d episode(s) with fewer than 2 visits", short)
        data = build_transitions(corpus, graph, registry)
    else:
        data = corpus
    if len(data) == 0:
        raise ValueError("no transitions to evaluate")
    hit = model.predict_set(data, graph, rng) == data.target
    per_ep = [float(hit[data.episode == e].mean()) for e in np.unique(data.episode)]
    arr = np.array(per_ep)
    return AccuracyReport(model.variant, per_ep, float(arr.mean()), _t_ci(arr))


def compare_models(reports: list[AccuracyReport], reference: str = "GNN") -> list[dict]:
    """Bar-chart rows: mean, CI, difference to ``reference`` in percentage
    points and Welch significance stars."""
    from .stats import welch_t

    ref = next((r for r in reports if r.model == reference), None)
    rows = []
    for r in reports:
        row = {"model": r.model, "mean": r.mean, "ci_low": r.ci[0], "ci_high": r.ci[1],
               "diff_pp": "", "stars": ""}
        if ref is not None and r is not ref:
            row["diff_pp"] = 100.0 * (r.mean - ref.mean)
            if len(r.per_episode) >= 2 and len(ref.per_episode) >= 2:
                row["stars"] = welch_t(ref.per_episode, r.per_episode).stars
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# greedy forward selection


@dataclass
class SelectionResult:
    stages: list[dict]        # stage, feature, mean_acc, sd
    combinations: list[dict]  # stage, features, mean_acc, sd

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "stage", "feature", "features", "mean_acc", "sd"])
        for s in self.stages:
            w.writerow(["selected", s["stage"], s["feature"], "", s["mean_acc"], s["sd"]])
        for c in self.combinations:
            w.writerow(["candidate", c["stage"], c["features"][-1], "+".join(c["features"]),
                        c["mean_acc"], c["sd"]])
        return buf.getvalue()

    @property
    def selected(self) -> list[str]:
        return [s["feature"] for s in self.stages]


def cv_accuracy(data: TransitionSet, corpus: Corpus, graph: RegionGraph, features, registry,
                folds: int, seed: int, config: ScorerConfig) -> list[float]:
    """Mean held-out accuracy per fold of a scorer on ``features``."""
    out = []
    n_ep = len(corpus)
    order = np.random.default_rng(seed).permutation(n_ep)
    parts = np.array_split(order, folds)
    for i, test_eps in enumerate(parts):
        train_eps = np.concatenate([p for j, p in enumerate(parts) if j != i])
        # a tenth of the training episodes drives early stopping
        n_val = max(1, len(train_eps) // 10)
        val_eps, fit_eps = train_eps[:n_val], train_eps[n_val:]
        tr = data.take(np.flatnonzero(np.isin(data.episode, fit_eps)))
        va = data.take(np.flatnonzero(np.isin(data.episode, val_eps)))
        te = data.take(np.flatnonzero(np.isin(data.episode, test_eps)))
        w, _ = train_scorer(tr, va, graph, replace(config, seed=seed + i), features, registry)
        out.append(eval_accuracy(GNNModel(w, registry), te, graph).mean)
    return out


def greedy_select(corpus: Corpus, registry: FeatureRegistry, graph: RegionGraph, k: int = 6,
                  folds: int = 5, seed: int = 0, config: ScorerConfig = SELECTION_CONFIG) -> SelectionResult:
    """Forward selection: each stage adds the feature with the best mean
    cross-validated top-1 accuracy given the features already chosen."""
    if len(registry) == 0:
        raise ValueError("empty feature registry")
    if k > len(registry):
        raise ValueError(f"k={k} exceeds registry size {len(registry)}")
    data = build_transitions(corpus, graph, registry)
    selected: list[str] = []
    stages, combos = [], []
    for stage in range(1, k + 1):
        best = None
        for name in registry.names:
            if name in selected:
                continue
            feats = selected + [name]
            accs = cv_accuracy(data, corpus, graph, feats, registry, folds, seed, config)
            row = {"stage": stage, "features": feats, "mean_acc": float(np.mean(accs)),
                   "sd": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0}
            combos.append(row)
            if best is None or row["mean_acc"] > best["mean_acc"]:
                best = row
        selected.append(best["features"][-1])
        stages.append({"stage": stage, "feature": selected[-1], "mean_acc": best["mean_acc"],
                       "sd": best["sd"]})
        log.info("stage %d: +%s  acc %.3f", stage, selected[-1], best["mean_acc"])
    return SelectionResult(stages, combos)
