import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regionsim import nn
from regionsim.features import (FeatureRegistry, TransitionContext, compute_features, default_registry,
                                direction_similarity, recency, transitions)
from regionsim.traces import Corpus, VisitEvent
from regionsim.transition import (GNNModel, HeuristicModel, ScorerConfig, ScorerWeights, SoftmaxModel,
                                  build_transitions, compare_models, eval_accuracy, greedy_select,
                                  head_logits, heuristic_next, init_weights, loss_and_grad, make_model,
                                  mean_adjacency, sage_embed, score_neighbors, train_scorer)
from conftest import make_graph, path_graph, random_graph
from oracles import heuristic_oracle, numeric_grad, rel_error

SMALL = ScorerConfig(hidden=16, head_hidden=16, max_epochs=60, batch=64, lr=3e-3, patience=10)


def cross_graph():
    # 0 at the center, 1 west, 2 east, 3 north, 4 far east
    return make_graph(5, [(0, 1), (0, 2), (0, 3), (2, 4)],
                      centroids={0: (0, 0), 1: (-1, 0), 2: (1, 0), 3: (0, 1), 4: (2, 0)},
                      areas={1: 10.0, 2: 30.0, 3: 20.0}, groups={4: "entrance"})


def test_direction_and_recency():
    g = cross_graph()
    ctx = TransitionContext(0, previous=1)
    assert direction_similarity(ctx, 2, g) == pytest.approx(1.0)
    assert direction_similarity(ctx, 3, g) == pytest.approx(0.0)
    assert direction_similarity(TransitionContext(0), 2, g) == 0.0
    assert recency(ctx, 2, g) == 0.0
    ctx = TransitionContext(0, 1, last_visit={2: 40.0}, clock=100.0)
    assert recency(ctx, 2, g) == pytest.approx(math.exp(-1.0))
    with pytest.raises(ValueError):
        compute_features(ctx, 4, g)
    v = compute_features(ctx, 2, g)
    assert len(v) == len(default_registry()) and np.all(np.isfinite(v))


def test_registry_rejects_duplicate_names():
    reg = default_registry()
    with pytest.raises(ValueError):
        FeatureRegistry(reg.features + [reg.features[0]])


def test_heuristic_examples():
    g = cross_graph()
    rng = np.random.default_rng(0)
    assert heuristic_next("LA", TransitionContext(0), g, rng) == 2
    assert heuristic_next("CE", TransitionContext(0), g, rng) == 2
    assert heuristic_next("FE", TransitionContext(0), g, rng) == 1
    assert heuristic_next("CV", TransitionContext(0, previous=1), g, rng) == 2
    assert heuristic_next("CT", TransitionContext(0, targets=frozenset({3})), g, rng) == 3
    with pytest.raises(ValueError):
        heuristic_next("RA", TransitionContext(0), make_graph(2, []), rng)
    with pytest.raises(ValueError):
        heuristic_next("XX", TransitionContext(0), g, rng)


def test_ra_uniform():
    g = make_graph(4, [(0, 1), (0, 2), (0, 3)])
    rng = np.random.default_rng(1)
    n = 30_000
    counts = np.bincount([heuristic_next("RA", TransitionContext(0), g, rng) for _ in range(n)], minlength=4)[1:]
    sd = math.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) < 3 * sd)


def test_heuristics_match_oracle_small():
    rng = np.random.default_rng(2)
    for _ in range(100):
        g = random_graph(rng, int(rng.integers(3, 10)), p=0.3)
        cur = int(rng.choice(g.ids))
        nb = g.neighbors(cur)
        prev = int(rng.choice(nb)) if rng.random() < 0.8 else None
        tg = frozenset(int(r) for r in g.ids if rng.random() < 0.3) if rng.random() < 0.7 else None
        ctx = TransitionContext(cur, prev, targets=tg)
        for kind in ("RA", "CT", "CV", "CE", "FE", "LA"):
            seed = int(rng.integers(1 << 30))
            assert heuristic_next(kind, ctx, g, np.random.default_rng(seed)) == \
                heuristic_oracle(kind, ctx, g, np.random.default_rng(seed))


def sage_params(ws, wn, b):
    return {"Ws0": np.array(ws, float), "Wn0": np.array(wn, float), "b0": np.array(b, float)}


def test_sage_embed_hand_and_degenerate():
    g = path_graph(2)
    X = np.array([[1.0], [-2.0]])
    H = sage_embed(X, mean_adjacency(g), sage_params([[1.0]], [[1.0]], [0.0]), layers=1)
    # node 0: 1 + (-2) = -1 -> elu; node 1: -2 + 1 = -1 -> elu
    np.testing.assert_allclose(H, [[math.exp(-1) - 1], [math.exp(-1) - 1]])
    H = sage_embed(X, mean_adjacency(g), sage_params([[2.0]], [[0.5]], [1.0]), layers=1)
    np.testing.assert_allclose(H, [[2 - 1 + 1], [nn.elu(-4 + 0.5 + 1)]])
    lone = make_graph(2, [])
    H = sage_embed(X, mean_adjacency(lone), sage_params([[1.0]], [[7.0]], [0.0]), layers=1)
    np.testing.assert_allclose(H, nn.elu(X))
    p = init_weights(3, 2, np.random.default_rng(0), hidden=8, head_hidden=8)
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    assert np.all(sage_embed(np.ones((5, 3)), mean_adjacency(cross_graph()), zero) == 0)
    with pytest.raises(ValueError):
        sage_embed(np.ones((5, 2)), mean_adjacency(cross_graph()), p)


def gnn(weights_fn=None, static=("betweenness",), dyn=("direction_similarity",), hidden=4, seed=0):
    p = init_weights(len(static), len(dyn), np.random.default_rng(seed), hidden, hidden)
    if weights_fn:
        weights_fn(p)
    return GNNModel(ScorerWeights(p, list(static), list(dyn), 3, 0.0, 0.0))


def test_score_neighbors_examples():
    g = make_graph(3, [(0, 1), (1, 2)])
    cands, p = score_neighbors(TransitionContext(0), g, gnn())
    assert cands == (1,) and p[0] == 1.0

    # identical candidates under zeroed weights
    def zero(p):
        for k in p:
            p[k][...] = 0
    cands, p = score_neighbors(TransitionContext(1), g, gnn(zero))
    np.testing.assert_allclose(p, [0.5, 0.5])
    probs = nn.masked_softmax(np.array([[0.0, math.log(3.0)]]), np.array([[True, True]]))
    np.testing.assert_allclose(probs, [[0.25, 0.75]])
    with pytest.raises(ValueError):
        score_neighbors(TransitionContext(0), make_graph(2, []), gnn())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-50, 50))
def test_distribution_valid_and_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 8, p=0.3)
    cur = int(rng.choice(g.ids))
    prev = int(rng.choice(g.neighbors(cur)))
    model = gnn(seed=seed)
    cands, p = score_neighbors(TransitionContext(cur, prev), g, model)
    assert cands == g.neighbors(cur)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
    z = rng.normal(size=(1, len(cands)))
    mask = np.ones_like(z, bool)
    np.testing.assert_allclose(nn.masked_softmax(z + shift, mask), nn.masked_softmax(z, mask), atol=1e-12)
    assert np.argmax(z + shift) == np.argmax(z)


def walk_corpus(graph, rule, episodes, length, rng):
    eps = []
    for e in range(episodes):
        cur, prev = int(rng.choice(graph.ids)), None
        ep = []
        for j in range(length):
            ep.append(VisitEvent(f"e{e}", j, cur, 5.0, 0.0, 0.0))
            nxt = rule(cur, prev)
            prev, cur = cur, nxt
        eps.append(ep)
    return Corpus(eps)


def top_betweenness(graph):
    def rule(cur, prev):
        return max(graph.neighbors(cur), key=lambda c: (graph.betweenness[graph.index[c]], -c))
    return rule


def test_gradients_match_finite_differences():
    g = path_graph(2)
    reg = default_registry()
    c = walk_corpus(g, lambda cur, prev: 1 - cur, 3, 4, np.random.default_rng(0))
    data = build_transitions(c, g, reg, ["direction_similarity", "recency"])
    X = np.array([[0.3, -1.0], [1.2, 0.5]])
    A = mean_adjacency(g)
    p = init_weights(2, 2, np.random.default_rng(1), hidden=4, head_hidden=3)
    for v in p.values():
        v += np.random.default_rng(2).normal(0, 0.3, v.shape)
    loss, grad = loss_and_grad(p, X, A, data, 3, l2=1e-3)
    num = numeric_grad(lambda: loss_and_grad(p, X, A, data, 3, l2=1e-3)[0], p)
    for k in p:
        assert rel_error(grad[k], num[k]) < 1e-4, k


def test_planted_deterministic_policy_learned():
    g = random_graph(np.random.default_rng(5), 12, p=0.2)
    rng = np.random.default_rng(6)
    rule = top_betweenness(g)
    train, val, test = (walk_corpus(g, rule, n, 12, rng) for n in (60, 15, 30))
    w, hist = train_scorer(train, val, g, SMALL, features=("betweenness",))
    acc = eval_accuracy(GNNModel(w), test, g)
    assert acc.mean >= 0.95
    assert hist[0]["val_loss"] > min(h["val_loss"] for h in hist)


def test_uniform_transitions_near_chance():
    g = random_graph(np.random.default_rng(7), 10, p=0.25)
    rng = np.random.default_rng(8)
    rule = lambda cur, prev: int(rng.choice(g.neighbors(cur)))
    train, val, test = (walk_corpus(g, rule, n, 20, rng) for n in (40, 10, 40))
    w, _ = train_scorer(train, val, g, SMALL, features=("betweenness", "is_entrance"))
    data = build_transitions(test, g)
    acc = eval_accuracy(GNNModel(w), data, g)
    chance = np.mean([1 / len(g.neighbors(ctx.current)) for ctx in data.contexts])
    se = math.sqrt(chance * (1 - chance) / len(data))
    assert abs(np.mean(GNNModel(w).predict_set(data, g, None) == data.target) - chance) < 4 * se + 0.03
    assert acc.ci[0] <= acc.mean <= acc.ci[1]


def test_init_weights_shapes():
    p = init_weights(5, 2, np.random.default_rng(0), hidden=6, head_hidden=3, layers=3)
    assert p["Ws0"].shape == (5, 6) and p["Wn2"].shape == (6, 6)
    assert all(p[f"b{l}"].shape == (6,) for l in range(3))
    assert p["Wh"].shape == (14, 3) and p["bh"].shape == (3,) and p["wo"].shape == (3,)


def test_training_is_deterministic():
    g = random_graph(np.random.default_rng(9), 8, p=0.3)
    c = walk_corpus(g, top_betweenness(g), 20, 8, np.random.default_rng(10))
    cfg = ScorerConfig(hidden=8, head_hidden=8, max_epochs=5)
    a, _ = train_scorer(c, c, g, cfg)
    b, _ = train_scorer(c, c, g, cfg)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    back = ScorerWeights.from_json(a.to_json())
    assert back.static_names == a.static_names and back.dynamic_names == a.dynamic_names
    for k in a.params:
        np.testing.assert_array_equal(back.params[k], a.params[k])
    with pytest.raises(ValueError):
        train_scorer(Corpus([]), c, g, cfg)


def test_non_edge_transition_rejected():
    g = path_graph(3)
    c = Corpus([[VisitEvent("a", 0, 0, 1.0, 0, 0), VisitEvent("a", 1, 2, 1.0, 0, 0)]])
    with pytest.raises(ValueError, match="not an edge"):
        build_transitions(c, g)


def test_eval_accuracy_examples(caplog):
    g = random_graph(np.random.default_rng(11), 8, p=0.3)
    c = walk_corpus(g, lambda cur, prev: heuristic_next("LA", TransitionContext(cur), g, None), 10, 6,
                    np.random.default_rng(12))
    c.episodes.append([VisitEvent("short", 0, 0, 1.0, 0, 0)])
    with caplog.at_level("WARNING"):
        rep = eval_accuracy(HeuristicModel("LA"), c, g)
    assert rep.mean == 1.0 and len(rep.per_episode) == 10
    assert "skipping 1" in caplog.text
    ring = make_graph(12, [(i, (i + 1) % 12) for i in range(12)])
    rng = np.random.default_rng(13)
    rc = walk_corpus(ring, lambda cur, prev: int(rng.choice(ring.neighbors(cur))), 200, 20, rng)
    ra = eval_accuracy(HeuristicModel("RA"), rc, ring, np.random.default_rng(14))
    n = 200 * 19
    assert abs(ra.mean - 0.5) < 3 * math.sqrt(0.25 / n) + 1e-9
    rows = compare_models([ra, rep], reference="RA")
    assert rows[0]["diff_pp"] == "" and rows[1]["diff_pp"] == pytest.approx(100 * (rep.mean - ra.mean))


def test_make_model():
    assert make_model("CV").variant == "CV"
    with pytest.raises(ValueError):
        make_model("GNN")
    with pytest.raises(ValueError):
        make_model("XYZ")


def test_softmax_model_distribution():
    g = cross_graph()
    m = SoftmaxModel({"direction_similarity": math.log(3.0)})
    cands, p = m.distribution(TransitionContext(0, previous=1), g)
    # logits: west -ln3, east +ln3, north 0
    z = np.array([-1.0, 1.0, 0.0]) * math.log(3.0)
    np.testing.assert_allclose(p, np.exp(z) / np.exp(z).sum())


def test_greedy_select_informative_feature_wins():
    g = random_graph(np.random.default_rng(15), 10, p=0.25)
    reg = default_registry().subset(["recency", "direction_similarity"])
    world = SoftmaxModel({"direction_similarity": 6.0})
    rng = np.random.default_rng(16)

    def rule(cur, prev):
        cands, p = world.distribution(TransitionContext(cur, prev), g)
        return cands[int(rng.choice(len(cands), p=p))]

    c = walk_corpus(g, rule, 60, 12, rng)
    cfg = ScorerConfig(hidden=8, head_hidden=8, max_epochs=15, batch=128, lr=5e-3, patience=5)
    res = greedy_select(c, reg, g, k=1, folds=3, seed=0, config=cfg)
    assert res.selected == ["direction_similarity"]
    assert len(res.combinations) == 2
    assert res.to_csv().splitlines()[0] == "kind,stage,feature,features,mean_acc,sd"
    with pytest.raises(ValueError):
        greedy_select(c, reg, g, k=3)


def test_transition_contexts_follow_corpus():
    c = Corpus([[VisitEvent("a", 0, 0, 4.0, 0, 0), VisitEvent("a", 1, 1, math.nan, 0, 0),
                 VisitEvent("a", 2, 0, 2.0, 0, 0, targets=frozenset({1}))]])
    rows = list(transitions(c))
    assert [(ctx.current, nxt) for ctx, nxt, _ in rows] == [(0, 1), (1, 0)]
    ctx = rows[1][0]
    assert ctx.previous == 0 and ctx.clock == 12.0 and ctx.last_visit == {0: 4.0}
    assert ctx.targets == frozenset({1})
