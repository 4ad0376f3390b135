"""Command-line workflow: ingest or synthesize data, fit the models, run
rollouts, evaluate fidelity and train robot policies.

Settings come from (highest precedence first) command-line flags,
``REGIONSIM_<SECTION>_<KEY>`` environment variables, the TOML file given
by ``--config`` and built-in defaults.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .effects import LAMBDA_GRID, EffectModel, calibrate_lambda, corpus_influence, fit_coeffs
from .engine import (SimConfig, batch_rollout, corpus_summaries, logs_to_csv, summaries, summary_json,
                     visit_tuples)
from .events import EventModel, VariantKind
from .features import SELECTED, default_registry
from .graph import load_layout
from .policy import STRATEGIES, TrainConfig, ddqn_train, heuristic_policy, QNet, QPolicy
from .stats import fidelity_report, policy_table, reference_row, rows_to_csv
from .traces import (Corpus, extract_visits, kfold_split, parse_trace, parse_visits, pool_moments,
                     with_influence, write_visits)
from .transition import (HEURISTICS, GNNModel, HeuristicModel, ScorerConfig, ScorerWeights,
                         SoftmaxModel, compare_models, eval_accuracy, greedy_select, train_scorer)

log = logging.getLogger("regionsim")

ENV_PREFIX = "REGIONSIM_"
COMMANDS = ("ingest", "synth", "train-transition", "select-features", "fit-events", "fit-effects",
            "simulate", "evaluate", "train-policy", "report")

DEFAULTS = {
    "paths": {"layout": "layout.json", "baseline": "baseline.csv", "robot": "robot.csv"},
    "events": {"variant": "region-sampling", "n_min": 8},
    "effects": {"tau": 10.0, "lambda_grid": list(LAMBDA_GRID), "folds": 5},
    "transition": {"model": "gnn", "hidden": 64, "max_epochs": 200, "folds": 5, "select_k": 6},
    "sim": {"t_max": 300.0, "robots": 2, "robot_speed": 0.5, "multi_floor": True,
            "termination": "time-budget", "episodes": 600, "policy": "none", "start": "entrance"},
    "train": {f.name: f.default for f in fields(TrainConfig)},
    "evaluate": {"folds": 5, "rollouts": 600},
    "synth": {"episodes": 60, "robot_episodes": 60, "world_seed": 0},
}

# artifact file name -> command that produces it
PRODUCERS = {
    "layout.json": "synth", "baseline.csv": "ingest or synth", "robot.csv": "ingest or synth",
    "events.json": "fit-events", "effects.json": "fit-effects", "scorer.json": "train-transition",
    "planted.json": "synth", "policy.json": "train-policy",
}


class CommandError(Exception):
    def __init__(self, kind: str, message: str, hint: str = ""):
        super().__init__(message)
        self.kind, self.message, self.hint = kind, message, hint


# ---------------------------------------------------------------------------
# configuration


def _coerce(text: str, like):
    if isinstance(like, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float) or like is None:
        try:
            return float(text)
        except ValueError:
            return text
    if isinstance(like, list):
        return [float(v) for v in text.split(",") if v]
    return text


def load_config(path: str | None, env: dict[str, str] | None = None) -> dict:
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path:
        p = Path(path)
        if not p.exists():
            raise CommandError("missing-input", f"config file {path} does not exist")
        with p.open("rb") as fh:
            doc = tomllib.load(fh)
        for sec, vals in doc.items():
            if isinstance(vals, dict):
                cfg.setdefault(sec, {}).update(vals)
            else:
                cfg.setdefault("", {})[sec] = vals
    env = os.environ if env is None else env
    for key, val in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        for sec in cfg:
            if sec and rest.startswith(sec + "_"):
                name = rest[len(sec) + 1:]
                cfg[sec][name] = _coerce(val, cfg[sec].get(name))
                break
    return cfg


def sub_seed(root: int, name: str) -> int:
    """Named, independent seed derived from the root seed."""
    return int.from_bytes(hashlib.sha256(f"{root}:{name}".encode()).digest()[:8], "little")


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Tracks inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, args, cfg: dict):
        self.command, self.args, self.cfg = command, args, cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.t0 = time.perf_counter()

    def path(self, name: str, configured: str | None = None) -> Path:
        """Resolve an input artifact; configured paths win over the output dir."""
        cands = [Path(configured)] if configured else []
        cands.append(self.out / name)
        for c in cands:
            if c.exists():
                self.inputs[str(c)] = sha256(c)
                return c
        raise CommandError("missing-artifact", f"required artifact {name} not found",
                           f"run `regionsim {PRODUCERS.get(name, 'ingest')}` first")

    def write(self, name: str, text: str):
        p = self.out / name
        p.write_text(text)
        self.outputs[str(p)] = hashlib.sha256(text.encode()).hexdigest()

    def finish(self, seed: int | None):
        manifest = {
            "command": self.command, "version": __version__, "seed": seed,
            "argv": self.args.argv, "config": self.cfg, "inputs": self.inputs, "outputs": self.outputs,
            "seconds": round(time.perf_counter() - self.t0, 3),
        }
        (self.out / f"{self.command}.manifest.json").write_text(json.dumps(manifest, indent=1, default=str))


# ---------------------------------------------------------------------------
# helpers


def _layout(run: Run):
    return load_layout(run.path("layout.json", run.cfg["paths"].get("layout")).read_bytes())


def _corpus(run: Run, which: str, graph) -> Corpus:
    name = f"{which}.csv"
    p = run.path(name, run.cfg["paths"].get(which))
    text = p.read_text()
    header = text.split("\n", 1)[0]
    if "tick" in header.split(","):
        return extract_visits(parse_trace(text, graph), "robot-present" if which == "robot" else "baseline")
    return parse_visits(text, graph, "robot-present" if which == "robot" else "baseline")


def _need_seed(args) -> int:
    if args.seed is None:
        raise CommandError("missing-seed", f"{args.command} needs --seed")
    return int(args.seed)


def _transition_model(run: Run, graph):
    kind = str(run.cfg["transition"]["model"])
    if kind.upper() in HEURISTICS:
        return HeuristicModel(kind.upper())
    if kind == "planted":
        doc = json.loads(run.path("planted.json").read_text())
        return SoftmaxModel(doc["transition_weights"])
    if kind == "gnn":
        return GNNModel(ScorerWeights.from_json(run.path("scorer.json").read_text()))
    raise CommandError("bad-config", f"unknown transition model {kind!r}")


def _sim_config(run: Run, graph, events, effects=None, **over) -> SimConfig:
    s = run.cfg["sim"]
    start = s.get("start", "entrance")
    if isinstance(start, str) and start.lstrip("-").isdigit():
        start = int(start)
    kw = dict(t_max=float(s["t_max"]), robots=int(s["robots"]), robot_speed=float(s["robot_speed"]),
              multi_floor=bool(s["multi_floor"]), termination=s["termination"], start=start)
    kw.update(over)
    return SimConfig(graph, _transition_model(run, graph), events, effects, **kw)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(run: Run, args):
    graph = _layout(run)
    if not args.input:
        raise CommandError("missing-input", "ingest needs --input TRACE.csv")
    text = Path(args.input).read_text()
    run.inputs[args.input] = sha256(Path(args.input))
    header = text.split("\n", 1)[0].split(",")
    corpus = extract_visits(parse_trace(text, graph)) if "tick" in header else parse_visits(text, graph)
    name = args.name or ("robot" if corpus.condition == "robot-present" else "baseline")
    run.write(f"{name}.csv", write_visits(corpus))
    return {"episodes": len(corpus), "visits": sum(corpus.visit_counts()), "condition": corpus.condition}


def cmd_synth(run: Run, args):
    from .synth import planted_world, synth_corpus

    seed = _need_seed(args)
    sc = run.cfg["synth"]
    episodes = int(args.episodes or sc["episodes"])
    world = planted_world(int(sc["world_seed"]))
    run.write("layout.json", json.dumps(world.graph.to_document(), indent=1))
    base = synth_corpus(world, episodes, sub_seed(seed, "corpus"), workers=args.workers)
    run.write("baseline.csv", write_visits(base))
    out = {"baseline_episodes": len(base)}
    if args.robots:
        n = int(sc["robot_episodes"])
        rob = synth_corpus(world, n, sub_seed(seed, "robot-corpus"), robots=True, workers=args.workers)
        run.write("robot.csv", write_visits(rob))
        out["robot_episodes"] = n
    run.write("planted.json", json.dumps({
        "transition_weights": world.transition.weights, "dominant_feature": world.dominant,
        "effects": json.loads(world.effects.to_json()),
        "events": {k: {str(r): v for r, v in getattr(world.events, k).items()}
                   for k in ("dwell_mean", "shot_base", "shot_rate", "victim_base", "victim_rate", "budget")},
    }, indent=1, sort_keys=True))
    return out


def _split(corpus: Corpus, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n_test = max(1, len(corpus) // 5)
    n_val = max(1, (len(corpus) - n_test) // 8)
    return (corpus.subset(sorted(order[n_test + n_val:])), corpus.subset(sorted(order[n_test:n_test + n_val])),
            corpus.subset(sorted(order[:n_test])))


def cmd_train_transition(run: Run, args):
    seed = _need_seed(args)
    graph = _layout(run)
    corpus = _corpus(run, "baseline", graph)
    if len(corpus) < 3:
        raise CommandError("bad-input", "need at least 3 episodes to train and evaluate")
    train, val, test = _split(corpus, sub_seed(seed, "split"))
    tc = run.cfg["transition"]
    features = tc.get("features", list(SELECTED))
    config = ScorerConfig(hidden=int(tc["hidden"]), head_hidden=int(tc["hidden"]),
                          max_epochs=int(tc["max_epochs"]), seed=sub_seed(seed, "training") % 2 ** 32)
    weights, history = train_scorer(train, val, graph, config, features)
    run.write("scorer.json", weights.to_json())
    rng = np.random.default_rng(sub_seed(seed, "evaluate"))
    reports = [eval_accuracy(GNNModel(weights), test, graph, rng)]
    reports += [eval_accuracy(HeuristicModel(h), test, graph, rng) for h in HEURISTICS]
    run.write("transition_accuracy.csv", rows_to_csv(compare_models(reports)))
    run.write("training_history.csv", rows_to_csv(history))
    return {r.model: round(r.mean, 4) for r in reports}


def cmd_select_features(run: Run, args):
    seed = _need_seed(args)
    graph = _layout(run)
    corpus = _corpus(run, "baseline", graph)
    tc = run.cfg["transition"]
    res = greedy_select(corpus, default_registry(), graph, k=int(args.k or tc["select_k"]),
                        folds=int(tc["folds"]), seed=sub_seed(seed, "selection") % 2 ** 32)
    run.write("feature_selection.csv", res.to_csv())
    return {"selected": res.selected}


def cmd_fit_events(run: Run, args):
    graph = _layout(run)
    corpus = _corpus(run, "baseline", graph)
    ec = run.cfg["events"]
    model = EventModel(pool_moments(corpus, graph), VariantKind.parse(args.variant or ec["variant"]),
                       int(ec["n_min"]))
    run.write("events.json", model.to_json())
    run.write("events_diagnostics.csv", model.diagnostics_csv(graph.ids, float(run.cfg["sim"]["t_max"])))
    return {"variant": str(model.variant), "regions": len(graph)}


def cmd_fit_effects(run: Run, args):
    seed = _need_seed(args)
    graph = _layout(run)
    events = EventModel.from_json(run.path("events.json").read_text())
    robot = _corpus(run, "robot", graph)
    fc = run.cfg["effects"]
    lam, scores = calibrate_lambda(events.table, robot, graph, fc["lambda_grid"], float(fc["tau"]),
                                   int(fc["folds"]), sub_seed(seed, "lambda") % 2 ** 32, events.n_min)
    model = fit_coeffs(events.table, robot, graph, float(fc["tau"]), lam, events.n_min,
                       corpus_influence(robot, graph, lam))
    run.write("effects.json", model.to_json())
    run.write("lambda_scores.csv", rows_to_csv([{"lambda": l, "score": s}
                                                for l, s in zip(sorted(fc["lambda_grid"]), scores)]))
    return {"lambda": lam}


def _policy(run: Run, name: str, effects):
    if name == "ddqn":
        doc = json.loads(run.path("policy.json").read_text())
        return QPolicy(QNet.from_json(doc["weights"]))
    if name not in STRATEGIES:
        raise CommandError("bad-config", f"unknown policy {name!r}")
    if name in ("low-impact", "high-impact") and effects is None:
        raise CommandError("missing-artifact", f"{name} needs effects.json", "run `regionsim fit-effects` first")
    return heuristic_policy(name, effects)


def cmd_simulate(run: Run, args):
    seed = _need_seed(args)
    graph = _layout(run)
    events = EventModel.from_json(run.path("events.json").read_text())
    if args.variant:
        events = EventModel(events.table, VariantKind.parse(args.variant), events.n_min)
    effects = None
    try:
        effects = EffectModel.from_json(run.path("effects.json").read_text())
    except CommandError:
        log.info("no effects.json; robots have no influence on outcomes")
    sc = run.cfg["sim"]
    if args.multi_floor is not None:
        sc["multi_floor"] = args.multi_floor
    name = args.policy or sc["policy"]
    n = int(args.episodes or sc["episodes"])
    cfg = _sim_config(run, graph, events, effects)
    rollout_seed = sub_seed(seed, "rollout")
    logs = batch_rollout(cfg, _policy(run, name, effects), n, rollout_seed, args.workers)
    run.write("rollouts.csv", logs_to_csv(logs))
    run.write("summary.json", summary_json(logs))
    victims = {"none": summaries(batch_rollout(cfg, None, n, rollout_seed, args.workers))["victims"]}
    if name != "none":
        victims[name] = summaries(logs)["victims"]
    floor = "multi-floor" if cfg.multi_floor else "single-floor"
    rows = [dict(r, Mobility=floor) for r in policy_table(victims)]
    run.write("policy_table.csv", rows_to_csv(rows))
    return {"policy": name, "victims": rows[-1]["Victims"], "delta": rows[-1]["Delta"]}


def cmd_evaluate(run: Run, args):
    """Cross-validated fidelity of one event-generation variant."""
    seed = _need_seed(args)
    graph = _layout(run)
    corpus = _corpus(run, "baseline", graph)
    variant = VariantKind.parse(args.variant or run.cfg["events"]["variant"])
    ev = run.cfg["evaluate"]
    n = int(args.episodes or ev["rollouts"])
    gen_sum = {k: [] for k in ("nodes", "time", "shots", "victims")}
    obs_sum = {k: [] for k in gen_sum}
    gen_vis, obs_vis = [], []
    folds = kfold_split(corpus, int(ev["folds"]), sub_seed(seed, "folds") % 2 ** 32)
    per_fold = max(1, n // len(folds))
    for i, (train, test) in enumerate(folds):
        model = EventModel(pool_moments(train, graph), variant, int(run.cfg["events"]["n_min"]))
        counts = tuple(len(ep) for ep in test.episodes)
        cfg = _sim_config(run, graph, model, termination="visit-count", target_visits=counts)
        logs = batch_rollout(cfg, None, per_fold, sub_seed(seed, f"rollout-{i}"), args.workers)
        for k, v in summaries(logs).items():
            gen_sum[k] += v
        for k, v in corpus_summaries(test).items():
            obs_sum[k] += v
        gen_vis += [t for l in logs for t in visit_tuples(l.events)]
        obs_vis += [t for ep in test.episodes for t in visit_tuples(ep)]
    rep = fidelity_report(gen_sum, obs_sum, gen_vis, obs_vis, graph.ids, label=str(variant))
    emp = {"Model": "Participants"}
    emp.update({f"rho({p})": round(rep.rho[f"{p} emp"], 3) for p in ("t,s", "t,v")})
    run.write("table_outcomes.csv", rows_to_csv([reference_row(obs_sum), rep.outcome_row()]))
    run.write("table_fidelity.csv", rows_to_csv([emp, rep.fidelity_row()]))
    run.write("fidelity.json", rep.to_json())
    return {c: rep.outcomes[c]["color"] for c in rep.outcomes}


def cmd_train_policy(run: Run, args):
    seed = _need_seed(args)
    graph = _layout(run)
    events = EventModel.from_json(run.path("events.json").read_text())
    effects = EffectModel.from_json(run.path("effects.json").read_text())
    tc = dict(run.cfg["train"])
    if args.episodes:
        tc["episodes"] = int(args.episodes)
    known = {f.name for f in fields(TrainConfig)}
    config = TrainConfig(**{k: v for k, v in tc.items() if k in known})
    sim = _sim_config(run, graph, events, effects)
    res = ddqn_train(config, sim, sub_seed(seed, "training") % 2 ** 32)
    run.write("policy.json", res.to_json())
    run.write("training_curve.csv", res.curve_csv())
    tail = res.curve[-min(100, len(res.curve)):]
    return {"episodes": len(res.curve), "final_victims": float(np.mean([c["victims"] for c in tail]))}


def cmd_report(run: Run, args):
    """Collect manifests and tables of the output directory into one JSON."""
    doc = {"manifests": {}, "tables": {}}
    for p in sorted(run.out.glob("*.manifest.json")):
        m = json.loads(p.read_text())
        doc["manifests"][m["command"]] = {"seed": m["seed"], "seconds": m["seconds"],
                                          "outputs": sorted(m["outputs"])}
    for p in sorted(run.out.glob("*.csv")):
        if p.name.startswith(("table_", "policy_table", "transition_accuracy", "feature_selection")):
            doc["tables"][p.name] = p.read_text().splitlines()
    run.write("report.json", json.dumps(doc, indent=1))
    return {"manifests": len(doc["manifests"]), "tables": len(doc["tables"])}


HANDLERS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "train-transition": cmd_train_transition,
    "select-features": cmd_select_features, "fit-events": cmd_fit_events, "fit-effects": cmd_fit_effects,
    "simulate": cmd_simulate, "evaluate": cmd_evaluate, "train-policy": cmd_train_policy,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regionsim", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int, help="root seed (required for synth/train/simulate/evaluate)")
    p.add_argument("--workers", type=int, default=1, help="parallel rollout workers")
    p.add_argument("--out", default="out", help="artifact directory")
    p.add_argument("--input", help="trace or visit CSV to ingest")
    p.add_argument("--name", help="ingested corpus name (baseline or robot)")
    p.add_argument("--episodes", type=int, help="episode count override")
    p.add_argument("--robots", action="store_true", help="synth: also produce a robot-present corpus")
    p.add_argument("--variant", help="event variant, e.g. region-sampling")
    p.add_argument("--policy", help=f"robot strategy: {', '.join(STRATEGIES)} or ddqn")
    p.add_argument("--k", type=int, help="number of features to select")
    floors = p.add_mutually_exclusive_group()
    floors.add_argument("--multi-floor", dest="multi_floor", action="store_true", default=None)
    floors.add_argument("--single-floor", dest="multi_floor", action="store_false")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        run = Run(args.command, args, cfg)
        result = HANDLERS[args.command](run, args)
        run.finish(args.seed)
        print(json.dumps({"status": "ok", "command": args.command, **(result or {})}, default=str))
        return 0
    except CommandError as exc:
        err = {"status": "error", "command": args.command, "error": exc.kind, "message": exc.message}
        if exc.hint:
            err["hint"] = exc.hint
    except (ValueError, KeyError, OSError) as exc:
        err = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
