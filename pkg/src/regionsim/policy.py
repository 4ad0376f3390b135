"""Robot intervention policies: closed-form strategies and a double deep
Q-learner over the joint action space of all robots."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .effects import EffectModel, high_impact, impact_rank, low_impact
from .engine import NoRobots, RobotPolicy, SimConfig, Simulation, episode_rng
from .graph import RegionGraph

log = logging.getLogger(__name__)

STRATEGIES = ("none", "stay", "low-impact", "high-impact", "pursue")


# ---------------------------------------------------------------------------
# actions and observations


class ActionSet:
    """Fixed slot layout per robot: slot 0 stays (or continues an unfinished
    hop), slot ``j >= 1`` is the ``j``-th neighbor in ascending id order."""

    def __init__(self, graph: RegionGraph, robots: int = 2):
        self.graph = graph
        self.robots = robots
        self.slots = graph.max_degree + 1
        self.size = self.slots ** robots

    def destinations(self, sim: Simulation, robot: int) -> list[int | None]:
        """Destination of every slot for one robot; None marks an invalid slot."""
        allowed = sim.moves(robot)
        here = sim.state.robot_region[robot]
        out: list[int | None] = [None] * self.slots
        if not sim.idle(robot):
            out[0] = allowed[0]
            return out
        out[0] = here
        for j, r in enumerate(self.graph.neighbors(here), start=1):
            if r in allowed:
                out[j] = r
        return out

    def robot_masks(self, sim: Simulation) -> np.ndarray:
        return np.array([[d is not None for d in self.destinations(sim, i)] for i in range(self.robots)])

    def joint_mask(self, sim: Simulation) -> np.ndarray:
        masks = self.robot_masks(sim)
        joint = masks[0]
        for m in masks[1:]:
            joint = np.outer(joint, m).ravel()
        return joint

    def decode(self, joint: int) -> tuple[int, ...]:
        return tuple(int(s) for s in np.unravel_index(int(joint), (self.slots,) * self.robots))

    def encode(self, slots) -> int:
        return int(np.ravel_multi_index(tuple(slots), (self.slots,) * self.robots))

    def to_decisions(self, sim: Simulation, joint: int) -> list[int]:
        out = []
        for i, s in enumerate(self.decode(joint)):
            d = self.destinations(sim, i)[s]
            if d is None:
                raise ValueError(f"robot {i}: slot {s} is invalid")
            out.append(d)
        return out


def obs_vector(sim: Simulation, actions: ActionSet, adversary: int | None = None) -> np.ndarray:
    """Per robot and slot: hop distance from the slot's destination to the
    adversary, divided by the graph diameter; invalid slots read 1.0."""
    g = actions.graph
    adv = g.index[sim.state.adversary if adversary is None else adversary]
    diam = max(g.diameter, 1.0)
    out = np.ones(actions.robots * actions.slots)
    for i in range(actions.robots):
        for s, d in enumerate(actions.destinations(sim, i)):
            if d is not None:
                out[i * actions.slots + s] = min(g.hops[g.index[d], adv], diam) / diam
    return out


def masked_argmax(q: np.ndarray, mask: np.ndarray):
    """Argmax over valid entries along the last axis; ties go to the lowest index."""
    mask = np.asarray(mask, bool)
    if not mask.any(axis=-1).all():
        raise ValueError("no valid action")
    idx = np.argmax(np.where(mask, q, -np.inf), axis=-1)
    return int(idx) if np.ndim(idx) == 0 else idx


def capped_distances(sim: Simulation, adversary: int | None = None) -> list[float]:
    g = sim.graph
    adv = g.index[sim.state.adversary if adversary is None else adversary]
    diam = g.diameter
    return [min(float(g.hops[g.index[r], adv]), diam) for r in sim.state.robot_region]


def reward(sim: Simulation, alpha: float, adversary: int | None = None) -> float:
    """``-alpha * (d1 + d2)`` with unreachable distances capped at the diameter."""
    return -alpha * sum(capped_distances(sim, adversary))


# ---------------------------------------------------------------------------
# Q-network


class QNet:
    """obs -> hidden (ReLU) -> one value per joint action."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def init(cls, n_in: int, n_out: int, hidden: int, rng: np.random.Generator) -> "QNet":
        return cls({"W1": nn.glorot(rng, n_in, hidden), "b1": np.zeros(hidden),
                    "W2": nn.glorot(rng, hidden, n_out), "b2": np.zeros(n_out)})

    def q(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        return np.maximum(X @ p["W1"] + p["b1"], 0.0) @ p["W2"] + p["b2"]

    def copy(self) -> "QNet":
        return QNet(copy.deepcopy(self.params))

    def loss_and_grad(self, X, actions, targets):
        """Mean squared TD error of the taken actions and its gradients."""
        p = self.params
        pre = X @ p["W1"] + p["b1"]
        H = np.maximum(pre, 0.0)
        Q = H @ p["W2"] + p["b2"]
        B = len(X)
        rows = np.arange(B)
        err = Q[rows, actions] - targets
        loss = float(np.mean(err ** 2))
        dQ = np.zeros_like(Q)
        dQ[rows, actions] = 2.0 * err / B
        dH = (dQ @ p["W2"].T) * (pre > 0)
        return loss, {"W1": X.T @ dH, "b1": dH.sum(0), "W2": H.T @ dQ, "b2": dQ.sum(0)}

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in self.params.items()}

    @classmethod
    def from_json(cls, doc: dict) -> "QNet":
        return cls({k: np.array(v, float) for k, v in doc.items()})


def double_q_targets(online: QNet, target: QNet, rewards, next_obs, next_mask, done, gamma: float):
    """Online net picks the next action, target net values it."""
    a = masked_argmax(online.q(next_obs), next_mask)
    v = target.q(next_obs)[np.arange(len(a)), a]
    return rewards + gamma * (1.0 - done) * v


def single_q_targets(target: QNet, rewards, next_obs, next_mask, done, gamma: float):
    q = np.where(next_mask, target.q(next_obs), -np.inf).max(axis=1)
    return rewards + gamma * (1.0 - done) * q


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.next_mask = np.ones((capacity, n_actions), bool)
        self.action = np.zeros(capacity, int)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, r, next_obs, next_mask, done):
        i = self.pos
        self.obs[i], self.action[i], self.reward[i] = obs, action, r
        self.next_obs[i], self.next_mask[i], self.done[i] = next_obs, next_mask, float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return (self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx],
                self.next_mask[idx], self.done[idx])


# ---------------------------------------------------------------------------
# policies


class StayPolicy(RobotPolicy):
    name = "stay"

    def decide(self, sim):
        return list(sim.state.robot_region)


class PursuePolicy(RobotPolicy):
    """Each robot takes the allowed move closest (full-graph hops) to the adversary."""

    name = "pursue"

    def decide(self, sim):
        g = sim.graph
        adv = g.index[sim.state.adversary]
        return [min(sim.moves(i), key=lambda r: g.hops[g.index[r], adv]) for i in range(sim.n_robots)]


class ImpactPolicy(RobotPolicy):
    """Robot ``i`` walks to the ``i``-th ranked region it can reach, then stays."""

    def __init__(self, ranking: list[int], name: str):
        self.ranking = list(ranking)
        self.name = name

    def _reachable_hops(self, sim, robot):
        g = sim.graph
        if sim.config.multi_floor:
            return g.hops, g.index
        floor = sim.state.robot_floor[robot]
        sub = g.subgraph(r.id for r in g.regions if r.floor == floor)
        return sub.hops, sub.index

    def reset(self, sim):
        self.goals, self.dist = [], []
        taken = set()
        for i in range(sim.n_robots):
            D, idx = self._reachable_hops(sim, i)
            here = idx[sim.state.robot_region[i]]
            reach = [r for r in self.ranking if r in idx and np.isfinite(D[here, idx[r]])]
            free = [r for r in reach if r not in taken] or reach or [sim.state.robot_region[i]]
            self.goals.append(free[0])
            taken.add(free[0])
            self.dist.append((D, idx))

    def decide(self, sim):
        out = []
        for i in range(sim.n_robots):
            D, idx = self.dist[i]
            goal = idx[self.goals[i]]
            out.append(min(sim.moves(i), key=lambda r: D[idx[r], goal]))
        return out


class QPolicy(RobotPolicy):
    """Greedy policy of a trained Q-network."""

    name = "ddqn"

    def __init__(self, net: QNet, robots: int = 2):
        self.net = net
        self.robots = robots

    def reset(self, sim):
        self.actions = ActionSet(sim.graph, sim.n_robots)

    def decide(self, sim):
        obs = obs_vector(sim, self.actions)
        a = masked_argmax(self.net.q(obs), self.actions.joint_mask(sim))
        return self.actions.to_decisions(sim, a)


def heuristic_policy(kind: str, effects: EffectModel | None = None,
                     mean_dwell: dict[int, float] | None = None) -> RobotPolicy:
    if kind == "none":
        return NoRobots()
    if kind == "stay":
        return StayPolicy()
    if kind == "pursue":
        return PursuePolicy()
    if kind in ("low-impact", "high-impact"):
        if effects is None:
            raise ValueError(f"{kind} strategy needs a fitted effect model")
        ranking = impact_rank(effects, mean_dwell)
        pick = high_impact if kind == "high-impact" else low_impact
        return ImpactPolicy(pick(ranking, len(ranking)), kind)
    raise ValueError(f"unknown strategy {kind!r}")


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    episodes: int = 15000
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 10000
    lr: float = 1e-3
    batch: int = 64
    capacity: int = 50000
    sync_every: int = 1000
    hidden: int = 128
    alpha: float | None = None     # None: 1 / graph diameter
    warmup: int = 64

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        for e in (self.eps_start, self.eps_end):
            if not 0 <= e <= 1:
                raise ValueError("epsilon must be in [0, 1]")

    def epsilon(self, episode: int) -> float:
        frac = min(episode / max(self.eps_decay_episodes, 1), 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class TrainResult:
    net: QNet
    curve: list[dict] = field(default_factory=list)  # episode, mean_reward, victims, epsilon, loss
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def policy(self) -> QPolicy:
        return QPolicy(self.net)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["episode", "mean_reward", "victims", "epsilon", "loss", "terminal_distance"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(self.curve)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"format_version": 1, "config": asdict(self.config), "weights": self.net.to_json()})


class _Driver(RobotPolicy):
    """Placeholder policy so the simulation spawns robots; actions are passed explicitly."""

    name = "learner"

    def decide(self, sim):
        raise RuntimeError("learner decisions are supplied by the training loop")


def ddqn_train(config: TrainConfig, sim_config: SimConfig, seed: int = 0) -> TrainResult:
    """Double DQN with experience replay, a periodically synced target net
    and masked joint actions. One transition is stored per adversary event;
    its reward is taken when the event ends."""
    g = sim_config.graph
    rng = np.random.default_rng(seed)
    actions = ActionSet(g, sim_config.robots)
    alpha = config.alpha if config.alpha is not None else 1.0 / max(g.diameter, 1.0)
    if alpha == 0:
        log.warning("reward scale alpha is 0; every reward is 0")
    obs_dim = actions.robots * actions.slots
    net = QNet.init(obs_dim, actions.size, config.hidden, rng)
    target = net.copy()
    opt = nn.Adam(net.params, config.lr)
    buf = ReplayBuffer(config.capacity, obs_dim, actions.size)
    steps = 0
    curve = []
    driver = _Driver()
    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        sim = Simulation(sim_config, driver)
        sim.reset(episode_rng(seed, ep), ep)
        obs, mask = obs_vector(sim, actions), actions.joint_mask(sim)
        rewards, losses = [], []
        while not sim.done:
            if rng.random() < eps:
                a = int(rng.choice(np.flatnonzero(mask)))
            else:
                a = masked_argmax(net.q(obs), mask)
            ev = sim.step(actions.to_decisions(sim, a))
            r = reward(sim, alpha, ev.region_id)
            rewards.append(r)
            if sim.done:
                nobs, nmask = obs, mask
            else:
                nobs, nmask = obs_vector(sim, actions), actions.joint_mask(sim)
            buf.add(obs, a, r, nobs, nmask, sim.done)
            obs, mask = nobs, nmask
            if len(buf) >= max(config.warmup, config.batch):
                X, A, R, NX, NM, D = buf.sample(config.batch, rng)
                y = double_q_targets(net, target, R, NX, NM, D, config.gamma)
                loss, grads = net.loss_and_grad(X, A, y)
                if not math.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite TD loss at episode {ep}, step {steps}; "
                        f"max |Q| = {np.abs(net.q(X)).max():.3g}, lr = {config.lr}")
                opt.step(net.params, grads)
                losses.append(loss)
                steps += 1
                if steps % config.sync_every == 0:
                    target = net.copy()
        curve.append({"episode": ep, "mean_reward": float(np.mean(rewards)),
                      "victims": sim.state.totals["victims"], "epsilon": eps,
                      "loss": float(np.mean(losses)) if losses else math.nan,
                      "terminal_distance": sum(capped_distances(sim, sim.log.events[-1].region_id))})
    return TrainResult(net, curve, config)


def terminal_distance(sim_config: SimConfig, policy: RobotPolicy, episodes: int, base_seed: int) -> float:
    """Mean summed robot-adversary hop distance when episodes end."""
    total = 0.0
    for i in range(episodes):
        sim = Simulation(sim_config, policy)
        sim.reset(episode_rng(base_seed, i), i)
        while not sim.done:
            ev = sim.step()
        total += sum(capped_distances(sim, ev.region_id))
    return total / episodes


# ---------------------------------------------------------------------------
# exact solution for tiny MDPs


def value_iteration(P: np.ndarray, R: np.ndarray, gamma: float, tol: float = 1e-12, max_iter: int = 100_000):
    """``P[a, s, s']`` transitions and ``R[s, a]`` rewards -> (values, greedy policy)."""
    V = np.zeros(P.shape[1])
    for _ in range(max_iter):
        Q = R + gamma * np.einsum("ast,t->sa", P, V)
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = R + gamma * np.einsum("ast,t->sa", P, V)
    return V, Q.argmax(axis=1)
