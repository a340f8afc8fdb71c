"""Trajectory-expansion policy: from-scratch MLP with a tanh-squashed scaled
head, behavior-cloning trainer, and a cross-entropy-method parameter search
for desk-scale reward optimization.

The network regresses pre-squash head values; emitted actions are
0.26 * tanh(head), so every action stays strictly inside the bound. Weights
round-trip through a versioned JSON file that records the input layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import RobotModel
from .mdp import ACTION_BOUND, LOOKAHEAD, SCENE_DIM, MdpState, PathEnv, build_state, episode_return, state_dim
from .objective import Trajectory
from .paths import Problem

ARCTANH_CLIP = 0.9999  # keeps BC targets finite and off the tanh saturation


class LayoutMismatch(ValueError):
    pass


class EmptyDemoSet(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    """Input layout the network was built for."""

    dof: int
    lookahead: int = LOOKAHEAD
    scene_dim: int = SCENE_DIM

    @property
    def input_dim(self) -> int:
        return state_dim(self.dof, self.lookahead, self.scene_dim)


class PolicyNet:
    """Fully-connected policy: rectified-linear hidden layers, linear head.

    Deterministic mode returns 0.26 * tanh(head(s)); stochastic mode samples
    a diagonal Gaussian around the head before squashing (state-independent
    learned log-std).
    """

    def __init__(self, layout: Layout, weights: list[tuple[np.ndarray, np.ndarray]],
                 log_std: np.ndarray | None = None):
        self.layout = layout
        self.weights = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in weights]
        if self.weights[0][0].shape[1] != layout.input_dim:
            raise LayoutMismatch(
                f"first layer expects {self.weights[0][0].shape[1]} inputs, layout has {layout.input_dim}"
            )
        if self.weights[-1][0].shape[0] != layout.dof:
            raise LayoutMismatch("head width must equal the dof")
        for (w_a, b_a), (w_b, _) in zip(self.weights, self.weights[1:]):
            if w_b.shape[1] != w_a.shape[0] or b_a.shape != (w_a.shape[0],):
                raise LayoutMismatch("inconsistent layer shapes")
        self.log_std = (
            np.full(layout.dof, -1.0) if log_std is None else np.asarray(log_std, dtype=float)
        )

    @classmethod
    def create(cls, layout: Layout, hidden=(1024, 1024, 1024),
               rng: np.random.Generator | None = None) -> "PolicyNet":
        rng = np.random.default_rng() if rng is None else rng
        sizes = [layout.input_dim, *hidden, layout.dof]
        weights = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            weights.append((w, np.zeros(fan_out)))
        return cls(layout, weights)

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w, _ in self.weights[:-1])

    # -- forward ------------------------------------------------------------

    def head(self, x: np.ndarray) -> np.ndarray:
        """Pre-squash head values for a batch (B, input_dim) -> (B, dof)."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        if h.shape[1] != self.layout.input_dim:
            raise LayoutMismatch(f"input dim {h.shape[1]} != {self.layout.input_dim}")
        for w, b in self.weights[:-1]:
            h = np.maximum(h @ w.T + b, 0.0)
        w, b = self.weights[-1]
        return h @ w.T + b

    def forward(self, state, stochastic: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Action for one state (MdpState or flat vector)."""
        x = state.flatten() if isinstance(state, MdpState) else np.asarray(state, dtype=float)
        mu = self.head(x[None, :])[0]
        if stochastic:
            rng = np.random.default_rng() if rng is None else rng
            mu = mu + np.exp(self.log_std) * rng.normal(size=mu.shape)
        return ACTION_BOUND * np.tanh(mu)

    def act(self, state) -> np.ndarray:
        return self.forward(state, stochastic=False)

    # -- parameter vector (for CEM) ------------------------------------------

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in self.weights:
            parts.append(w.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        out = []
        k = 0
        for w, b in self.weights:
            nw = w.size
            out.append((theta[k:k + nw].reshape(w.shape).copy(), theta[k + nw:k + nw + b.size].copy()))
            k += nw + b.size
        if k != theta.size:
            raise LayoutMismatch(f"parameter vector has {theta.size} entries, expected {k}")
        self.weights = out

    def copy(self) -> "PolicyNet":
        return PolicyNet(
            self.layout,
            [(w.copy(), b.copy()) for w, b in self.weights],
            self.log_std.copy(),
        )

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        doc = {
            "format": 1,
            "layout": {
                "dof": self.layout.dof,
                "lookahead": self.layout.lookahead,
                "scene_dim": self.layout.scene_dim,
                "input_dim": self.layout.input_dim,
            },
            "hidden_activation": "relu",
            "action_scale": ACTION_BOUND,
            "layers": [
                {"w": [[float(v) for v in row] for row in w], "b": [float(v) for v in b]}
                for w, b in self.weights
            ],
            "log_std": [float(v) for v in self.log_std],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path, expect_dof: int | None = None) -> "PolicyNet":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != 1:
            raise ValueError(f"unsupported policy file format: {doc.get('format')!r}")
        lay = doc["layout"]
        layout = Layout(int(lay["dof"]), int(lay["lookahead"]), int(lay["scene_dim"]))
        if int(lay["input_dim"]) != layout.input_dim:
            raise LayoutMismatch(
                f"declared input_dim {lay['input_dim']} inconsistent with layout ({layout.input_dim})"
            )
        if expect_dof is not None and layout.dof != expect_dof:
            raise LayoutMismatch(f"policy built for dof={layout.dof}, robot has dof={expect_dof}")
        if doc.get("hidden_activation", "relu") != "relu":
            raise ValueError("only relu hidden layers are supported")
        weights = [(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float)) for l in doc["layers"]]
        log_std = doc.get("log_std")
        return cls(layout, weights, np.array(log_std, dtype=float) if log_std else None)


# ---------------------------------------------------------------------------
# Demonstrations


@dataclass(frozen=True, eq=False)
class Demo:
    problem: Problem
    trajectory: Trajectory
    final_error: float = float("nan")  # average pose distance after optimization
    violation_rate: float = 0.0
    flags: tuple = ()


@dataclass(frozen=True, eq=False)
class DemoSet:
    demos: tuple

    def __post_init__(self):
        object.__setattr__(self, "demos", tuple(self.demos))

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)


def bc_dataset(m: RobotModel, demos: DemoSet) -> tuple[np.ndarray, np.ndarray]:
    """Flatten demos into (states, pre-squash action targets).

    Targets are the per-step configuration deltas clamped to the action bound
    and mapped through arctanh, so the regression lives ahead of the squash.
    """
    if len(demos) == 0:
        raise EmptyDemoSet("demo set is empty")
    xs, ys = [], []
    for demo in demos:
        configs = demo.trajectory.configs
        scene = None
        for i in range(len(configs) - 1):
            state = build_state(m, demo.problem, configs[i], i, scene=scene)
            if scene is None:
                scene = state.scene
            delta = np.clip(configs[i + 1] - configs[i], -ACTION_BOUND, ACTION_BOUND)
            ys.append(np.arctanh(np.clip(delta / ACTION_BOUND, -ARCTANH_CLIP, ARCTANH_CLIP)))
            xs.append(state.flatten())
    return np.stack(xs), np.stack(ys)


# ---------------------------------------------------------------------------
# Behavior cloning


def mlp_gradients(net: PolicyNet, x: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and its gradient w.r.t. every layer.

    Reverse-mode through the relu stack; returns (loss, [(dW, db), ...]).
    """
    acts = [np.atleast_2d(x)]
    for w, b in net.weights[:-1]:
        acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
    w, b = net.weights[-1]
    out = acts[-1] @ w.T + b
    batch = out.shape[0]
    err = out - np.atleast_2d(y)
    loss = float(np.mean(err * err))

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    delta = 2.0 * err / err.size
    for k in range(len(net.weights) - 1, -1, -1):
        w, _ = net.weights[k]
        grads.append((delta.T @ acts[k], delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ w) * (acts[k] > 0.0)
    grads.reverse()
    return loss, grads


@dataclass
class BcResult:
    losses: list = field(default_factory=list)


def bc_train(
    net: PolicyNet,
    m: RobotModel,
    demos: DemoSet,
    epochs: int = 300,
    lr: float = 1e-3,
    lr_decay: float = 0.5,
    lr_decay_every: int = 100,
    dataset: tuple[np.ndarray, np.ndarray] | None = None,
) -> BcResult:
    """Full-batch behavior cloning with adaptive-moment updates.

    Mutates `net` in place and returns the per-epoch loss curve (loss is
    evaluated on the parameters before each update).
    """
    x, y = bc_dataset(m, demos) if dataset is None else dataset
    mom = [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.weights]
    vel = [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.weights]
    b1, b2, eps = 0.9, 0.999, 1e-8
    result = BcResult()
    t = 0
    for epoch in range(epochs):
        step_lr = lr * (lr_decay ** (epoch // lr_decay_every))
        loss, grads = mlp_gradients(net, x, y)
        result.losses.append(loss)
        t += 1
        new_weights = []
        for k, ((w, b), (gw, gb)) in enumerate(zip(net.weights, grads)):
            mw, mb = mom[k]
            vw, vb = vel[k]
            mw = b1 * mw + (1 - b1) * gw
            mb = b1 * mb + (1 - b1) * gb
            vw = b2 * vw + (1 - b2) * gw * gw
            vb = b2 * vb + (1 - b2) * gb * gb
            mom[k] = (mw, mb)
            vel[k] = (vw, vb)
            corr1 = 1 - b1**t
            corr2 = 1 - b2**t
            w = w - step_lr * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
            b = b - step_lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
            new_weights.append((w, b))
        net.weights = new_weights
    return result


# ---------------------------------------------------------------------------
# Derivative-free search (cross-entropy method)


@dataclass
class CemResult:
    best_fitness: list = field(default_factory=list)  # best-seen per iteration
    mean_fitness: list = field(default_factory=list)


def dfs_train(
    net: PolicyNet,
    m: RobotModel,
    problems: list[Problem],
    rng: np.random.Generator,
    iters: int = 50,
    population: int = 32,
    elite_frac: float = 0.25,
    sigma0: float = 0.05,
    sigma_decay: float = 0.97,
    gamma: float = 0.99,
    weights=None,
) -> CemResult:
    """Cross-entropy search over the flattened parameters.

    Fitness is the mean episode return over the problem set under the
    deterministic policy. The best-seen parameter vector is kept and
    re-injected into every population (elitism), so the best-fitness trace
    never decreases. Mutates `net` to the best-seen parameters.
    """
    envs = [PathEnv(m, p, weights=weights) for p in problems]
    scratch = net.copy()

    def fitness(theta: np.ndarray) -> float:
        scratch.set_flat(theta)
        return float(np.mean([episode_return(env, scratch, gamma) for env in envs]))

    mean = net.get_flat()
    best_theta = mean.copy()
    best_fit = fitness(best_theta)
    n_elite = max(1, int(round(elite_frac * population)))
    result = CemResult()
    for it in range(iters):
        sigma = sigma0 * (sigma_decay**it)
        pop = mean[None, :] + sigma * rng.normal(size=(population, mean.size))
        pop[0] = best_theta  # elitism: the incumbent always competes
        fits = np.array([fitness(theta) for theta in pop])
        order = np.argsort(fits)[::-1]
        elites = pop[order[:n_elite]]
        mean = elites.mean(axis=0)
        if fits[order[0]] > best_fit:
            best_fit = float(fits[order[0]])
            best_theta = pop[order[0]].copy()
        result.best_fitness.append(best_fit)
        result.mean_fitness.append(float(fits.mean()))
    net.set_flat(best_theta)
    return result
