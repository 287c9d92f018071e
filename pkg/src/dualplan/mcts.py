"""Online MCTS with double progressive widening over EKF beliefs.

Search runs in a compiled kernel (see ``_kernels.mcts_search``); this module
holds the configuration, result bookkeeping and audit helpers.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .belief_mdp import RewardSpec
from .filter import FilterDivergence, GaussianBelief
from .models import ParametricLinearModel

MAX_RETRIES = 10


@dataclass(frozen=True)
class MctsConfig:
    c: float = 300.0
    k_dpw: float = 8.0
    alpha_dpw: float = 0.2
    depth: int = 20
    n_iter: int = 2000
    rollout_gain: float = 4.0
    discount: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("exploration constant must be non-negative")
        if not self.k_dpw > 0:
            raise ValueError("k_dpw must be positive")
        if not 0 < self.alpha_dpw < 1:
            raise ValueError("alpha_dpw must lie in (0, 1)")
        if self.depth < 1 or self.n_iter < 1:
            raise ValueError("depth and n_iter must be at least 1")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")

    @classmethod
    def for_model(cls, model_name: str, **overrides) -> "MctsConfig":
        base = {"1d": dict(c=300.0, rollout_gain=4.0, n_iter=2000),
                "pm": dict(c=100.0, rollout_gain=8.0, n_iter=100)}[model_name]
        base.update(overrides)
        return cls(**base)

    def width(self, visits: int) -> int:
        return math.ceil(self.k_dpw * visits ** self.alpha_dpw)


@dataclass(frozen=True, eq=False)
class SearchTree:
    """Flat snapshot of a finished search.

    ``state_*`` arrays are indexed by state node (0 is the root), ``action_*``
    by action node.  ``trace_*`` arrays have one entry per iteration; an
    iteration whose retries were exhausted has ``trace_action == -1``.
    """

    action: np.ndarray
    chosen: int
    state_visits: np.ndarray
    state_num_actions: np.ndarray
    state_parent_action: np.ndarray
    state_transitions: np.ndarray
    state_reward: np.ndarray
    action_visits: np.ndarray
    action_value: np.ndarray
    action_control: np.ndarray
    action_owner: np.ndarray
    action_num_children: np.ndarray
    trace_action: np.ndarray
    trace_return: np.ndarray
    trace_depth: np.ndarray
    trace_retries: np.ndarray
    discarded: int
    config: MctsConfig = field(default_factory=MctsConfig)

    @property
    def root_visits(self) -> int:
        return int(self.state_visits[0])

    def root_actions(self) -> np.ndarray:
        return np.flatnonzero(self.action_owner == 0)

    def audit(self) -> list[str]:
        """Return a description of every violated tree invariant (empty if none)."""
        cfg = self.config
        problems = []
        n_states = self.state_visits.size
        per_state = np.bincount(self.action_owner, weights=self.action_visits, minlength=n_states)
        for s in range(n_states):
            n = int(self.state_visits[s])
            if per_state[s] != n:
                problems.append(f"state {s}: N(s)={n} but sum N(s,u)={per_state[s]:.0f}")
            if self.state_num_actions[s] > (cfg.width(n) if n > 0 else 0):
                problems.append(f"state {s}: {self.state_num_actions[s]} actions exceeds width for N={n}")
        for a in range(self.action_visits.size):
            n = int(self.action_visits[a])
            if self.action_num_children[a] > (cfg.width(n) if n > 0 else 0):
                problems.append(f"action {a}: {self.action_num_children[a]} children exceeds width for N={n}")
        return problems

    def write_trace(self, path) -> None:
        """One CSV row per iteration: depth reached, return, chosen root action."""
        nu = self.action_control.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "root_action", "depth", "return", "retries"]
                       + [f"u{i}" for i in range(nu)])
            for it, a in enumerate(self.trace_action):
                u = self.action_control[a] if a >= 0 else np.full(nu, np.nan)
                w.writerow([it, int(a), int(self.trace_depth[it]), repr(float(self.trace_return[it])),
                            int(self.trace_retries[it])] + [repr(float(x)) for x in u])


def search(belief: GaussianBelief, model: ParametricLinearModel, spec: RewardSpec,
           config: MctsConfig, rng: np.random.Generator) -> SearchTree:
    s, _ = model._check(belief.mean, np.zeros(model.control_dim))
    seed = int(rng.integers(0, 2 ** 62))
    out = K.mcts_search(model.kind, model.consts, model.noise_cov, model.noise_sqrt, model.R,
                        model.R_sqrt, model.lower, spec.kind_code, spec.weights, s, belief.cov,
                        config.n_iter, config.depth, config.c, config.k_dpw, config.alpha_dpw,
                        config.rollout_gain, config.discount, seed, MAX_RETRIES)
    (chosen, _, _, s_N, s_nact, s_parent, s_trans, s_reward, a_N, a_Q, a_u, a_owner,
     a_nchild, tr_action, tr_return, tr_depth, tr_retries, discarded) = out
    if chosen < 0:
        raise FilterDivergence("every search iteration diverged")
    return SearchTree(
        action=a_u[chosen].copy(), chosen=int(chosen), state_visits=s_N, state_num_actions=s_nact,
        state_parent_action=s_parent, state_transitions=s_trans, state_reward=s_reward,
        action_visits=a_N, action_value=a_Q, action_control=a_u, action_owner=a_owner,
        action_num_children=a_nchild, trace_action=tr_action, trace_return=tr_return,
        trace_depth=tr_depth, trace_retries=tr_retries, discarded=int(discarded), config=config)


def plan(belief: GaussianBelief, model: ParametricLinearModel, spec: RewardSpec,
         config: MctsConfig, rng: np.random.Generator) -> np.ndarray:
    """Choose a control for ``belief`` by tree search."""
    return search(belief, model, spec, config, rng).action


def rollout_action(belief: GaussianBelief, model: ParametricLinearModel, gain: float) -> np.ndarray:
    """Proportional controller on the mean position (and wrapped heading), clipped."""
    return K.rollout_action(model.kind, model.consts, np.ascontiguousarray(belief.mean, float), gain)


def sample_action(n_existing: int, belief: GaussianBelief, model: ParametricLinearModel,
                  config: MctsConfig, rng: np.random.Generator) -> np.ndarray:
    """Candidate action for widening a node that already has ``n_existing`` actions.

    The first candidate is the rollout controller's action; later ones are
    uniform over the control box.
    """
    if n_existing == 0:
        return rollout_action(belief, model, config.rollout_gain)
    return rng.uniform(-model.u_max, model.u_max, size=model.control_dim)


def rollout(belief: GaussianBelief, model: ParametricLinearModel, spec: RewardSpec,
            config: MctsConfig, rng: np.random.Generator, remaining_depth: int) -> float:
    """Discounted return of the proportional controller over ``remaining_depth`` steps."""
    if remaining_depth < 0:
        raise ValueError("remaining_depth must be non-negative")
    K.seed_rng(int(rng.integers(0, 2 ** 62)))
    total, status = K.rollout(model.kind, model.consts, np.ascontiguousarray(belief.mean, float),
                              belief.cov, model.noise_cov, model.noise_sqrt, model.R, model.R_sqrt,
                              model.lower, spec.kind_code, spec.weights, config.rollout_gain,
                              config.discount, remaining_depth)
    if status != K.OK:
        raise FilterDivergence("filter diverged during rollout")
    return float(total)
