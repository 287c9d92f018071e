"""Belief MDP built from a model and the EKF: rewards and the generative model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .filter import FilterDivergence, GaussianBelief
from .models import ParametricLinearModel

_KINDS = {"l1": K.L1, "l2": K.L2}

# (R_pos, R_vel, R_u) per model
TABLE_WEIGHTS = {"1d": (-10.0, -3.0, -1.0), "pm": (-1.0, -1.0, -0.1)}


@dataclass(frozen=True)
class RewardSpec:
    """Nonpositive penalty weights on position, velocity and control effort."""

    kind: str = "l1"
    r_pos: float = -10.0
    r_vel: float = -3.0
    r_u: float = -1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"reward kind must be 'l1' or 'l2', got {self.kind!r}")
        if max(self.r_pos, self.r_vel, self.r_u) > 0:
            raise ValueError("reward weights must be nonpositive")

    @classmethod
    def for_model(cls, model_name: str, kind: str = "l1") -> "RewardSpec":
        return cls(kind, *TABLE_WEIGHTS[model_name])

    @property
    def kind_code(self) -> int:
        return _KINDS[self.kind]

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.r_pos, self.r_vel, self.r_u])


@dataclass(frozen=True, eq=False)
class BeliefTransition:
    next_belief: GaussianBelief
    reward: float
    sampled_observation: np.ndarray


def reward(spec: RewardSpec, mean_state, u, model: ParametricLinearModel | None = None) -> float:
    """Weighted L1 or L2 penalty of a mean state and action.

    The first half of the state is the position block and the second half the
    velocity block.  For the planar model the heading is wrapped to (-pi, pi]
    before being penalized; pass ``model`` (or a 6-vector) to enable that.
    """
    x = np.ascontiguousarray(mean_state, dtype=float).reshape(-1)
    u = np.ascontiguousarray(u, dtype=float).reshape(-1)
    kind = model.kind if model is not None else (K.PLANAR if x.size == 6 else K.DOUBLE_INTEGRATOR)
    return float(K.reward(kind, spec.kind_code, spec.weights, x, u))


def generate(belief: GaussianBelief, u, model: ParametricLinearModel, spec: RewardSpec,
             rng: np.random.Generator) -> BeliefTransition:
    """Sample one belief transition ``b' = G(b, u)``.

    A next true state is drawn around ``f(mean, u)`` with the transition noise,
    an observation is drawn at that state, and the EKF is run on it.  The
    reward is evaluated at the updated mean.
    """
    s, u = model._check(belief.mean, model.saturate(u))
    z_proc = rng.standard_normal(model.dim)
    z_obs = rng.standard_normal(model.obs_dim)
    mean, cov, o, status = K.generate(model.kind, model.consts, s, belief.cov, u,
                                      model.noise_cov, model.noise_sqrt, model.R, model.R_sqrt,
                                      model.lower, z_proc, z_obs)
    if status != K.OK:
        raise FilterDivergence("filter diverged inside the generative model")
    r = float(K.reward(model.kind, spec.kind_code, spec.weights, mean[:model.state_dim], u))
    return BeliefTransition(GaussianBelief(mean, cov), r, o)
