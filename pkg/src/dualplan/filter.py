"""Extended Kalman filter over the joint state-parameter vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .models import ParametricLinearModel


class FilterDivergence(RuntimeError):
    """The filter produced a non-finite belief or a singular innovation covariance."""


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=float)
        cov = np.ascontiguousarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def initial(cls, model: ParametricLinearModel, state, param_mean, param_std,
                state_std=0.0) -> "GaussianBelief":
        """Independent Gaussian prior over state and parameters."""
        mean = np.concatenate([np.asarray(state, float), np.asarray(param_mean, float)])
        std = np.concatenate([np.broadcast_to(np.asarray(state_std, float), (model.state_dim,)),
                              np.broadcast_to(np.asarray(param_std, float), (model.param_dim,))])
        return cls(model.clamp(mean), np.diag(std ** 2))

    def state_mean(self, model: ParametricLinearModel) -> np.ndarray:
        return self.mean[:model.state_dim]

    def param_mean(self, model: ParametricLinearModel) -> np.ndarray:
        return self.mean[model.state_dim:]


@dataclass(frozen=True)
class Jacobians:
    F: np.ndarray
    H: np.ndarray


def jacobians(model: ParametricLinearModel, s_mean, u) -> Jacobians:
    """Dynamics and observation Jacobians w.r.t. the augmented vector.

    Uses the model's analytic derivatives unless ``model.analytic_jacobians``
    is false, in which case central differences with step
    ``max(1e-6, 1e-6*|s_i|)`` are used.
    """
    s, u = model._check(s_mean, u)
    c = model.consts
    return Jacobians(K.jac_f(model.kind, c, s, u), K.jac_h(model.kind, c, s, u))


def clamp(belief: GaussianBelief, model: ParametricLinearModel) -> GaussianBelief:
    return GaussianBelief(model.clamp(belief.mean), belief.cov)


def predict(belief: GaussianBelief, model: ParametricLinearModel, u) -> GaussianBelief:
    s, u = model._check(belief.mean, model.saturate(u))
    mean, cov, status = K.ekf_predict(model.kind, model.consts, s, belief.cov, u, model.noise_cov)
    if status != K.OK:
        raise FilterDivergence("non-finite belief after predict")
    return GaussianBelief(mean, cov)


def correct(belief_pred: GaussianBelief, model: ParametricLinearModel, u, o) -> GaussianBelief:
    s, u = model._check(belief_pred.mean, model.saturate(u))
    o = np.ascontiguousarray(o, dtype=float)
    if o.shape != (model.obs_dim,):
        raise ValueError(f"expected observation of length {model.obs_dim}, got {o.shape}")
    mean, cov, status = K.ekf_correct(model.kind, model.consts, s, belief_pred.cov, u, o,
                                      model.R, model.lower)
    if status != K.OK:
        raise FilterDivergence("innovation covariance singular or belief non-finite after correct")
    return GaussianBelief(mean, cov)


def update(belief: GaussianBelief, model: ParametricLinearModel, u, o) -> GaussianBelief:
    """Predict with ``u`` then correct with ``o``."""
    return correct(predict(belief, model, u), model, u, o)
