"""Linear-parametric dynamics with unknown physical parameters.

Two concrete domains are provided: a 1D double integrator (point mass under a
force) and a planar manipulation model (a box pushed with a force and torque).
Both describe the augmented vector ``s = [x, p]`` where ``x`` is the physical
state and ``p`` the parameter vector that the filter estimates.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K

PARAMETER_FLOOR = 1.0


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class ParametricLinearModel:
    """Discrete-time model ``x' = A(p) x + B(p, theta) u + v``, ``o = h(x, u; p) + w``.

    Instances are immutable; use :meth:`with_process_noise` or
    :func:`dataclasses.replace` to derive variants.
    """

    name: str
    kind: int
    state_dim: int
    param_dim: int
    control_dim: int
    obs_dim: int
    dt: float
    u_max: float
    Q: np.ndarray
    R: np.ndarray
    P_drift: np.ndarray
    lower_bounds: np.ndarray
    state_names: tuple[str, ...]
    param_names: tuple[str, ...]
    sensor_offset: tuple[float, float] = (0.0, 0.0)
    analytic_jacobians: bool = True
    default_initial_state: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.u_max > 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        for label, M, dim in (("Q", self.Q, self.state_dim), ("R", self.R, self.obs_dim),
                              ("P_drift", self.P_drift, self.param_dim)):
            if M.shape != (dim, dim):
                raise ValueError(f"{label} must be {dim}x{dim}, got {M.shape}")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{label} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{label} must be positive semi-definite")

    @property
    def dim(self) -> int:
        return self.state_dim + self.param_dim

    # -- packed views used by the compiled kernels ---------------------------

    @cached_property
    def consts(self) -> np.ndarray:
        return np.array([self.dt, self.u_max, self.sensor_offset[0], self.sensor_offset[1],
                         0.0 if self.analytic_jacobians else 1.0])

    @cached_property
    def noise_cov(self) -> np.ndarray:
        """Covariance of the augmented transition noise, ``blockdiag(Q, P_drift)``."""
        n = self.dim
        M = np.zeros((n, n))
        M[:self.state_dim, :self.state_dim] = self.Q
        M[self.state_dim:, self.state_dim:] = self.P_drift
        return M

    @cached_property
    def noise_sqrt(self) -> np.ndarray:
        return _psd_sqrt(self.noise_cov)

    @cached_property
    def R_sqrt(self) -> np.ndarray:
        return _psd_sqrt(self.R)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.asarray(self.lower_bounds, dtype=float)

    # -- derived models ------------------------------------------------------

    def with_process_noise(self, sigma: float) -> "ParametricLinearModel":
        """Copy with ``Q = sigma**2 * I`` on the physical state block."""
        if sigma < 0:
            raise ValueError("process noise sigma must be non-negative")
        return dataclasses.replace(self, Q=sigma ** 2 * np.eye(self.state_dim))

    # -- matrix builders -----------------------------------------------------

    def split(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        return s[:self.state_dim], s[self.state_dim:]

    def A(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        dt = self.dt
        if self.kind == K.DOUBLE_INTEGRATOR:
            return np.array([[1.0, dt], [0.0, 1.0]])
        A = np.eye(6)
        A[:3, 3:] = dt * np.eye(3)
        m, mu = p[0], p[2]
        A[3, 3] = A[4, 4] = 1.0 - mu * dt / m
        return A

    def B(self, p, theta: float = 0.0) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        dt = self.dt
        if self.kind == K.DOUBLE_INTEGRATOR:
            m = p[0]
            return np.array([[dt * dt / (2.0 * m)], [dt / m]])
        m, J, _, rx, ry = p
        g1, g2 = K.torque_arms(theta, rx, ry)
        B = np.zeros((6, 3))
        B[3, 0] = dt / m
        B[4, 1] = dt / m
        B[5, :] = dt / J * np.array([g1, g2, 1.0])
        return B

    def C(self, p) -> np.ndarray:
        if self.kind == K.DOUBLE_INTEGRATOR:
            return np.eye(2)
        self._require_centered_sensor()
        m, _, mu = np.asarray(p, dtype=float)[:3]
        C = np.zeros((9, 6))
        C[:6, :6] = np.eye(6)
        C[6, 3] = C[7, 4] = -mu / m
        return C

    def D(self, p, theta: float = 0.0) -> np.ndarray:
        if self.kind == K.DOUBLE_INTEGRATOR:
            return np.zeros((2, 1))
        self._require_centered_sensor()
        m, J, _, rx, ry = np.asarray(p, dtype=float)
        g1, g2 = K.torque_arms(theta, rx, ry)
        D = np.zeros((9, 3))
        D[6, 0] = D[7, 1] = 1.0 / m
        D[8, :] = np.array([g1, g2, 1.0]) / J
        return D

    def _require_centered_sensor(self):
        if any(self.sensor_offset):
            raise ValueError("observation is not linear in x when the sensor is off the center of mass")

    # -- maps over the augmented vector -------------------------------------

    def f(self, s, u) -> np.ndarray:
        """Deterministic augmented transition (parameters carried unchanged)."""
        s, u = self._check(s, u)
        return K.dynamics(self.kind, self.consts, s, u)

    def h(self, s, u) -> np.ndarray:
        s, u = self._check(s, u)
        return K.measure(self.kind, self.consts, s, u)

    def saturate(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float).reshape(self.control_dim), -self.u_max, self.u_max)

    def clamp(self, s) -> np.ndarray:
        s = np.array(s, dtype=float)
        s[self.state_dim:] = np.maximum(s[self.state_dim:], self.lower)
        return s

    def _check(self, s, u):
        s = np.ascontiguousarray(s, dtype=float)
        u = np.ascontiguousarray(u, dtype=float).reshape(-1)
        if s.shape != (self.dim,):
            raise ValueError(f"expected augmented vector of length {self.dim}, got {s.shape}")
        if u.shape != (self.control_dim,):
            raise ValueError(f"expected control of length {self.control_dim}, got {u.shape}")
        return s, u


def build_double_integrator(dt: float = 0.1, u_max: float = 300.0) -> ParametricLinearModel:
    """Point mass pushed along a line; state (position, velocity), parameter (mass,)."""
    return ParametricLinearModel(
        name="1d",
        kind=K.DOUBLE_INTEGRATOR,
        state_dim=2,
        param_dim=1,
        control_dim=1,
        obs_dim=2,
        dt=dt,
        u_max=u_max,
        Q=np.zeros((2, 2)),
        R=np.zeros((2, 2)),
        P_drift=np.zeros((1, 1)),
        lower_bounds=np.array([PARAMETER_FLOOR]),
        state_names=("position", "velocity"),
        param_names=("mass",),
        default_initial_state=np.array([10.0, 0.0]),
    )


def build_planar_manipulation(dt: float = 0.1, u_max: float = 100.0,
                              sensor_offset: tuple[float, float] = (0.0, 0.0)) -> ParametricLinearModel:
    """Box pushed in the plane with force (Fx, Fy) and torque T.

    State is (px, py, theta, vx, vy, omega); parameters are
    (mass, inertia, linear friction, rx, ry) where (rx, ry) is the force
    application offset.  The nine observations are position, velocity and
    acceleration (linear and angular) of a sensor at ``sensor_offset`` from
    the center of mass, expressed in the global frame.
    """
    return ParametricLinearModel(
        name="pm",
        kind=K.PLANAR,
        state_dim=6,
        param_dim=5,
        control_dim=3,
        obs_dim=9,
        dt=dt,
        u_max=u_max,
        Q=np.zeros((6, 6)),
        R=np.zeros((9, 9)),
        P_drift=np.zeros((5, 5)),
        lower_bounds=np.array([PARAMETER_FLOOR, PARAMETER_FLOOR, PARAMETER_FLOOR, -np.inf, -np.inf]),
        state_names=("px", "py", "theta", "vx", "vy", "omega"),
        param_names=("mass", "inertia", "friction", "rx", "ry"),
        sensor_offset=(float(sensor_offset[0]), float(sensor_offset[1])),
        default_initial_state=np.array([5.0, 5.0, np.pi / 4, 0.0, 0.0, 0.0]),
    )


def build_model(name: str, **kwargs) -> ParametricLinearModel:
    if name == "1d":
        return build_double_integrator(**kwargs)
    if name == "pm":
        return build_planar_manipulation(**kwargs)
    raise ValueError(f"unknown model {name!r}; expected '1d' or 'pm'")


def observe(model: ParametricLinearModel, s, u, rng: np.random.Generator) -> np.ndarray:
    """Sample ``h(x, u; p) + w`` with ``w ~ N(0, R)``."""
    s, u = model._check(s, u)
    z = rng.standard_normal(model.obs_dim)
    return K.measure(model.kind, model.consts, s, u) + model.R_sqrt @ z


def step_truth(model: ParametricLinearModel, s, u, rng: np.random.Generator) -> np.ndarray:
    """Advance the true augmented state one step with saturated control and process noise."""
    u = model.saturate(u)
    s, u = model._check(s, u)
    z = rng.standard_normal(model.dim)
    s_next = K.dynamics(model.kind, model.consts, s, u) + model.noise_sqrt @ z
    return model.clamp(s_next)
