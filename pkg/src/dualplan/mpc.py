"""Certainty-equivalent receding-horizon controller.

The finite-horizon program is condensed onto the control sequence:
``X = Phi x0 + Gamma U`` stacks the predicted states ``x_1..x_H``.  L1
objectives become linear programs through epigraph variables, L2 objectives
are box-constrained QPs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import linprog, lsq_linear

from . import _kernels as K
from .belief_mdp import RewardSpec
from .models import ParametricLinearModel


class SolverError(RuntimeError):
    """Raised when the solver cannot certify optimality; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: np.ndarray | None = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    tol: float = 1e-6
    max_iter: int = 10_000

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True, eq=False)
class TrajectoryProgram:
    """Maximize ``sum_k R(x_{k+1}, u_k)`` over ``|u_k|_inf <= u_max`` with ``x_{k+1} = A x_k + B u_k``."""

    A: np.ndarray
    B: np.ndarray
    x0: np.ndarray
    horizon: int
    u_max: float
    spec: RewardSpec

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def n_controls(self) -> int:
        return self.horizon * self.nu

    def state_penalty(self) -> np.ndarray:
        half = self.nx // 2
        w = np.empty(self.nx)
        w[:half] = -self.spec.r_pos
        w[half:] = -self.spec.r_vel
        return np.tile(w, self.horizon)

    def control_penalty(self) -> np.ndarray:
        return np.full(self.n_controls, -self.spec.r_u)

    def condensed(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(Phi, Gamma)``."""
        H, nx, nu = self.horizon, self.nx, self.nu
        Phi = np.zeros((H * nx, nx))
        Gamma = np.zeros((H * nx, H * nu))
        powers = [np.eye(nx)]
        for _ in range(H):
            powers.append(self.A @ powers[-1])
        for k in range(H):
            Phi[k * nx:(k + 1) * nx] = powers[k + 1]
            for j in range(k + 1):
                Gamma[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = powers[k - j] @ self.B
        return Phi, Gamma

    def predicted_states(self, U) -> np.ndarray:
        Phi, Gamma = self.condensed()
        return Phi @ self.x0 + Gamma @ np.ravel(U)

    def objective(self, U) -> float:
        """Total reward of a control sequence by forward simulation."""
        U = np.asarray(U, float).reshape(self.horizon, self.nu)
        x = self.x0.copy()
        total = 0.0
        code = self.spec.kind_code
        w = self.spec.weights
        for u in U:
            x = self.A @ x + self.B @ u
            # heading stays unwrapped: the program is linear in it
            total += K.reward(K.DOUBLE_INTEGRATOR, code, w, x, u)
        return float(total)

    # -- L1 as a linear program ---------------------------------------------

    def epigraph_lp(self):
        """``(c, A_ub, b_ub, bounds)`` over ``z = [U, T, S]`` with ``|X| <= T``, ``|U| <= S``."""
        Phi, Gamma = self.condensed()
        nU, nT = self.n_controls, self.horizon * self.nx
        free = Phi @ self.x0
        I_U = np.eye(nU)
        Z_US = np.zeros((nT, nU))
        Z_UT = np.zeros((nU, nT))
        A_ub = np.block([
            [Gamma, -np.eye(nT), Z_US],
            [-Gamma, -np.eye(nT), Z_US],
            [I_U, Z_UT, -I_U],
            [-I_U, Z_UT, -I_U],
        ])
        b_ub = np.concatenate([-free, free, np.zeros(2 * nU)])
        c = np.concatenate([np.zeros(nU), self.state_penalty(), self.control_penalty()])
        bounds = [(-self.u_max, self.u_max)] * nU + [(0, None)] * (nT + nU)
        return c, A_ub, b_ub, bounds

    def epigraph_point(self, U) -> np.ndarray:
        """Tight epigraph variables for ``U``; ``-c @ z`` equals :meth:`objective`."""
        U = np.ravel(U)
        return np.concatenate([U, np.abs(self.predicted_states(U)), np.abs(U)])

    # -- L2 as a box QP ------------------------------------------------------

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray, float]:
        """``(Hq, g, const)`` with cost ``0.5 U'Hq U + g'U + const`` equal to minus the reward."""
        Phi, Gamma = self.condensed()
        wx = self.state_penalty()
        wu = self.control_penalty()
        free = Phi @ self.x0
        GW = Gamma.T * wx
        Hq = 2.0 * (GW @ Gamma + np.diag(wu))
        g = 2.0 * GW @ free
        return 0.5 * (Hq + Hq.T), g, float(free @ (wx * free))


def build_program(mean, model: ParametricLinearModel, spec: RewardSpec, config: MpcConfig) -> TrajectoryProgram:
    """Certainty-equivalent program at a belief mean.

    For the planar model the input matrix is frozen at the current heading
    estimate for the whole horizon.
    """
    mean = np.asarray(mean, float)
    x0 = mean[:model.state_dim].copy()
    p = mean[model.state_dim:]
    theta = 0.0
    if model.kind == K.PLANAR:
        x0[2] = K.wrap_angle(x0[2])
        theta = x0[2]
    return TrajectoryProgram(model.A(p), model.B(p, theta), x0, config.horizon, model.u_max, spec)


def _solve_lp(program: TrajectoryProgram, config: MpcConfig) -> np.ndarray:
    c, A_ub, b_ub, bounds = program.epigraph_lp()
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"maxiter": config.max_iter, "primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    nU = program.n_controls
    if res.status != 0 or res.x is None:
        raise SolverError(f"LP solver failed: {res.message}", None if res.x is None else res.x[:nU])
    lo = np.array([b[0] if b[0] is not None else 0.0 for b in bounds])
    hi = np.array([b[1] if b[1] is not None else 0.0 for b in bounds])
    dual = b_ub @ res.ineqlin.marginals + lo @ res.lower.marginals + hi @ res.upper.marginals
    gap = abs(res.fun - dual)
    if gap > config.tol * max(1.0, abs(res.fun)):
        raise SolverError(f"LP duality gap {gap:.3g} above tolerance", res.x[:nU])
    return res.x[:nU]


def _solve_qp(program: TrajectoryProgram, config: MpcConfig) -> np.ndarray:
    Hq, g, const = program.quadratic_form()
    L = cholesky(Hq, lower=True)
    # 0.5 U'HU + g'U = 0.5 |L'U + L^-1 g|^2 + const
    rhs = -solve_triangular(L, g, lower=True)
    res = lsq_linear(L.T, rhs, bounds=(-program.u_max, program.u_max), method="bvls",
                     tol=1e-14, max_iter=config.max_iter)
    U = np.clip(res.x, -program.u_max, program.u_max)
    grad = Hq @ U + g
    # Frank-Wolfe gap bounds the suboptimality of a convex objective over the box
    fw_gap = grad @ U + program.u_max * np.abs(grad).sum()
    cost = 0.5 * U @ Hq @ U + g @ U + const
    if not res.success or fw_gap > config.tol * max(1.0, abs(cost)):
        raise SolverError(f"QP not certified (gap {fw_gap:.3g})", U)
    return U


def solve_convex(program: TrajectoryProgram, config: MpcConfig = MpcConfig()) -> np.ndarray:
    """Optimal control sequence of shape ``(horizon, nu)``, within ``config.tol`` of optimal."""
    if program.spec.kind == "l1":
        U = _solve_lp(program, config)
    else:
        U = _solve_qp(program, config)
    return np.clip(U, -program.u_max, program.u_max).reshape(program.horizon, program.nu)


def plan_mpc(mean, model: ParametricLinearModel, spec: RewardSpec, config: MpcConfig = MpcConfig()) -> np.ndarray:
    """First action of the certainty-equivalent plan.

    Only the belief mean is consumed; the covariance never enters the program.
    """
    program = build_program(mean, model, spec, config)
    return solve_convex(program, config)[0]


def dump_program(program: TrajectoryProgram, path) -> None:
    """Write a program as plain text for cross-checking with another solver.

    The file is a sequence of blocks, each introduced by a header line
    ``# <name> <rows> <cols>`` followed by ``rows`` lines of
    whitespace-separated values in ``repr`` precision.  Blocks: ``A``, ``B``,
    ``x0`` (column), ``horizon``, ``u_max``, ``state_penalty``,
    ``control_penalty`` (columns) and ``kind`` (0 = L1, 1 = L2).
    """
    blocks = [
        ("A", program.A),
        ("B", program.B),
        ("x0", program.x0.reshape(-1, 1)),
        ("horizon", np.array([[program.horizon]], float)),
        ("u_max", np.array([[program.u_max]], float)),
        ("state_penalty", program.state_penalty().reshape(-1, 1)),
        ("control_penalty", program.control_penalty().reshape(-1, 1)),
        ("kind", np.array([[program.spec.kind_code]], float)),
    ]
    with open(path, "w") as fh:
        for name, M in blocks:
            M = np.atleast_2d(M)
            fh.write(f"# {name} {M.shape[0]} {M.shape[1]}\n")
            for row in M:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_program(path) -> dict[str, np.ndarray]:
    """Read the blocks written by :func:`dump_program`."""
    out: dict[str, np.ndarray] = {}
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    i = 0
    while i < len(lines):
        _, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        out[name] = np.array(data).reshape(rows, cols)
        i += 1 + rows
    return out
