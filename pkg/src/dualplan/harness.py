"""Closed-loop simulation of simultaneous estimation and control, trial batches and sweeps."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .belief_mdp import RewardSpec, reward
from .filter import FilterDivergence, GaussianBelief, correct, predict, update
from .mcts import MctsConfig, plan as plan_mcts
from .models import ParametricLinearModel, build_model, observe, step_truth
from .mpc import MpcConfig, SolverError, plan_mpc

log = logging.getLogger(__name__)

PROCESS_SIGMAS_1D = (0.03162277660168379, 0.1, 0.31622776601683794, 1.0, 2.23606797749979)
PARAM_SIGMAS_1D = (0.31622776601683794, 1.0, 3.1622776601683795, 10.0, 31.622776601683793, 100.0)
PROCESS_SIGMAS_PM = (0.03162277660168379, 0.1, 0.31622776601683794, 1.0, 3.1622776601683795, 10.0)
PARAM_SIGMAS_PM = (0.03162277660168379, 0.1, 0.31622776601683794, 1.0, 3.1622776601683795, 10.0,
                   31.622776601683793)

DEFAULT_SWEEPS = {
    ("1d", "process_sigma"): PROCESS_SIGMAS_1D,
    ("1d", "param_sigma"): PARAM_SIGMAS_1D,
    ("pm", "process_sigma"): PROCESS_SIGMAS_PM,
    ("pm", "param_sigma"): PARAM_SIGMAS_PM,
}

DEFAULT_PARAM_MEAN = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "1d"
    policy: str = "mcts"
    reward: str = "l1"
    iters: int | None = None
    steps: int = 100
    trials: int = 30
    process_sigma: float = 1.0
    param_sigma: float = math.sqrt(10.0)
    sweep: str = "process_sigma"
    sweep_values: tuple[float, ...] | None = None
    param_mean: tuple[float, ...] | None = None
    truth: str = "prior"
    true_params: tuple[float, ...] | None = None
    initial_state: tuple[float, ...] | None = None
    observation_timing: str = "pre_step"
    seed: int = 0
    horizon: int = 20
    c: float | None = None
    k_dpw: float | None = None
    alpha_dpw: float | None = None
    depth: int | None = None
    rollout_gain: float | None = None
    discount: float | None = None
    workers: int = 1

    def __post_init__(self):
        checks = [
            (self.model in ("1d", "pm"), f"model must be '1d' or 'pm', got {self.model!r}"),
            (self.policy in ("mcts", "mpc"), f"policy must be 'mcts' or 'mpc', got {self.policy!r}"),
            (self.reward in ("l1", "l2"), f"reward must be 'l1' or 'l2', got {self.reward!r}"),
            (self.sweep in ("process_sigma", "param_sigma", "none"), f"unknown sweep {self.sweep!r}"),
            (self.truth in ("prior", "fixed"), f"truth must be 'prior' or 'fixed', got {self.truth!r}"),
            (self.observation_timing in ("pre_step", "post_step", "lagged"),
             "observation_timing must be 'pre_step', 'post_step' or 'lagged'"),
            (self.steps >= 0, "steps must be non-negative"),
            (self.trials >= 1, "trials must be at least 1"),
            (self.process_sigma >= 0 and self.param_sigma >= 0, "noise levels must be non-negative"),
            (self.sweep_values is None or all(v >= 0 for v in self.sweep_values),
             "sweep values must be non-negative"),
            (self.iters is None or self.iters >= 1, "iters must be at least 1"),
            (self.workers >= 1, "workers must be at least 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    # -- derived objects ------------------------------------------------------

    def base_model(self) -> ParametricLinearModel:
        return build_model(self.model)

    def model_at(self, process_sigma: float | None = None) -> ParametricLinearModel:
        sigma = self.process_sigma if process_sigma is None else process_sigma
        return self.base_model().with_process_noise(sigma)

    def reward_spec(self) -> RewardSpec:
        return RewardSpec.for_model(self.model, self.reward)

    def mcts_config(self) -> MctsConfig:
        overrides = {k: getattr(self, k) for k in ("c", "k_dpw", "alpha_dpw", "depth", "rollout_gain",
                                                    "discount") if getattr(self, k) is not None}
        if self.iters is not None:
            overrides["n_iter"] = self.iters
        return MctsConfig.for_model(self.model, **overrides)

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(horizon=self.horizon)

    def prior_mean(self, model: ParametricLinearModel) -> np.ndarray:
        if self.param_mean is not None:
            mean = np.asarray(self.param_mean, float)
            if mean.shape != (model.param_dim,):
                raise ValueError(f"param_mean needs {model.param_dim} entries")
            return mean
        # floored physical quantities start at a common guess; offsets at zero
        return np.where(np.isfinite(model.lower), DEFAULT_PARAM_MEAN, 0.0)

    def start_state(self, model: ParametricLinearModel) -> np.ndarray:
        if self.initial_state is None:
            return model.default_initial_state.copy()
        x0 = np.asarray(self.initial_state, float)
        if x0.shape != (model.state_dim,):
            raise ValueError(f"initial_state needs {model.state_dim} entries")
        return x0

    def at_point(self, value: float) -> "ExperimentConfig":
        """Config with the swept quantity set to ``value``."""
        if self.sweep == "process_sigma":
            return dataclasses.replace(self, process_sigma=value)
        if self.sweep == "param_sigma":
            return dataclasses.replace(self, param_sigma=value)
        return self

    def points(self) -> tuple[float, ...]:
        if self.sweep == "none":
            return (self.process_sigma,)
        if self.sweep_values is not None:
            return tuple(self.sweep_values)
        return DEFAULT_SWEEPS[self.model, self.sweep]


@dataclass(frozen=True, eq=False)
class TrialResult:
    total_reward: float
    rewards: np.ndarray
    actions: np.ndarray
    states: np.ndarray
    belief_means: np.ndarray
    cov_traces: np.ndarray
    wall_ms: np.ndarray
    true_params: np.ndarray
    flagged: bool = False
    error: str = ""

    @property
    def steps(self) -> int:
        return self.rewards.size

    def write_log(self, path) -> None:
        nu = self.actions.shape[1] if self.actions.ndim == 2 else 0
        nm = self.belief_means.shape[1] if self.belief_means.ndim == 2 else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "reward"] + [f"action{i}" for i in range(nu)]
                       + [f"mean{i}" for i in range(nm)] + ["cov_trace", "wall_ms"])
            for t in range(self.steps):
                w.writerow([t, repr(float(self.rewards[t]))]
                           + [repr(float(x)) for x in self.actions[t]]
                           + [repr(float(x)) for x in self.belief_means[t]]
                           + [repr(float(self.cov_traces[t])), f"{self.wall_ms[t]:.3f}"])


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    mean_reward: float
    sem: float
    trials: int
    flagged: int

    @property
    def available(self) -> bool:
        return self.trials > 0


@dataclass(frozen=True, eq=False)
class SweepTable:
    rows: tuple[SweepRow, ...]
    totals: tuple[np.ndarray, ...] = field(default=())

    def values(self) -> np.ndarray:
        return np.array([r.sweep_value for r in self.rows])

    def means(self) -> np.ndarray:
        return np.array([r.mean_reward for r in self.rows])

    def sems(self) -> np.ndarray:
        return np.array([r.sem for r in self.rows])

    def row(self, value: float, rel: float = 1e-9) -> SweepRow:
        for r in self.rows:
            if math.isclose(r.sweep_value, value, rel_tol=rel):
                return r
        raise KeyError(value)

    def write_csv(self, path, policy: str | None = None) -> None:
        write_tables(path, {policy: self} if policy else {None: self})


def write_tables(path, tables: dict) -> None:
    """CSV with header ``sweep_value,mean_reward,sem,trials,flagged`` (plus a leading policy column
    when more than one table or a named table is written)."""
    named = any(k is not None for k in tables)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["policy"] if named else []) + ["sweep_value", "mean_reward", "sem", "trials", "flagged"])
        for name, table in tables.items():
            for r in table.rows:
                w.writerow(([name] if named else []) + [repr(r.sweep_value), repr(r.mean_reward),
                                                        repr(r.sem), r.trials, r.flagged])


# -- seeds ------------------------------------------------------------------

def trial_seed(master_seed: int, point: int, trial: int) -> np.random.SeedSequence:
    """Seed of trial ``trial`` at sweep point ``point``; independent of every other trial."""
    return np.random.SeedSequence(master_seed, spawn_key=(point, trial))


def _streams(seed) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    # truth draw, environment noise and planner each get their own stream so
    # that policies compared under one seed face identical truth and noise;
    # children are built directly because spawn() advances the parent
    children = (np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + (i,),
                                       pool_size=seed.pool_size) for i in range(3))
    return tuple(np.random.default_rng(s) for s in children)


def sample_truth(config: ExperimentConfig, model: ParametricLinearModel, rng: np.random.Generator) -> np.ndarray:
    mean = config.prior_mean(model)
    if config.truth == "fixed":
        p = np.asarray(config.true_params, float) if config.true_params is not None else mean.copy()
        return np.maximum(p, model.lower)
    p = np.empty(model.param_dim)
    for i in range(model.param_dim):
        # rejection sampling keeps the draw a truncated Gaussian
        for _ in range(10_000):
            draw = mean[i] + config.param_sigma * rng.standard_normal()
            if draw >= model.lower[i]:
                break
        else:
            draw = model.lower[i]
        p[i] = draw
    return p


# -- trials -----------------------------------------------------------------

def run_trial(config: ExperimentConfig, trial_seed=0) -> TrialResult:
    """One closed-loop episode.

    Each step: choose ``u`` from the belief, take a measurement, update the
    belief with ``(u, o)``, then advance the true system.  With
    ``observation_timing='pre_step'`` the measurement is of the state before
    the step, so it is folded in before propagating (correct, then predict);
    the belief handed to the planner is then the prior of the current state.
    ``'post_step'`` advances the system first and runs predict, then correct on
    the new measurement.  ``'lagged'`` runs predict, then correct on the
    pre-step measurement, which mixes two time indices; it is kept only for
    comparison.
    """
    model = config.model_at()
    spec = config.reward_spec()
    truth_rng, env_rng, plan_rng = _streams(trial_seed)
    p_true = sample_truth(config, model, truth_rng)
    x0 = config.start_state(model)
    s = np.concatenate([x0, p_true])
    belief = GaussianBelief.initial(model, x0, config.prior_mean(model), config.param_sigma)
    mcts_cfg = config.mcts_config() if config.policy == "mcts" else None
    mpc_cfg = config.mpc_config() if config.policy == "mpc" else None

    T = config.steps
    rewards = np.zeros(T)
    actions = np.zeros((T, model.control_dim))
    states = np.zeros((T, model.dim))
    means = np.zeros((T, model.dim))
    traces = np.zeros(T)
    wall = np.zeros(T)
    error = ""
    done = T
    for t in range(T):
        t0 = time.perf_counter()
        try:
            if mcts_cfg is not None:
                u = plan_mcts(belief, model, spec, mcts_cfg, plan_rng)
            else:
                u = plan_mpc(belief.mean, model, spec, mpc_cfg)
            u = model.saturate(u)
            if config.observation_timing == "pre_step":
                o = observe(model, s, u, env_rng)
                belief = predict(correct(belief, model, u, o), model, u)
                s = step_truth(model, s, u, env_rng)
            elif config.observation_timing == "lagged":
                o = observe(model, s, u, env_rng)
                belief = update(belief, model, u, o)
                s = step_truth(model, s, u, env_rng)
            else:
                s = step_truth(model, s, u, env_rng)
                o = observe(model, s, u, env_rng)
                belief = update(belief, model, u, o)
        except (FilterDivergence, SolverError) as exc:
            error = f"step {t}: {exc}"
            done = t
            log.warning("trial flagged: %s", error)
            break
        wall[t] = 1e3 * (time.perf_counter() - t0)
        rewards[t] = reward(spec, belief.state_mean(model), u, model)
        actions[t] = u
        states[t] = s
        means[t] = belief.mean
        traces[t] = np.trace(belief.cov)
    flagged = bool(error) or not np.isfinite(rewards[:done]).all()
    return TrialResult(
        total_reward=float(rewards[:done].sum()), rewards=rewards[:done], actions=actions[:done],
        states=states[:done], belief_means=means[:done], cov_traces=traces[:done], wall_ms=wall[:done],
        true_params=p_true, flagged=flagged, error=error)


def _run_one(args):
    config, point, trial = args
    return run_trial(config, trial_seed(config.seed, point, trial))


def run_trials(config: ExperimentConfig) -> list[list[TrialResult]]:
    """All trials of all sweep points, in sweep order."""
    jobs = [(config.at_point(v), j, i) for j, v in enumerate(config.points()) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            flat = list(pool.map(_run_one, jobs))
    else:
        flat = [_run_one(job) for job in jobs]
    n = config.trials
    return [flat[j * n:(j + 1) * n] for j in range(len(config.points()))]


def aggregate(values: Sequence[float], results: Sequence[Sequence[TrialResult]]) -> SweepTable:
    """Mean and standard error per sweep value; flagged trials are counted and excluded."""
    rows = []
    totals = []
    for value, batch in zip(values, results):
        good = np.array([r.total_reward for r in batch if not r.flagged])
        flagged = sum(r.flagged for r in batch)
        totals.append(good)
        if good.size == 0:
            rows.append(SweepRow(float(value), math.nan, math.nan, 0, flagged))
            continue
        sem = float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1 else 0.0
        rows.append(SweepRow(float(value), float(good.mean()), sem, int(good.size), flagged))
    return SweepTable(tuple(rows), tuple(totals))


def run_sweep(config: ExperimentConfig) -> SweepTable:
    return aggregate(config.points(), run_trials(config))


# -- config files -------------------------------------------------------------

def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    raw = raw.strip()
    if "tuple" in ftype:
        if raw.lower() in ("", "none"):
            return None
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if raw.lower() == "none" and "None" in ftype:
        return None
    if ftype.startswith("int"):
        return int(raw)
    if ftype.startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment; lists are comma or space separated)."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in names:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
