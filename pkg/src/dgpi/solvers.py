"""Training loops: deep policy iteration (DPI) and its generalized form (DGPI).

One "update" is one optimizer step on one network (or, during warm-up, one
joint step on both). Budgets, evaluation cadence and the reported
iteration counts are all in updates.

DGPI runs in two phases. Warm-up takes joint gradient steps on the critic
loss until the sampled Hamiltonian is non-positive (mean or max over the
batch). Policy iteration then alternates exactly one critic step and one
actor step until the value function stops moving on the test set.

DPI runs each inner loop to its termination test (or a cap) before
switching networks.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .dynamics import DomainError, DynamicsModel, RolloutSampler, make_model
from .hjb import HamiltonianEval
from .metrics import MetricsRow, metrics_csv, policy_error, value_error
from .networks import (Checkpoint, MlpSpec, PolicyNetwork, ValueNetwork, init_params)
from .optim import Optimizer
from .oracles import LqrProblem, rollout, solve_care

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "aircraft"
    algorithm: str = "dgpi"
    seed: int = 0
    omega_lo: list | None = None
    omega_hi: list | None = None
    # networks
    value_hidden: list = field(default_factory=lambda: [64, 64])
    policy_hidden: list = field(default_factory=lambda: [64, 64])
    value_output: str = "softplus"
    value_zero_bias: bool = False
    value_scale: float | None = None
    policy_output: str = "linear"
    policy_scale: list | None = None
    policy_input_shift: bool = True
    policy_zero_bias: bool = False
    # optimisation
    optimizer: str = "adam"
    lr_critic: float = 0.01
    lr_actor: float = 0.01
    lr_warmup: float | None = None
    batch_size: int = 256
    eta: float = 0.1
    warmup_criterion: str = "mean"
    epsilon: float = 1e-4
    dpi_epsilon: float = 1e-3
    critic_cap: int = 200
    actor_cap: int = 50
    max_updates: int = 30000
    target_error: float | None = None
    stop_at_target: bool = True
    # state sampling
    sampler: str = "uniform"
    sampler_dt: float = 0.01
    sampler_steps: int = 1
    episode_time: float = 20.0
    uniform_fraction: float = 0.0
    # evaluation
    eval_every: int = 500
    test_size: int = 500
    cost_horizon: float = 20.0
    cost_dt: float = 0.01
    record_wall_time: bool = False

    def __post_init__(self):
        if self.algorithm not in ("dgpi", "dpi"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        for name in ("lr_critic", "lr_actor", "epsilon", "dpi_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_warmup is not None and not self.lr_warmup > 0:
            raise ValueError("lr_warmup must be positive")
        if self.batch_size < 1 or self.max_updates < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_updates and eval_every must be >= 1")
        if self.warmup_criterion not in ("mean", "max"):
            raise ValueError("warmup_criterion is 'mean' or 'max'")
        if self.sampler not in ("uniform", "rollout"):
            raise ValueError("sampler is 'uniform' or 'rollout'")
        if not 0.0 <= self.uniform_fraction <= 1.0:
            raise ValueError("uniform_fraction must lie in [0, 1]")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "TrainConfig":
        """Defaults tuned per benchmark; keyword overrides win."""
        base: dict = {"model": model}
        if model == "vehicle":
            base.update(value_hidden=[32, 32, 32], policy_hidden=[32, 32, 32],
                        policy_output="tanh", policy_scale=[0.35, 3.0],
                        lr_critic=8e-4, lr_actor=2e-4, sampler="rollout")
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainerState:
    config: TrainConfig
    model: DynamicsModel
    h: HamiltonianEval
    value_opt: Optimizer
    policy_opt: Optimizer
    warmup_opt: Optimizer
    rng: np.random.Generator
    test_set: np.ndarray
    cost_x0: np.ndarray
    sampler: RolloutSampler | None = None
    oracle: object = None
    phase: str = "warmup"
    updates: int = 0
    outer: int = 0
    converged: bool = False
    warmup_exit: int | None = None
    cap_hit: bool = False
    last_Lc: float | None = None
    last_La: float | None = None
    rows: list = field(default_factory=list)
    batch_abs_H: list = field(default_factory=list)
    _last_abs_H: float = float("nan")
    prev_test_V: np.ndarray | None = None
    started: float = field(default_factory=time.perf_counter)

    @property
    def value(self) -> ValueNetwork:
        return self.h.value

    @property
    def policy(self) -> PolicyNetwork:
        return self.h.policy

    def budget_left(self) -> bool:
        return self.updates < self.config.max_updates


def build_networks(config: TrainConfig, model: DynamicsModel):
    value_out = config.value_output
    if config.value_zero_bias and value_out == "softplus":
        value_out = "logsq"
    vscale = None if config.value_scale is None else [config.value_scale]
    vspec = MlpSpec([model.n, *config.value_hidden, 1], value_out, output_scale=vscale,
                    zero_bias=config.value_zero_bias)
    pspec = MlpSpec([model.n, *config.policy_hidden, model.m], config.policy_output,
                    output_scale=config.policy_scale, zero_bias=config.policy_zero_bias)
    seed = config.seed
    value = ValueNetwork(vspec, init_params(vspec, [seed, 1]), model.x_e)
    pshift = model.x_e if config.policy_input_shift else None
    policy = PolicyNetwork(pspec, init_params(pspec, [seed, 2]), pshift)
    return value, policy


def lqr_oracle(model: DynamicsModel):
    if not model.linear:
        return None
    return solve_care(LqrProblem(model.A, model.B, model.Q, model.R))


def make_state(config: TrainConfig) -> TrainerState:
    model = make_model(config.model, config.omega_lo, config.omega_hi)
    value, policy = build_networks(config, model)
    h = HamiltonianEval(model, value, policy, config.eta)
    rng = np.random.default_rng([config.seed, 0])
    test_set = model.sample_states(config.test_size, rng)
    cost_x0 = model.sample_states(1, rng)[0]

    def opt(lr):
        return Optimizer(config.optimizer, lr)

    state = TrainerState(config=config, model=model, h=h,
                         value_opt=opt(config.lr_critic), policy_opt=opt(config.lr_actor),
                         warmup_opt=opt(config.lr_warmup or config.lr_critic),
                         rng=rng, test_set=test_set, cost_x0=cost_x0,
                         oracle=lqr_oracle(model))
    if config.sampler == "rollout":
        state.sampler = RolloutSampler(model, config.batch_size, rng, config.sampler_dt,
                                       config.episode_time, config.uniform_fraction)
    if config.algorithm == "dpi":
        state.phase = "pi"
    state.prev_test_V = value(test_set)
    return state


# ---------------------------------------------------------------- per-update plumbing

def _next_batch(state: TrainerState) -> np.ndarray:
    if state.sampler is not None:
        return state.sampler.batch()
    return state.model.sample_states(state.config.batch_size, state.rng)


def _checked(Lc, La, H):
    if not (np.isfinite(Lc) and np.isfinite(La) and np.all(np.isfinite(H))):
        raise TrainingAborted(f"non-finite loss (L_c={Lc}, L_a={La})")


def _losses(state, batch, wrt):
    try:
        out = state.h.losses_and_grads(batch, state.value.params, state.policy.params, wrt)
    except (NumericError, DomainError, FloatingPointError) as exc:
        raise TrainingAborted(str(exc)) from exc
    _checked(*out[:3])
    state._last_abs_H = float(np.mean(np.abs(out[2])))
    return out


def _step(opt: Optimizer, params, grads):
    try:
        return opt.step(params, grads)
    except NumericError as exc:
        raise TrainingAborted(str(exc)) from exc


def _after_update(state: TrainerState) -> None:
    state.updates += 1
    state.batch_abs_H.append(state._last_abs_H)
    if state.sampler is not None:
        state.sampler.advance(state.policy, state.config.sampler_steps)
    if state.updates % state.config.eval_every == 0:
        state.rows.append(evaluate(state))


# ---------------------------------------------------------------- algorithm steps

def dgpi_warmup_step(state: TrainerState) -> TrainerState:
    """Joint critic-loss step on both networks, or exit warm-up.

    The exit test is evaluated on the fresh batch first; if the sampled
    Hamiltonian is already non-positive the phase flips without a step.
    """
    if state.phase != "warmup":
        raise ValueError("warm-up step outside the warm-up phase")
    batch = _next_batch(state)
    Lc, La, H, g = _losses(state, batch, ("critic_value", "critic_policy"))
    state.last_Lc, state.last_La = Lc, La
    crit = float(np.max(H)) if state.config.warmup_criterion == "max" else float(np.mean(H))
    if crit <= 0.0:
        state.phase = "pi"
        state.warmup_exit = state.updates
        log.info("warm-up finished after %d updates", state.updates)
        return state
    nv = state.value.params.size
    joint = np.concatenate([state.value.params, state.policy.params])
    new = _step(state.warmup_opt, joint, np.concatenate([g["critic_value"], g["critic_policy"]]))
    state.value.params = new[:nv]
    state.policy.params = new[nv:]
    _after_update(state)
    return state


def _value_change(state: TrainerState) -> float:
    V = state.value(state.test_set)
    change = float(np.mean(np.abs(V - state.prev_test_V)))
    state.prev_test_V = V
    return change


def dgpi_pi_step(state: TrainerState) -> TrainerState:
    """One critic update followed by one actor update."""
    if state.phase != "pi":
        raise ValueError("policy-iteration step during warm-up")
    Lc, _, _, g = _losses(state, _next_batch(state), ("critic_value",))
    state.last_Lc = Lc
    state.value.params = _step(state.value_opt, state.value.params, g["critic_value"])
    _after_update(state)

    if state.budget_left():
        _, La, _, g = _losses(state, _next_batch(state), ("actor_policy",))
        state.last_La = La
        state.policy.params = _step(state.policy_opt, state.policy.params, g["actor_policy"])
        _after_update(state)

    state.outer += 1
    if _value_change(state) < state.config.epsilon:
        state.converged = True
    return state


def dpi_outer_step(state: TrainerState) -> TrainerState:
    """Policy evaluation to ``L_c <= eps`` then improvement until ``L_a`` settles."""
    cfg = state.config
    capped = True
    for _ in range(cfg.critic_cap):
        if not state.budget_left():
            capped = False
            break
        Lc, _, _, g = _losses(state, _next_batch(state), ("critic_value",))
        state.last_Lc = Lc
        if Lc <= cfg.dpi_epsilon:
            capped = False
            break
        state.value.params = _step(state.value_opt, state.value.params, g["critic_value"])
        _after_update(state)
    critic_capped = capped

    capped = True
    for _ in range(cfg.actor_cap):
        if not state.budget_left():
            capped = False
            break
        batch = _next_batch(state)
        _, La_old, _, g = _losses(state, batch, ("actor_policy",))
        state.policy.params = _step(state.policy_opt, state.policy.params, g["actor_policy"])
        La_new = float(state.h.actor_loss(batch))
        state.last_La = La_new
        _after_update(state)
        if abs(La_new - La_old) <= cfg.dpi_epsilon:
            capped = False
            break
    state.cap_hit = critic_capped or capped
    state.outer += 1
    if _value_change(state) < cfg.epsilon:
        state.converged = True
    return state


# ---------------------------------------------------------------- evaluation

def evaluate(state: TrainerState) -> MetricsRow:
    X = state.test_set
    H = state.h.hamiltonian(X)
    phase = state.phase
    if state.cap_hit and phase == "pi":
        phase = "pi-cap"
    row = MetricsRow(iter=state.updates, phase=phase, L_c=state.last_Lc, L_a=state.last_La,
                     mean_abs_H=float(np.mean(np.abs(H))), max_H=float(np.max(H)))
    if state.oracle is not None:
        P, K = state.oracle.P, state.oracle.K
        x_e = state.model.x_e
        row.e_pi, row.e_pi_abs = policy_error(
            state.policy, lambda x: -(x - x_e) @ K.T, X)
        row.e_V, row.e_V_abs = value_error(
            state.value, lambda x: np.einsum("bi,ij,bj->b", x - x_e, P, x - x_e), X)
    if state.config.cost_horizon > 0:
        traj = rollout(state.model, state.policy, state.cost_x0,
                       state.config.cost_horizon, state.config.cost_dt)
        row.C = float(traj.cost)
    if state.config.record_wall_time:
        row.wall_s = time.perf_counter() - state.started
    return row


def _target_met(state: TrainerState, row: MetricsRow) -> bool:
    target = state.config.target_error
    if target is None or row.e_pi_abs is None:
        return False
    return row.e_pi_abs < target and row.e_V_abs < target


def _score(row: MetricsRow) -> float:
    for key in ("e_V_abs", "C", "mean_abs_H"):
        v = getattr(row, key)
        if v is not None:
            return v
    return np.inf


@dataclass
class TrainResult:
    state: TrainerState
    rows: list
    warmup_exit: int | None
    updates_to_target: int | None
    abort_reason: str | None
    best: Checkpoint
    final: Checkpoint

    @property
    def csv(self) -> str:
        return metrics_csv(self.rows)


def _checkpoint(state: TrainerState, tag: str) -> Checkpoint:
    v = ValueNetwork(state.value.spec, state.value.params.copy(), state.value.shift)
    p = PolicyNetwork(state.policy.spec, state.policy.params.copy(), state.policy.shift)
    return Checkpoint(state.model.name, v, p,
                      {"tag": tag, "updates": state.updates, "seed": state.config.seed,
                       "algorithm": state.config.algorithm})


def train(config: TrainConfig, out_dir=None) -> TrainResult:
    """Run one seed to convergence, target error or the update budget."""
    state = make_state(config)
    state.rows.append(evaluate(state))
    best = _checkpoint(state, "best")
    best_score = _score(state.rows[-1])
    updates_to_target = None
    abort = None
    last_row = len(state.rows)
    try:
        while state.budget_left() and not state.converged:
            if config.algorithm == "dpi":
                dpi_outer_step(state)
            elif state.phase == "warmup":
                dgpi_warmup_step(state)
            else:
                dgpi_pi_step(state)
            for row in state.rows[last_row:]:
                if _score(row) < best_score:
                    best_score = _score(row)
                    best = _checkpoint(state, "best")
                if updates_to_target is None and _target_met(state, row):
                    updates_to_target = row.iter
            last_row = len(state.rows)
            if updates_to_target is not None and config.stop_at_target:
                break
    except TrainingAborted as exc:
        abort = str(exc)
        log.warning("training aborted: %s", abort)
        state.rows.append(MetricsRow(iter=state.updates, phase="aborted",
                                     L_c=state.last_Lc, L_a=state.last_La))
    if abort is None and (not state.rows or state.rows[-1].iter != state.updates):
        state.rows.append(evaluate(state))
    final = _checkpoint(state, "final")
    result = TrainResult(state, state.rows, state.warmup_exit, updates_to_target, abort,
                         best, final)
    if out_dir is not None:
        write_run(result, Path(out_dir))
    return result


def write_run(result: TrainResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.csv)
    result.best.save(out / "checkpoint_best.json")
    result.final.save(out / "checkpoint_final.json")
    rows = result.rows
    first_C = next((r.C for r in rows if r.C is not None), None)
    last_C = next((r.C for r in reversed(rows) if r.C is not None), None)
    manifest = {
        "config": dataclasses.asdict(result.state.config),
        "warmup_exit_updates": result.warmup_exit,
        "updates": result.state.updates,
        "converged": result.state.converged,
        "updates_to_target": result.updates_to_target,
        "abort_reason": result.abort_reason,
        "final_metrics": dict(zip(["iter", "phase", "L_c", "L_a", "mean_abs_H", "max_H", "e_pi",
                                   "e_pi_abs", "e_V", "e_V_abs", "C", "wall_s"],
                                  [getattr(rows[-1], f.name) for f in
                                   dataclasses.fields(rows[-1])])) if rows else {},
        "cost_first": first_C,
        "cost_last": last_C,
        "cost_decreased": None if first_C is None else bool(last_C < first_C),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
