"""Command-line entry point: ``train``, ``eval``, ``riccati`` and ``simulate``.

Exit codes: 0 success, 2 bad input (config, checkpoint, arguments), 3 training
aborted on a numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import sys
import types
import typing
from pathlib import Path

import numpy as np

from .dynamics import MODELS, make_model
from .hjb import HamiltonianEval
from .metrics import mean_abs_hamiltonian, policy_error, value_error
from .networks import Checkpoint
from .oracles import LqrProblem, SolverError, rollout, settle_time, solve_care
from .solvers import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3


class ConfigError(ValueError):
    pass


# Config document layout: which TrainConfig fields live in which section.
SECTIONS = {
    "model": {"id": "model", "omega_lo": "omega_lo", "omega_hi": "omega_hi"},
    "networks": {name: name for name in (
        "value_hidden", "value_output", "value_zero_bias", "value_scale",
        "policy_hidden", "policy_output", "policy_scale", "policy_input_shift",
        "policy_zero_bias")},
    "output": {"directory": None, "eval_every": "eval_every"},
}
_placed = {v for sec in SECTIONS.values() for v in sec.values() if v}
SECTIONS["train"] = {f.name: f.name for f in dataclasses.fields(TrainConfig)
                     if f.name not in _placed}


def _coerce(text: str, hint) -> object:
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("", "none"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(text, inner)
    if hint is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if hint is list or origin is list:
        return [float(p) if any(c in p for c in ".eE") else int(p)
                for p in (s.strip() for s in text.split(",")) if p]
    raise TypeError(f"unsupported field type {hint!r}")


def load_config(path) -> tuple[TrainConfig, Path]:
    """Parse a run config; returns the resolved training config and output directory."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        text = Path(path).read_text()
        parser.read_string(text, source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    hints = typing.get_type_hints(TrainConfig)
    values: dict = {}
    out_dir = None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            target = SECTIONS[section][key]
            if target is None:
                out_dir = Path(raw.strip())
                continue
            try:
                values[target] = _coerce(raw, hints[target])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    model = values.pop("model", None)
    if model is None:
        raise ConfigError("missing [model] id")
    if model not in MODELS:
        raise ConfigError(f"unknown model id {model!r}")
    try:
        config = TrainConfig.for_model(model, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if out_dir is None:
        out_dir = Path("runs") / f"{model}_{config.algorithm}"
    if not out_dir.is_absolute():
        out_dir = Path(path).resolve().parent / out_dir
    return config, out_dir


def _defaults_help() -> str:
    lines = ["config sections and defaults (aircraft / vehicle where they differ):"]
    air, veh = TrainConfig.for_model("aircraft"), TrainConfig.for_model("vehicle")
    for section, keys in SECTIONS.items():
        lines.append(f"  [{section}]")
        for key, target in keys.items():
            if target is None:
                lines.append(f"    {key} = runs/<model>_<algorithm>")
            elif target == "model":
                lines.append(f"    {key} = (required) {' | '.join(sorted(MODELS))}")
            else:
                a, v = getattr(air, target), getattr(veh, target)
                shown = a if a == v else f"{a} / {v}"
                lines.append(f"    {key} = {shown}")
    return "\n".join(lines)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    try:
        config, out_dir = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.algorithm is not None:
            overrides["algorithm"] = args.algorithm
        if args.output is not None:
            out_dir = Path(args.output)
        if overrides:
            config = dataclasses.replace(config, **overrides)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = train(config, out_dir)
    last = result.rows[-1]
    print(f"output: {out_dir}")
    print(f"updates: {result.state.updates}")
    print(f"warmup_exit_updates: {result.warmup_exit}")
    print(f"final mean_abs_H: {last.mean_abs_H}")
    if last.e_pi_abs is not None:
        print(f"final e_pi_abs: {last.e_pi_abs}  e_V_abs: {last.e_V_abs}")
    if result.abort_reason:
        print(f"aborted: {result.abort_reason}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _load_checkpoint(path, model_id):
    ckpt = Checkpoint.load(path)
    if ckpt.model != model_id:
        raise ValueError(f"checkpoint was trained on {ckpt.model!r}, not {model_id!r}")
    model = make_model(model_id)
    for net in (ckpt.value, ckpt.policy):
        if net.shift.shape != (model.n,):
            raise ValueError("checkpoint input size does not match the model")
    u = np.asarray(ckpt.policy(model.x_e))
    if u.shape != (model.m,):
        raise ValueError("checkpoint policy output size does not match the model")
    return ckpt, model


def cmd_eval(args) -> int:
    if args.states < 1:
        print("error: --states must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        ckpt, model = _load_checkpoint(args.checkpoint, args.model)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    X = model.sample_states(args.states, rng)
    h = HamiltonianEval(model, ckpt.value, ckpt.policy, eta=0.1)
    report = {"model": model.name, "states": args.states,
              "mean_abs_H": mean_abs_hamiltonian(h, X)}
    if model.linear:
        sol = solve_care(LqrProblem(model.A, model.B, model.Q, model.R))
        report["e_pi"], report["e_pi_abs"] = policy_error(ckpt.policy, lambda x: -x @ sol.K.T, X)
        report["e_V"], report["e_V_abs"] = value_error(
            ckpt.value, lambda x: np.einsum("bi,ij,bj->b", x, sol.P, x), X)
    adm = h.admissibility_check(X, horizon=args.horizon, dt=args.dt)
    report.update({f"admissibility.{k}": v for k, v in adm.items()})
    x0 = model.sample_states(1, rng)[0]
    traj = rollout(model, ckpt.policy, x0, args.horizon, args.dt)
    report["rollout.x0"] = " ".join(repr(float(v)) for v in x0)
    report["rollout.C"] = float(traj.cost)
    report["rollout.truncated"] = bool(traj.truncated)
    report["rollout.settle_time"] = float(settle_time(model, traj))
    for key, val in report.items():
        print(f"{key}: {val}")
    return EXIT_OK


def cmd_riccati(args) -> int:
    model = make_model(args.model)
    if not model.linear:
        print(f"error: {args.model} is not a linear model", file=sys.stderr)
        return EXIT_USAGE
    problem = LqrProblem(model.A, model.B, model.Q, model.R)
    try:
        sol = solve_care(problem)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    fmt = {"float_kind": lambda v: f"{v: .6f}"}
    print("P =")
    print(np.array2string(sol.P, formatter=fmt))
    print("K =")
    print(np.array2string(sol.K, formatter=fmt))
    print(f"residual = {sol.residual:.3e}")
    print(f"iterations = {sol.iterations}")
    eig = np.linalg.eigvals(sol.closed_loop(problem))
    print("closed-loop eigenvalues =", " ".join(f"{e.real:.6f}{e.imag:+.6f}j" for e in eig))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        ckpt, model = _load_checkpoint(args.checkpoint, args.model)
        x0 = np.array([float(v) for v in args.x0.split(",")])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if x0.shape != (model.n,) or not model.in_omega(x0):
        print(f"error: x0 must be {model.n} numbers inside the state box", file=sys.stderr)
        return EXIT_USAGE
    if not args.dt > 0 or args.horizon < args.dt:
        print("error: need dt > 0 and horizon >= dt", file=sys.stderr)
        return EXIT_USAGE
    traj = rollout(model, ckpt.policy, x0, args.horizon, args.dt)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"x{i + 1}" for i in range(model.n)),
                *(f"u{i + 1}" for i in range(model.m)), "l"])
    for t, x, u, l in zip(traj.t, traj.x, traj.u, traj.l):
        w.writerow([repr(float(t)), *map(repr, map(float, x)), *map(repr, map(float, u)),
                    repr(float(l))])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    print(f"C = {float(traj.cost)!r}  truncated = {bool(traj.truncated)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgpi", description="Continuous-time HJB solver (DGPI / DPI).")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train value and policy networks from a config file",
                       epilog=_defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--algorithm", choices=("dgpi", "dpi"), default=None)
    p.add_argument("--output", default=None, help="override the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report metrics for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--model", required=True, choices=sorted(MODELS))
    p.add_argument("--states", type=int, default=500, help="test states (default 500)")
    p.add_argument("--seed", type=int, default=0, help="test-state seed (default 0)")
    p.add_argument("--horizon", type=float, default=20.0, help="rollout horizon, s (default 20)")
    p.add_argument("--dt", type=float, default=0.01, help="rollout step, s (default 0.01)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("riccati", help="solve the LQR Riccati equation for a linear model")
    p.add_argument("--model", default="aircraft", choices=sorted(MODELS))
    p.set_defaults(func=cmd_riccati)

    p = sub.add_parser("simulate", help="write a closed-loop trajectory CSV")
    p.add_argument("checkpoint")
    p.add_argument("--model", required=True, choices=sorted(MODELS))
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--horizon", type=float, default=20.0, help="seconds (default 20)")
    p.add_argument("--dt", type=float, default=0.01, help="seconds (default 0.01)")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
