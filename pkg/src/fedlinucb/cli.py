"""Command-line interface: run / sweep / bias-demo / check.

Config is a single JSON document (see README for the schema and the
plain-text schedule/arm file grammar).  All emitted numbers use 12
significant digits in fixed notation, and every command is deterministic
given its config: rerunning writes byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import run_invariant_suite, bias_demo
from .core import HyperParams, ProblemInstance, theoretical_comm_bound, theoretical_regret_bound
from .environment import (
    Schedule,
    gen_instance,
    gen_schedule,
    load_arms_file,
    load_schedule_file,
)
from .simulator import CommBoundError, run_fedlinucb, run_independent_oful

TRACE_COLUMNS = ["t", "agent", "arm_index", "reward", "inst_regret", "cum_regret", "comm", "det_server"]

SWEEP_AXES = ("T", "M", "alpha", "d")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def _fmt(x: float) -> str:
    """12 significant digits, fixed notation."""
    return np.format_float_positional(float(x), precision=12, unique=False,
                                      fractional=False, trim="0")


def _render_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats through :func:`_fmt`."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [
            f"{inner}{json.dumps(str(k))}: {_render_json(v, indent + 1)}"
            for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))
        ]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [f"{inner}{_render_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    return json.dumps(str(obj))


def resolve_config(raw: dict) -> dict:
    """Apply documented defaults and validate; returns the fully-resolved config.

    Defaults: alpha = 1/M^2, lambda = 1/S^2, beta = "auto", delta = 0.01.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = copy.deepcopy(raw)
    inst = cfg.get("instance")
    sched = cfg.get("schedule")
    if not isinstance(inst, dict) or not isinstance(sched, dict):
        raise ConfigError("config requires 'instance' and 'schedule' objects")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("'params' must be an object")

    kind = inst.get("kind")
    if kind not in ("random-sphere", "hypercube-corners", "bias-demo", "fixed-list"):
        raise ConfigError(f"unknown instance kind {kind!r}")
    inst.setdefault("S", 1.0)
    inst.setdefault("L", 1.0)
    inst.setdefault("R", 1.0)
    inst.setdefault("seed", 0)
    inst.setdefault("noise", "rademacher-scaled" if kind == "bias-demo" else "gaussian")
    if kind in ("random-sphere", "hypercube-corners"):
        if "d" not in inst or "K" not in inst:
            raise ConfigError(f"{kind} instance requires 'd' and 'K'")
        if int(inst["d"]) < 1 or int(inst["K"]) < 1:
            raise ConfigError("instance d and K must be >= 1")
    if kind == "fixed-list" and "arms_file" not in inst:
        raise ConfigError("fixed-list instance requires 'arms_file'")
    for key in ("S", "L", "R"):
        if float(inst[key]) < 0 or (key != "R" and float(inst[key]) == 0):
            raise ConfigError(f"instance {key} out of range")

    sched_kind = sched.setdefault("kind", "round-robin")
    if sched_kind not in ("round-robin", "iid-uniform", "block", "explicit-list"):
        raise ConfigError(f"unknown schedule kind {sched_kind!r}")
    if "M" not in sched:
        raise ConfigError("schedule requires 'M'")
    if int(sched["M"]) < 1:
        raise ConfigError("schedule M must be >= 1")
    sched.setdefault("seed", 0)
    if sched_kind == "explicit-list":
        if "file" not in sched:
            raise ConfigError("explicit-list schedule requires 'file'")
    elif "T" not in sched:
        raise ConfigError("schedule requires 'T'")
    if "T" in sched and int(sched["T"]) < 0:
        raise ConfigError("schedule T must be >= 0")

    S = float(inst["S"])
    M = int(sched["M"])
    params.setdefault("lambda", 1.0 / (S * S))
    params.setdefault("alpha", 1.0 / (M * M))
    params.setdefault("beta", "auto")
    params.setdefault("delta", 0.01)
    params.setdefault("estimate_mode", "lazy")
    if float(params["lambda"]) <= 0:
        raise ConfigError("lambda must be positive")
    if float(params["alpha"]) <= 0:
        raise ConfigError("alpha must be positive")
    if not (0.0 < float(params["delta"]) < 1.0):
        raise ConfigError(f"delta must lie in (0, 1), got {params['delta']}")
    beta = params["beta"]
    if beta != "auto":
        try:
            beta_val = float(beta)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"beta must be 'auto' or a number, got {beta!r}") from exc
        if beta_val < 0:
            raise ConfigError("fixed beta must be nonnegative")
    if params["estimate_mode"] not in ("lazy", "eager"):
        raise ConfigError(f"unknown estimate_mode {params['estimate_mode']!r}")

    cfg["params"] = params
    cfg.setdefault("replications", 1)
    if int(cfg["replications"]) < 1:
        raise ConfigError("replications must be >= 1")
    return cfg


def read_config_raw(path: str) -> dict:
    """Load the JSON document without applying defaults (sweeps resolve per cell)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def load_config(path: str) -> dict:
    return resolve_config(read_config_raw(path))


def build_instance(cfg: dict) -> ProblemInstance:
    inst = cfg["instance"]
    kind = inst["kind"]
    arms = load_arms_file(inst["arms_file"]) if kind == "fixed-list" else None
    return gen_instance(
        kind,
        d=int(inst["d"]) if "d" in inst else None,
        K=int(inst["K"]) if "K" in inst else None,
        S=float(inst["S"]),
        L=float(inst["L"]),
        R=float(inst["R"]),
        seed=int(inst["seed"]),
        arms=arms,
        noise=inst["noise"],
    )


def build_schedule(cfg: dict) -> Schedule:
    sched = cfg["schedule"]
    kind = sched["kind"]
    if kind == "explicit-list":
        return load_schedule_file(sched["file"], M=int(sched["M"]))
    return gen_schedule(kind, M=int(sched["M"]), T=int(sched["T"]), seed=int(sched["seed"]))


def build_hyperparams(cfg: dict) -> HyperParams:
    params = cfg["params"]
    beta = params["beta"]
    return HyperParams(
        lam=float(params["lambda"]),
        alpha=float(params["alpha"]),
        delta=float(params["delta"]),
        beta_mode="auto" if beta == "auto" else "fixed",
        beta_value=None if beta == "auto" else float(beta),
        estimate_mode=params["estimate_mode"],
    )


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_trace_csv(trace, path: Path) -> None:
    rows = [",".join(TRACE_COLUMNS)]
    for i, rec in enumerate(trace.records):
        rows.append(
            ",".join(
                [
                    str(rec.t),
                    str(rec.agent),
                    str(rec.arm_index),
                    _fmt(rec.reward),
                    _fmt(rec.inst_regret),
                    _fmt(trace.cum_regret[i]),
                    str(rec.comm),
                    _fmt(rec.det_server),
                ]
            )
        )
    _write_text(path, "\n".join(rows) + "\n")


def summarize(trace, inst: ProblemInstance, hp: HyperParams, cfg: dict) -> dict:
    M = int(trace.params["M"])
    T = int(trace.params["T"])
    return {
        "total_regret": float(trace.cum_regret[-1]) if len(trace.cum_regret) else 0.0,
        "comm_count": trace.comm_count,
        "switch_count": trace.switch_count,
        "beta_used": trace.beta_used,
        "bound_regret": theoretical_regret_bound(inst, hp, M, T, trace.beta_used),
        "bound_comm": theoretical_comm_bound(inst.dim, M, hp.alpha, hp.lam, inst.L, T),
        "epoch_starts": [[i, tau] for i, tau in trace.epoch_starts],
        "config_echo": {
            "instance": cfg["instance"],
            "params": cfg["params"],
            "schedule": cfg["schedule"],
            "replications": cfg["replications"],
        },
    }


def cmd_run(cfg: dict, out_dir: str) -> int:
    """One run: writes trace.csv and summary.json under out_dir."""
    inst = build_instance(cfg)
    schedule = build_schedule(cfg)
    hp = build_hyperparams(cfg)
    trace = run_fedlinucb(inst, schedule, hp)
    out = Path(out_dir)
    write_trace_csv(trace, out / "trace.csv")
    summary = summarize(trace, inst, hp, cfg)
    _write_text(out / "summary.json", _render_json(summary) + "\n")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    print(
        f"total_regret={_fmt(summary['total_regret'])} comm_count={trace.comm_count} "
        f"beta={_fmt(trace.beta_used)}"
    )
    return 0


def _derive_seed(base: int, cell: int, rep: int) -> int:
    return int(np.random.SeedSequence(entropy=(int(base), cell, rep)).generate_state(1)[0])


def _apply_axis(raw: dict, axis: str, value) -> dict:
    cell = copy.deepcopy(raw)
    if axis == "T":
        cell["schedule"]["T"] = int(value)
    elif axis == "M":
        cell["schedule"]["M"] = int(value)
        # a defaulted alpha tracks the cell's M
        if "params" not in raw or "alpha" not in raw.get("params", {}):
            cell.setdefault("params", {})["alpha"] = 1.0 / (int(value) ** 2)
    elif axis == "alpha":
        cell.setdefault("params", {})["alpha"] = float(value)
    elif axis == "d":
        cell["instance"]["d"] = int(value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    return cell


def _sweep_cell(task: tuple) -> dict:
    raw, axis, value, cell_idx, rep, baseline = task
    cell_raw = _apply_axis(raw, axis, value)
    cell_raw["instance"]["seed"] = _derive_seed(int(cell_raw["instance"].get("seed", 0)), cell_idx, rep)
    cell_raw.setdefault("schedule", {})
    cell_raw["schedule"]["seed"] = _derive_seed(int(cell_raw["schedule"].get("seed", 0)), cell_idx, rep)
    cfg = resolve_config(cell_raw)
    inst = build_instance(cfg)
    schedule = build_schedule(cfg)
    hp = build_hyperparams(cfg)
    trace = run_fedlinucb(inst, schedule, hp)
    per_round = [rec.inst_regret for rec in trace.records]
    row = {
        "axis": axis,
        "value": value,
        "replication": rep,
        "instance_seed": cfg["instance"]["seed"],
        "schedule_seed": cfg["schedule"]["seed"],
        "total_regret": float(trace.cum_regret[-1]) if len(trace.cum_regret) else 0.0,
        "mean_round_regret": float(np.mean(per_round)) if per_round else 0.0,
        "max_round_regret": float(np.max(per_round)) if per_round else 0.0,
        "comm_count": trace.comm_count,
        "switch_count": trace.switch_count,
        "beta_used": trace.beta_used,
        "bound_regret": theoretical_regret_bound(
            inst, hp, int(trace.params["M"]), int(trace.params["T"]), trace.beta_used
        ),
        "bound_comm": theoretical_comm_bound(
            inst.dim, int(trace.params["M"]), hp.alpha, hp.lam, inst.L, int(trace.params["T"])
        ),
    }
    if baseline:
        base_trace = run_independent_oful(inst, schedule, hp)
        row["baseline_total_regret"] = (
            float(base_trace.cum_regret[-1]) if len(base_trace.cum_regret) else 0.0
        )
        row["baseline_comm_count"] = base_trace.comm_count
    return row


def cmd_sweep(
    cfg_raw: dict,
    axis: str,
    values: list,
    out_dir: str,
    parallel: int = 1,
    baseline: bool = False,
) -> int:
    """Grid sweep along one axis; one CSV row per (cell, replication)."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep requires a nonempty value list")
    resolved = resolve_config(cfg_raw)  # fail fast on a bad base config
    reps = int(resolved["replications"])
    tasks = [
        (cfg_raw, axis, value, ci, rep, baseline)
        for ci, value in enumerate(values)
        for rep in range(reps)
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(task) for task in tasks]
    rows.sort(key=lambda r: (values.index(r["value"]), r["replication"]))

    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            v = row[key]
            cells.append(_fmt(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    out = Path(out_dir)
    _write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_bias_demo(m_agents: int, beta: float, alpha: float, seed: int, out_dir: str) -> int:
    """Run the two-round bias demonstration in both estimate modes."""
    reports = {}
    for mode in ("eager", "lazy"):
        rep = bias_demo(m_agents, beta_fixed=beta, alpha=alpha, seed=seed, mode=mode)
        reports[mode] = {
            "predicted_reward_arm_a": rep.predicted_reward_arm_a,
            "upload_fraction": rep.upload_fraction,
            "n_agents": rep.n_agents,
        }
        print(
            f"{mode}: predicted reward of the long arm = {_fmt(rep.predicted_reward_arm_a)}, "
            f"upload fraction = {_fmt(rep.upload_fraction)}"
        )
    out = Path(out_dir)
    _write_text(out / "bias_demo.json",
                _render_json({"beta": beta, "alpha": alpha, "seed": seed, "modes": reports}) + "\n")
    print(f"wrote {out / 'bias_demo.json'}")
    return 0


def cmd_check(cfg: dict, out_dir: str) -> int:
    """Run the config once (with payload capture) and evaluate every invariant."""
    inst = build_instance(cfg)
    schedule = build_schedule(cfg)
    hp = build_hyperparams(cfg)
    trace = run_fedlinucb(inst, schedule, hp, debug=True)
    reports = run_invariant_suite(trace, inst, hp)
    failed = [r for r in reports if not r.satisfied]
    for r in reports:
        status = "PASS" if r.satisfied else "FAIL"
        print(f"{status} {r.name}: empirical={_fmt(r.empirical)} bound={_fmt(r.bound)} "
              f"slack={_fmt(r.slack)}")
    payload = {
        "checks": [
            {
                "name": r.name,
                "empirical": r.empirical,
                "bound": r.bound,
                "satisfied": r.satisfied,
                "slack": r.slack,
            }
            for r in reports
        ],
        "all_passed": not failed,
    }
    out = Path(out_dir)
    _write_text(out / "check_report.json", _render_json(payload) + "\n")
    print(f"wrote {out / 'check_report.json'}")
    if failed:
        print(f"{len(failed)} invariant(s) failed: {', '.join(r.name for r in failed)}",
              file=sys.stderr)
        return 1
    return 0


def _parse_axis_values(axis: str, text: str) -> list:
    values = [tok for tok in text.split(",") if tok.strip()]
    if axis in ("T", "M", "d"):
        return [int(tok) for tok in values]
    return [float(tok) for tok in values]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedlinucb",
        description="Asynchronous federated linear UCB simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        if config_required:
            p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the instance master seed")
        p.add_argument("--parallel", type=int, default=1,
                       help="worker processes for replications (sweep only)")

    run_p = sub.add_parser("run", help="single run: trace.csv + summary.json")
    add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="grid sweep along one axis")
    add_common(sweep_p)
    sweep_p.add_argument("--axis", choices=SWEEP_AXES, help="sweep axis (overrides config)")
    sweep_p.add_argument("--values", help="comma-separated cell values (overrides config)")
    sweep_p.add_argument("--baseline", action="store_true",
                         help="also run the no-communication baseline per cell")

    bias_p = sub.add_parser("bias-demo", help="two-round server-bias demonstration")
    bias_p.add_argument("--agents", type=int, default=10000)
    bias_p.add_argument("--beta", type=float, default=0.5)
    bias_p.add_argument("--alpha", type=float, default=10.5)
    bias_p.add_argument("--seed", type=int, default=0)
    bias_p.add_argument("--out", default="out")

    check_p = sub.add_parser("check", help="run every invariant check on a config")
    add_common(check_p)

    args = parser.parse_args(argv)
    try:
        if args.command == "bias-demo":
            return cmd_bias_demo(args.agents, args.beta, args.alpha, args.seed, args.out)
        raw = read_config_raw(args.config)
        if args.seed is not None:
            raw.setdefault("instance", {})["seed"] = int(args.seed)
        if args.command == "run":
            return cmd_run(resolve_config(raw), args.out)
        if args.command == "sweep":
            sweep_cfg = raw.get("sweep") or {}
            axis = args.axis or sweep_cfg.get("axis")
            if axis is None:
                raise ConfigError("sweep needs --axis or a config 'sweep.axis'")
            if args.values is not None:
                values = _parse_axis_values(axis, args.values)
            elif "values" in sweep_cfg:
                values = list(sweep_cfg["values"])
            else:
                raise ConfigError("sweep needs --values or a config 'sweep.values'")
            baseline = bool(args.baseline or sweep_cfg.get("baseline", False))
            return cmd_sweep(raw, axis, values, args.out, parallel=args.parallel,
                             baseline=baseline)
        if args.command == "check":
            return cmd_check(resolve_config(raw), args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CommBoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
