"""Command-line entry point: ``hetnmpc {solve,simulate,schedule,hw-report}``.

Configuration is a JSON object; every key is optional and unknown keys are
rejected. Outputs are written only after a command has fully succeeded.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, HetNmpcError
from .hwmodel import (HwConfig, latency_to_csv, matvec_latency, memory_report, memory_to_csv,
                      tradeoff_sweep)
from .ipm import IpmConfig, init_point, ipm_solve, log_to_csv
from .kkt import mac_coords, pattern_from_nlp, read_pattern_csv
from .minres import KktSolveConfig
from .model import CraneParams, crane_model
from .sched import schedule_bnb, schedule_greedy, schedule_to_csv, summary_to_csv
from .simloop import closed_loop, closed_loop_cost, trace_to_csv
from .transcription import build_nlp, crane_ocp, crane_terminal_cost, make_tableau

log = logging.getLogger("hetnmpc")

DEFAULTS = {
    "model": {"name": "crane", "tau_c": 0.13, "tau_l": 0.07, "gravity": 9.81, "sign_convention": "physical"},
    "tableau": "trapezoidal",
    "N": 10,
    "T_s": 0.1,
    "x_hat": [0.5, 0.0, 0.7, 0.0, -0.2, -0.5],
    "u_bound": 0.15,
    "ipm": {"n_iter": 15, "sigma": 0.1, "gamma": 0.995, "mu_mode": "averaged", "regularization": 0.0,
            "tol": None,
            "linear": {"rtol": 1e-8, "max_iter": None, "fixed_count": False, "prescale": True,
                       "precision": "double", "method": "minres"}},
    "sim": {"duration": 20.0, "use_filter": False, "substeps": 10, "plant_tau_scale": 1.0,
            "omega": 20 * np.pi, "zeta": 0.7, "Q_diag": [1.0] * 6, "R_diag": [1.0, 1.0]},
    "schedule": {"pattern_file": None, "block_id": 1, "coords": None, "time_limit": 10.0},
    "hw": {"adder_latency": 6, "multiplier_latency": 5, "P": None, "P_range": None, "clock_mhz": None},
    "seed": 0,
    "out_dir": "out",
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    if not isinstance(over, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = dict(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        out[k] = _merge(base[k], v, where) if isinstance(base[k], dict) else v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults updated by the JSON file at ``path`` and then by ``overrides``."""
    cfg = DEFAULTS
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def _int(cfg, key, lo=None, path=""):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or (lo is not None and v < lo):
        raise ConfigError(f"{path}{key}: expected an integer >= {lo}, got {v!r}")
    return v


def _pos(cfg, key, path=""):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{path}{key}: expected a positive number, got {v!r}")
    return float(v)


def validate_config(cfg: dict) -> None:
    if cfg["model"]["name"] != "crane":
        raise ConfigError(f"model.name: only 'crane' is available, got {cfg['model']['name']!r}")
    _int(cfg, "N", 1)
    _pos(cfg, "T_s")
    _pos(cfg, "u_bound")
    _int(cfg, "seed", 0)
    x_hat = cfg["x_hat"]
    if not (isinstance(x_hat, list) and len(x_hat) == 6 and all(isinstance(v, (int, float)) for v in x_hat)):
        raise ConfigError("x_hat: expected a list of 6 numbers")
    if x_hat[2] < CraneParams.x_l_min:
        raise ConfigError(f"x_hat: rope length {x_hat[2]} is below the model limit {CraneParams.x_l_min}")
    _int(cfg["ipm"], "n_iter", 0, "ipm.")
    _int(cfg["hw"], "adder_latency", 1, "hw.")
    _int(cfg["hw"], "multiplier_latency", 1, "hw.")
    _pos(cfg["sim"], "duration", "sim.")
    _int(cfg["sim"], "substeps", 1, "sim.")
    _pos(cfg["sim"], "plant_tau_scale", "sim.")
    for key in ("Q_diag", "R_diag"):
        if not isinstance(cfg["sim"][key], list):
            raise ConfigError(f"sim.{key}: expected a list")
    try:
        _model(cfg)
        make_tableau(cfg["tableau"])
        _ipm(cfg)
        _hw(cfg, 1)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _model(cfg, tau_scale: float = 1.0):
    m = cfg["model"]
    return crane_model(CraneParams(m["tau_c"] * tau_scale, m["tau_l"] * tau_scale, m["gravity"],
                                   m["sign_convention"]))


def _ipm(cfg) -> IpmConfig:
    c = dict(cfg["ipm"])
    c["linear"] = KktSolveConfig(**c["linear"])
    return IpmConfig(**c)


def _hw(cfg, P: int) -> HwConfig:
    h = cfg["hw"]
    return HwConfig(h["adder_latency"], h["multiplier_latency"], P, h["clock_mhz"])


def _nlp(cfg):
    spec = crane_ocp(N=cfg["N"], T_s=cfg["T_s"], x_hat=cfg["x_hat"], u_bound=cfg["u_bound"])
    return build_nlp(spec, _model(cfg), make_tableau(cfg["tableau"]))


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def cmd_solve(cfg) -> dict:
    nlp = _nlp(cfg)
    pattern = pattern_from_nlp(nlp, seed=cfg["seed"])
    ipm_cfg = _ipm(cfg)
    state, ipm_log = ipm_solve(nlp, ipm_cfg, init_point(nlp), pattern)
    L = nlp.layout
    last = ipm_log[-1]
    solution = {
        "x": [_floats(state.theta[L.x(k)]) for k in range(L.N + 1)],
        "u": [_floats(state.theta[L.u(k)]) for k in range(L.N)],
        "theta": _floats(state.theta),
        "nu": _floats(state.nu),
        "lam": _floats(state.lam),
        "r_eq_inf": last.r_eq_inf,
        "r_dual_inf": last.r_dual_inf,
        "compl": last.compl,
        "objective": float(nlp.objective(state.theta)),
    }
    log.info("solve: r_eq_inf=%.3e compl=%.3e", last.r_eq_inf, last.compl)
    return {"iterations.csv": log_to_csv(ipm_log), "solution.json": json.dumps(solution, indent=1) + "\n"}


def cmd_simulate(cfg) -> dict:
    s = cfg["sim"]
    N_sim = int(round(s["duration"] / cfg["T_s"]))
    spec = crane_ocp(N=cfg["N"], T_s=cfg["T_s"], x_hat=cfg["x_hat"], u_bound=cfg["u_bound"])
    trace = closed_loop(_model(cfg), spec, _ipm(cfg), cfg["x_hat"], N_sim, use_filter=s["use_filter"],
                        tableau=make_tableau(cfg["tableau"]), plant=_model(cfg, s["plant_tau_scale"]),
                        substeps=s["substeps"], filter_params={"omega": s["omega"], "zeta": s["zeta"]})
    h_T = float(np.linalg.norm(crane_terminal_cost(trace.x[-1])))
    try:
        cost = closed_loop_cost(trace, np.diag(s["Q_diag"]), np.diag(s["R_diag"]))
    except HetNmpcError as exc:
        raise ConfigError(str(exc)) from exc
    summary = {"samples": N_sim, "final_h_T_norm": h_T, "closed_loop_cost": cost,
               "max_abs_input": float(np.max(np.abs(trace.u))) if N_sim else 0.0,
               "events": [list(e) for e in trace.events]}
    log.info("simulate: final |h_T|=%.3e cost=%.6g", h_T, cost)
    return {"trace.csv": trace_to_csv(trace), "summary.json": json.dumps(summary, indent=1) + "\n"}


def _schedule_coords(cfg):
    sc = cfg["schedule"]
    if sc["coords"] is not None:
        coords = np.asarray(sc["coords"], dtype=int)
    elif sc["pattern_file"] is not None:
        try:
            coords = read_pattern_csv(sc["pattern_file"], sc["block_id"])
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"schedule.pattern_file: {exc}") from exc
    else:
        coords = pattern_from_nlp(_nlp(cfg), seed=cfg["seed"]).coords
    if coords.size == 0:
        raise ConfigError("schedule: the selected pattern is empty")
    return mac_coords(coords)


def cmd_schedule(cfg) -> dict:
    coords = _schedule_coords(cfg)
    greedy = schedule_greedy(coords)
    best = schedule_bnb(coords, cfg["schedule"]["time_limit"])
    L_add = cfg["hw"]["adder_latency"]
    log.info("schedule: greedy d=%d, best d=%d (%s, optimal=%s)", greedy.d_star, best.d_star, best.method,
             best.optimal)
    return {"schedule.csv": schedule_to_csv(best), "schedule_summary.csv": summary_to_csv(best, L_add)}


def cmd_hw_report(cfg) -> dict:
    pattern = pattern_from_nlp(_nlp(cfg), seed=cfg["seed"])
    h = cfg["hw"]
    P_range = h["P_range"] if h["P_range"] is not None else list(range(1, pattern.N_blocks + 1))
    if h["P"] is not None:
        P_range = [h["P"]]
    bad = [P for P in P_range if not (isinstance(P, int) and 1 <= P <= pattern.N_blocks)]
    if bad:
        raise ConfigError(f"hw.P_range: values must be integers in [1, {pattern.N_blocks}], got {bad}")
    sched = schedule_greedy(mac_coords(pattern.coords))
    reports = [matvec_latency(pattern, sched, _hw(cfg, P)) for P in P_range]
    unscheduled = [matvec_latency(pattern, None, _hw(cfg, P)) for P in P_range]
    sweep = tradeoff_sweep(pattern, _hw(cfg, 1), P_range, sched)
    mem = memory_report(pattern)
    log.info("hw-report: dense_band/block_sparse_scheduled = %.2f",
             mem.ratio("dense_band", "block_sparse_scheduled"))
    sweep_csv = "P,total_cycles,mac_units\n" + "".join(f"{p},{c},{m}\n" for p, c, m in sweep)
    return {"latency_scheduled.csv": latency_to_csv(reports),
            "latency_unscheduled.csv": latency_to_csv(unscheduled),
            "tradeoff.csv": sweep_csv,
            "memory.csv": memory_to_csv(mem)}


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "schedule": cmd_schedule, "hw-report": cmd_hw_report}


def _write_outputs(out_dir: Path, files: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out_dir / f".{name}.tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out_dir / name)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetnmpc", description="Interior-point NMPC solver and hardware models.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    ap.add_argument("--seed", type=int, help="seed for randomized pattern sampling (overrides seed)")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="%(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        cfg = load_config(args.config, over)
        files = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (HetNmpcError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    _write_outputs(Path(args.out or cfg["out_dir"]), files)
    return 0


if __name__ == "__main__":
    sys.exit(main())
