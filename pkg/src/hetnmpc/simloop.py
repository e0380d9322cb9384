"""Closed-loop MPC simulation of the crane.

The plant is the nominal ODE integrated with classical RK4. Optionally the
controller only sees positions, and velocities are estimated by a discrete
band-limited differentiator running at a faster rate than the controller.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .ipm import IpmConfig, format_float, init_point, ipm_solve, shift_warm_start
from .model import OdeModel
from .transcription import OcpSpec, build_nlp, crane_terminal_cost, make_tableau

TRACE_COLUMNS = ("t", "x_c", "v_c", "x_l", "v_l", "theta", "theta_dot", "u_c", "u_l",
                 "r_eq_inf", "compl", "alpha_last")
# crane state indices: measured positions and the velocities derived from them
POSITIONS = (0, 2, 4)
VELOCITIES = (1, 3, 5)


def plant_step(model: OdeModel, state, inp, T_s: float, substeps: int = 10) -> np.ndarray:
    """Advance ``state`` by ``T_s`` with ``substeps`` RK4 steps at constant input."""
    if substeps < 1:
        raise ValueError(f"substeps must be at least 1, got {substeps}")
    x = np.array(state, dtype=float)
    u = np.asarray(inp, dtype=float)
    h = T_s / substeps
    for _ in range(substeps):
        k1 = model.rhs(x, u)
        k2 = model.rhs(x + 0.5 * h * k1, u)
        k3 = model.rhs(x + 0.5 * h * k2, u)
        k4 = model.rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@dataclass
class FilterState:
    """Transposed direct-form II biquad, one pair of delay registers per channel."""

    b: np.ndarray
    a: np.ndarray
    T: float
    s1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.a)


def tustin_filter(omega: float = 20 * np.pi, zeta: float = 0.7, T_est: float = 0.01,
                  channels: int = 1) -> FilterState:
    """Tustin discretization of ``s w^2 / (s^2 + 2 zeta w s + w^2)``."""
    if not (omega > 0 and T_est > 0):
        raise ValueError("omega and T_est must be positive")
    K = 2.0 / T_est
    w2 = omega * omega
    a0 = K * K + 2 * zeta * omega * K + w2
    b = np.array([w2 * K, 0.0, -w2 * K]) / a0
    a = np.array([a0, 2 * w2 - 2 * K * K, K * K - 2 * zeta * omega * K + w2]) / a0
    return FilterState(b, a, T_est, np.zeros(channels), np.zeros(channels))


def filter_reset(fs: FilterState, value, rate=None) -> None:
    """Set the registers to the steady state of the ramp ``value + rate * t``."""
    c = np.atleast_1d(np.asarray(value, dtype=float))
    v = np.zeros_like(c) if rate is None else np.atleast_1d(np.asarray(rate, dtype=float))
    b0, b1, _ = fs.b
    a1 = fs.a[1]
    fs.s1 = v - b0 * c
    fs.s2 = v * (1 + a1) - b0 * (c + v * fs.T) - b1 * c


def filter_step(fs: FilterState, sample) -> np.ndarray:
    x = np.atleast_1d(np.asarray(sample, dtype=float))
    if x.shape != fs.s1.shape:
        raise DimensionError(f"sample: expected {fs.s1.shape[0]} channels, got {x.shape}")
    b0, b1, b2 = fs.b
    _, a1, a2 = fs.a
    y = b0 * x + fs.s1
    fs.s1 = b1 * x - a1 * y + fs.s2
    fs.s2 = b2 * x - a2 * y
    return y


@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    r_eq_inf: np.ndarray
    compl: np.ndarray
    alpha_last: np.ndarray
    events: list = field(default_factory=list)
    logs: list = field(default_factory=list, repr=False)

    def h_T_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(crane_terminal_cost(x)) for x in self.x])


def closed_loop(model: OdeModel, ocp_spec: OcpSpec, ipm_cfg: IpmConfig | None, x_hat, N_sim: int,
                use_filter: bool = False, tableau=None, plant: OdeModel | None = None,
                substeps: int = 10, filter_params: dict | None = None, keep_logs: bool = False) -> SimTrace:
    """Simulate ``N_sim`` control samples from ``x_hat``.

    Each sample solves the OCP from the (estimated) state, warm-started from
    the previous solution shifted by one stage, and applies the first input
    for one sampling period. ``plant`` defaults to ``model``. With
    ``use_filter`` the controller sees the true positions and filtered
    velocity estimates; the filter ticks ``substeps`` times per sample.
    """
    ipm_cfg = ipm_cfg or IpmConfig()
    tableau = tableau or make_tableau("trapezoidal")
    plant = plant or model
    nlp = build_nlp(ocp_spec, model, tableau)
    L = nlp.layout
    x = np.array(x_hat, dtype=float)
    if x.shape != (model.n,):
        raise DimensionError(f"x_hat: expected length {model.n}, got {x.shape}")
    T_s = ocp_spec.T_s
    u_lb, u_ub = nlp.lb[L.u(0)], nlp.ub[L.u(0)]

    fs = None
    if use_filter:
        fp = dict(filter_params or {})
        fp.setdefault("T_est", T_s / substeps)
        if not np.isclose(fp["T_est"] * substeps, T_s):
            raise ValueError("filter rate must divide the control period into `substeps` ticks")
        fs = tustin_filter(channels=len(POSITIONS), **fp)
        filter_reset(fs, x[list(POSITIONS)], x[list(VELOCITIES)])
    est = x.copy()

    xs, us, req, cpl, alph, logs, events = [x.copy()], [], [], [], [], [], []
    state = None
    for k in range(N_sim):
        nlp.x_hat = est.copy()
        start = init_point(nlp) if state is None else shift_warm_start(nlp, state)
        state, log = ipm_solve(nlp, ipm_cfg, init=start)
        u = state.theta[L.u(0)].copy()
        clipped = np.clip(u, u_lb, u_ub)
        if np.any(clipped != u):
            events.append((k, "input_clipped"))
        u = clipped
        if np.any(u <= u_lb) or np.any(u >= u_ub):
            events.append((k, "input_saturated"))
        if fs is None:
            x = plant_step(plant, x, u, T_s, substeps)
            est = x.copy()
        else:
            h = T_s / substeps
            for _ in range(substeps):
                x = plant_step(plant, x, u, h, 1)
                vel = filter_step(fs, x[list(POSITIONS)])
            est = x.copy()
            est[list(VELOCITIES)] = vel
        xs.append(x.copy())
        us.append(u)
        req.append(log[-1].r_eq_inf)
        cpl.append(log[-1].compl)
        alph.append(log[-2].alpha if len(log) > 1 else np.nan)
        if keep_logs:
            logs.append(log)
    t = T_s * np.arange(N_sim + 1)
    return SimTrace(t, np.array(xs), np.array(us).reshape(N_sim, model.m), np.array(req), np.array(cpl),
                    np.array(alph), events, logs)


def closed_loop_cost(trace: SimTrace, Q, R, S=None) -> float:
    """``sum_k 0.5 x'Qx + 0.5 u'Ru + x'Su`` over the samples that have an input."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = trace.x.shape[1], trace.u.shape[1]
    S = np.zeros((n, m)) if S is None else np.atleast_2d(np.asarray(S, dtype=float))
    if Q.shape != (n, n) or R.shape != (m, m) or S.shape != (n, m):
        raise DimensionError(f"weights must be {n}x{n}, {m}x{m}, {n}x{m}; got {Q.shape}, {R.shape}, {S.shape}")
    X = trace.x[: len(trace.u)]
    U = trace.u
    return float(0.5 * np.einsum("ki,ij,kj->", X, Q, X) + 0.5 * np.einsum("ki,ij,kj->", U, R, U)
                 + np.einsum("ki,ij,kj->", X, S, U))


def trace_to_csv(trace: SimTrace, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    K = len(trace.u)
    nan = float("nan")
    for k in range(len(trace.t)):
        u = trace.u[k] if k < K else (nan, nan)
        diag = (trace.r_eq_inf[k], trace.compl[k], trace.alpha_last[k]) if k < K else (nan, nan, nan)
        w.writerow([format_float(v) for v in (trace.t[k], *trace.x[k], *u, *diag)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
