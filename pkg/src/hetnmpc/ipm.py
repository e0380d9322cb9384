"""Fixed-iteration primal-dual interior-point method with a Gauss-Newton Hessian.

Per iteration: barrier update, KKT assembly, linear solve for
``(dtheta, dnu)``, recovery of ``dlambda``, fraction-to-boundary step and a
single-step-length update of all three iterates. No line search or trust
region is used.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleIterateError
from .kkt import (
    BlockPattern,
    assemble_kkt,
    check_strictly_feasible,
    default_regularization,
    kkt_residuals,
    pattern_from_nlp,
    stationarity,
)
from .minres import KktSolveConfig, solve_kkt
from .transcription import NlpProblem

MU_MODES = ("paper_literal", "averaged")
LOG_COLUMNS = ("iter", "mu", "alpha", "r_eq_inf", "r_dual_inf", "compl", "minres_relres")


@dataclass
class IpmConfig:
    n_iter: int = 15
    sigma: float = 0.1
    gamma: float = 0.995
    mu_mode: str = "averaged"
    regularization: float | None = 0.0
    linear: KktSolveConfig = field(default_factory=KktSolveConfig)
    tol: float | None = None

    def __post_init__(self):
        if not (0.0 < self.sigma <= 1.0):
            raise ValueError(f"sigma must lie in (0, 1], got {self.sigma}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.mu_mode not in MU_MODES:
            raise ValueError(f"mu_mode must be one of {MU_MODES}, got {self.mu_mode!r}")
        if int(self.n_iter) != self.n_iter or self.n_iter < 0:
            raise ValueError(f"n_iter must be a nonnegative integer, got {self.n_iter}")


@dataclass
class IpmRecord:
    iter: int
    mu: float
    alpha: float
    r_eq_inf: float
    r_dual_inf: float
    compl: float
    minres_relres: float
    minres_iterations: int = 0


@dataclass
class IpmState:
    theta: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    mu: float = 0.0
    alpha: float = 0.0
    log: list = field(default_factory=list)

    def copy(self) -> "IpmState":
        return IpmState(self.theta.copy(), self.nu.copy(), self.lam.copy(), self.mu, self.alpha, list(self.log))


def _push_inside(values, lb, ub, frac=1e-2):
    """Move values strictly inside ``[lb, ub]`` (boxes keep a relative margin)."""
    values = np.array(values, dtype=float)
    if np.any(lb >= ub):
        i = int(np.flatnonzero(lb >= ub)[0])
        raise InfeasibleIterateError(f"empty box at theta[{i}]: [{lb[i]}, {ub[i]}]")
    fl, fu = np.isfinite(lb), np.isfinite(ub)
    both = fl & fu
    ref = np.where(fl, lb, np.where(fu, ub, 0.0))
    margin = frac * (1.0 + np.abs(ref))
    margin[both] = frac * (ub[both] - lb[both])
    lo = np.full(values.shape, -np.inf)
    hi = np.full(values.shape, np.inf)
    lo[fl] = lb[fl] + margin[fl]
    hi[fu] = ub[fu] - margin[fu]
    return np.minimum(np.maximum(values, lo), hi)


def _consistent_stages(nlp: NlpProblem, x, u) -> np.ndarray:
    """Stage derivatives at ``(x, u)``: exact for explicit tableaus, else ``f_c(x, u)``."""
    tab, n, T_s = nlp.tableau, nlp.model.n, nlp.spec.T_s
    R = np.zeros((tab.l, n))
    if tab.explicit:
        for i in range(tab.l):
            R[i] = nlp.model.rhs(x + T_s * (tab.A[i, :i] @ R[:i]), u)
    else:
        R[:] = nlp.model.rhs(x, u)
    return R.ravel()


def init_point(nlp: NlpProblem, x_hat=None) -> IpmState:
    """Cold start: constant state trajectory, mid-box inputs, unit multipliers."""
    L = nlp.layout
    x_hat = nlp.x_hat if x_hat is None else np.asarray(x_hat, dtype=float)
    lb, ub = nlp.lb, nlp.ub
    theta = np.zeros(L.n_theta)
    both = np.isfinite(lb) & np.isfinite(ub)
    mid = np.zeros(L.n_theta)
    mid[both] = 0.5 * (lb[both] + ub[both])
    for k in range(L.N + 1):
        theta[L.x(k)] = x_hat
    for k in range(L.N):
        theta[L.u(k)] = mid[L.u(k)]
        theta[L.s(k)] = 0.0
    theta = _push_inside(theta, lb, ub)
    for k in range(L.N):
        theta[L.r(k)] = _consistent_stages(nlp, theta[L.x(k)], theta[L.u(k)])
    state = IpmState(theta, np.zeros(L.n_eq), np.ones(nlp.n_ineq))
    check_strictly_feasible(nlp.g(theta), state.lam)
    return state


def shift_warm_start(nlp: NlpProblem, prev: IpmState, lam_min: float = 1e-3) -> IpmState:
    """Shift a previous solution by one stage and restore strict feasibility."""
    L = nlp.layout
    theta = prev.theta.copy()
    nu = prev.nu.copy()
    S, E = L.stage_size, L.stage_eq_size
    theta[: (L.N - 1) * S] = prev.theta[S: L.N * S]
    nu[L.n: L.n + (L.N - 1) * E] = prev.nu[L.n + E: L.n + L.N * E]
    theta = _push_inside(theta, nlp.lb, nlp.ub)
    lam = np.maximum(prev.lam.copy(), lam_min)
    # multipliers are ordered by variable index, so stage blocks shift together
    per_stage = np.bincount(nlp.ineq_var // S, minlength=L.N + 1)
    if L.N > 1 and np.all(per_stage[:L.N] == per_stage[0]):
        c = per_stage[0]
        lam[: (L.N - 1) * c] = np.maximum(prev.lam[c: L.N * c], lam_min)
    state = IpmState(theta, nu, lam)
    check_strictly_feasible(nlp.g(theta), lam)
    return state


def barrier_mu(lam, g, sigma: float, mode: str = "averaged") -> float:
    lam, g = np.asarray(lam, float), np.asarray(g, float)
    if lam.size == 0:
        return 0.0
    mu = -sigma * float(lam @ g)
    if mode == "averaged":
        mu /= lam.size
    elif mode != "paper_literal":
        raise ValueError(f"unknown mu mode {mode!r}")
    return mu


def compute_residuals(nlp: NlpProblem, theta, nu, lam, mu):
    """``(r_dual, r_eq)`` of the Newton system at the given iterate."""
    theta = np.asarray(theta, float)
    g = nlp.g(theta)
    check_strictly_feasible(g, np.asarray(lam, float))
    return kkt_residuals(nlp, nlp.evaluate(theta), np.asarray(nu, float), np.asarray(lam, float), mu, g)


def recover_dlambda(lam, g, mu, J_dtheta) -> np.ndarray:
    """``dlambda = -lambda - mu/g - (lambda/g) * (J dtheta)`` elementwise."""
    lam, g = np.asarray(lam, float), np.asarray(g, float)
    return -lam - mu / g - (lam / g) * np.asarray(J_dtheta, float)


def fraction_to_boundary(lam, dlam, g, J_dtheta, gamma: float = 0.995) -> float:
    """Largest safe step in (0, 1] keeping ``lambda > 0`` and ``g < 0``.

    ``g = J theta - d`` at the current iterate.
    """
    lam, dlam = np.asarray(lam, float), np.asarray(dlam, float)
    g, jd = np.asarray(g, float), np.asarray(J_dtheta, float)
    alpha = 1.0
    neg = dlam < 0
    if neg.any():
        alpha = min(alpha, gamma * float(np.min(-lam[neg] / dlam[neg])))
    pos = jd > 0
    if pos.any():
        alpha = min(alpha, gamma * float(np.min(-g[pos] / jd[pos])))
    return alpha


def _representable_step(nlp, theta, lam, dtheta, dlam, alpha, max_halvings: int = 60) -> float:
    """Halve ``alpha`` while rounding puts the update on or past the boundary.

    Fraction-to-boundary keeps the exact update strictly inside, but once a
    slack falls below the floating-point spacing of its bound the rounded
    iterate can land on the bound itself.
    """
    for _ in range(max_halvings):
        if np.all(nlp.g(theta + alpha * dtheta) < 0) and np.all(lam + alpha * dlam > 0):
            return alpha
        alpha *= 0.5
    raise InfeasibleIterateError("no representable strictly feasible step")


def ipm_solve(nlp: NlpProblem, cfg: IpmConfig | None = None, init: IpmState | None = None,
              pattern: BlockPattern | None = None, callback=None):
    """Run the interior-point iteration; returns ``(final_state, log)``.

    ``callback(state)`` is called with the iterate after every step.

    The log has one :class:`IpmRecord` per iteration (residuals measured at
    the iterate the step was computed from) plus a final record at the
    returned iterate with ``alpha`` and ``minres_relres`` set to NaN.
    """
    cfg = cfg or IpmConfig()
    st = init.copy() if init is not None else init_point(nlp)
    st.log = []
    delta = cfg.regularization
    if pattern is None:
        pattern = pattern_from_nlp(nlp, regularize=delta is None or delta > 0)

    for it in range(cfg.n_iter):
        g = nlp.g(st.theta)
        check_strictly_feasible(g, st.lam)
        mu = barrier_mu(st.lam, g, cfg.sigma, cfg.mu_mode)
        ev = nlp.evaluate(st.theta)
        d_it = delta
        if d_it is None:
            probe = assemble_kkt(nlp, pattern, st.theta, st.nu, st.lam, mu, 0.0, ev=ev)
            d_it = default_regularization(probe.A)
        sysk = assemble_kkt(nlp, pattern, st.theta, st.nu, st.lam, mu, d_it, ev=ev)
        rec = IpmRecord(it, mu, np.nan, _inf(sysk.r_eq), _inf(stationarity(nlp, ev, st.nu, st.lam)),
                        -float(st.lam @ g), np.nan)
        if cfg.tol is not None and max(rec.r_eq_inf, rec.r_dual_inf, rec.compl) <= cfg.tol:
            break
        dtheta, dnu, stats = solve_kkt(sysk, cfg.linear)
        jd = nlp.J_dot(dtheta)
        dlam = recover_dlambda(st.lam, g, mu, jd)
        alpha = fraction_to_boundary(st.lam, dlam, g, jd, cfg.gamma)
        alpha = _representable_step(nlp, st.theta, st.lam, dtheta, dlam, alpha)
        st.theta = st.theta + alpha * dtheta
        st.nu = st.nu + alpha * dnu
        st.lam = st.lam + alpha * dlam
        st.mu, st.alpha = mu, alpha
        rec.alpha, rec.minres_relres, rec.minres_iterations = alpha, stats.final_relres, stats.iterations
        st.log.append(rec)
        check_strictly_feasible(nlp.g(st.theta), st.lam)
        if callback is not None:
            callback(st)

    g = nlp.g(st.theta)
    mu_f = barrier_mu(st.lam, g, cfg.sigma, cfg.mu_mode)
    ev = nlp.evaluate(st.theta)
    st.log.append(IpmRecord(len(st.log), mu_f, np.nan, _inf(ev.p), _inf(stationarity(nlp, ev, st.nu, st.lam)),
                            -float(st.lam @ g), np.nan))
    return st, st.log


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def format_float(x) -> str:
    """Deterministic CSV float formatting (shortest round-trip repr)."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def log_to_csv(log, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in log:
        w.writerow([r.iter] + [format_float(getattr(r, c)) for c in LOG_COLUMNS[1:]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text

