"""Direct transcription of a continuous least-squares OCP into an NLP.

The discrete problem uses Runge-Kutta stage derivatives ``r_k`` as decision
variables, so integration and optimisation are solved jointly::

    min_theta  1/2 ||f(theta)||^2   s.t.  p(theta) = 0,  J theta - d <= 0

with ``theta = [x_0 u_0 r_0 s_0 ... x_{N-1} u_{N-1} r_{N-1} s_{N-1} x_N s_T]``.

Equality rows are ordered stage-wise::

    p = [x_0 - x_hat | update_0, defects_0, q_0 | ... | q_T]

where ``update_k = x_k + T_s sum_i b_i r_k^(i) - x_{k+1}`` and
``defects_k^(i) = r_k^(i) - f_c(x_k + T_s sum_j A_ij r_k^(j), u_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError
from .model import OdeModel

TABLEAU_KINDS = ("explicit_euler", "trapezoidal", "rk4", "implicit_midpoint")


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    @property
    def l(self) -> int:
        return len(self.b)

    @property
    def explicit(self) -> bool:
        return bool(np.all(np.triu(self.A) == 0.0))


def make_tableau(kind: str) -> ButcherTableau:
    if kind == "explicit_euler":
        A, b = [[0.0]], [1.0]
    elif kind == "trapezoidal":
        A, b = [[0.0, 0.0], [0.5, 0.5]], [0.5, 0.5]
    elif kind == "rk4":
        A = [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1.0, 0]]
        b = [1 / 6, 1 / 3, 1 / 3, 1 / 6]
    elif kind == "implicit_midpoint":
        A, b = [[0.5]], [1.0]
    else:
        raise ValueError(f"unknown tableau kind {kind!r}; expected one of {TABLEAU_KINDS}")
    A = np.asarray(A, dtype=float)
    return ButcherTableau(A=A, b=np.asarray(b, dtype=float), c=A.sum(axis=1), name=kind)


def stage_residual(tableau: ButcherTableau, model: OdeModel, x_k, u_k, r_k, T_s):
    """Predicted next state and integrator defects for one sampling interval.

    ``r_k`` holds the ``l`` stage derivatives stacked into a vector of length
    ``n*l``. Returns ``(x_next_pred, defects)``.
    """
    x_k = np.asarray(x_k, dtype=float)
    R = np.asarray(r_k, dtype=float).reshape(tableau.l, model.n)
    defects = np.empty_like(R)
    for i in range(tableau.l):
        y = x_k + T_s * (tableau.A[i] @ R)
        defects[i] = R[i] - model.rhs(y, u_k)
    return x_k + T_s * (tableau.b @ R), defects.ravel()


# --------------------------------------------------------------------------- OCP


@dataclass
class OcpSpec:
    """Discrete least-squares OCP data.

    ``stage_cost(x, u, s)`` returns the residual ``h`` and
    ``stage_cost_jac(x, u, s)`` returns ``(dh/dx, dh/du, dh/ds)``; the terminal
    pair works on ``(x_N, s_T)``. Optional slack equalities ``q``/``q_T`` follow
    the same convention. Missing bounds are ``None`` (meaning unbounded).
    """

    N: int
    T_s: float
    x_hat: np.ndarray
    stage_cost: Callable
    stage_cost_jac: Callable
    terminal_cost: Callable
    terminal_cost_jac: Callable
    n_s: int = 0
    n_sT: int = 0
    stage_eq: Optional[Callable] = None
    stage_eq_jac: Optional[Callable] = None
    terminal_eq: Optional[Callable] = None
    terminal_eq_jac: Optional[Callable] = None
    x_lb: Optional[np.ndarray] = None
    x_ub: Optional[np.ndarray] = None
    u_lb: Optional[np.ndarray] = None
    u_ub: Optional[np.ndarray] = None
    s_lb: Optional[np.ndarray] = None
    s_ub: Optional[np.ndarray] = None
    xT_lb: Optional[np.ndarray] = None
    xT_ub: Optional[np.ndarray] = None
    sT_lb: Optional[np.ndarray] = None
    sT_ub: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ThetaLayout:
    """Offsets of the stage-wise decision vector and of the equality stack."""

    N: int
    n: int
    m: int
    l: int
    n_s: int = 0
    n_sT: int = 0
    n_q: int = 0
    n_qT: int = 0

    # primal --------------------------------------------------------------
    @property
    def stage_size(self) -> int:
        return self.n + self.m + self.n * self.l + self.n_s

    @property
    def terminal_size(self) -> int:
        return self.n + self.n_sT

    @property
    def n_theta(self) -> int:
        return self.N * self.stage_size + self.terminal_size

    def stage(self, k: int) -> slice:
        if k == self.N:
            return self.terminal()
        start = k * self.stage_size
        return slice(start, start + self.stage_size)

    def terminal(self) -> slice:
        start = self.N * self.stage_size
        return slice(start, start + self.terminal_size)

    def x(self, k: int) -> slice:
        start = k * self.stage_size
        return slice(start, start + self.n)

    def u(self, k: int) -> slice:
        start = k * self.stage_size + self.n
        return slice(start, start + self.m)

    def r(self, k: int) -> slice:
        start = k * self.stage_size + self.n + self.m
        return slice(start, start + self.n * self.l)

    def s(self, k: int) -> slice:
        start = k * self.stage_size + self.n + self.m + self.n * self.l
        return slice(start, start + self.n_s)

    def s_T(self) -> slice:
        start = self.N * self.stage_size + self.n
        return slice(start, start + self.n_sT)

    def segments(self):
        """All ``(name, k, slice)`` primal segments in theta order."""
        out = []
        for k in range(self.N):
            out += [("x", k, self.x(k)), ("u", k, self.u(k)), ("r", k, self.r(k)), ("s", k, self.s(k))]
        out += [("x", self.N, self.x(self.N)), ("s_T", self.N, self.s_T())]
        return out

    # equality ------------------------------------------------------------
    @property
    def stage_eq_size(self) -> int:
        return self.n + self.n * self.l + self.n_q

    @property
    def n_eq(self) -> int:
        return self.n + self.N * self.stage_eq_size + self.n_qT

    def eq_init(self) -> slice:
        return slice(0, self.n)

    def eq_stage(self, k: int) -> slice:
        start = self.n + k * self.stage_eq_size
        return slice(start, start + self.stage_eq_size)

    def eq_update(self, k: int) -> slice:
        start = self.eq_stage(k).start
        return slice(start, start + self.n)

    def eq_defects(self, k: int) -> slice:
        start = self.eq_stage(k).start + self.n
        return slice(start, start + self.n * self.l)

    def eq_q(self, k: int) -> slice:
        start = self.eq_stage(k).start + self.n + self.n * self.l
        return slice(start, start + self.n_q)

    def eq_terminal(self) -> slice:
        start = self.n + self.N * self.stage_eq_size
        return slice(start, start + self.n_qT)

    # helpers -------------------------------------------------------------
    def pack(self, xs, us, rs, ss=None, s_T=None) -> np.ndarray:
        theta = np.zeros(self.n_theta)
        for k in range(self.N):
            theta[self.x(k)] = xs[k]
            theta[self.u(k)] = us[k]
            theta[self.r(k)] = np.ravel(rs[k])
            if self.n_s:
                theta[self.s(k)] = ss[k]
        theta[self.x(self.N)] = xs[self.N]
        if self.n_sT:
            theta[self.s_T()] = s_T
        return theta

    def unpack(self, theta):
        theta = np.asarray(theta)
        xs = np.array([theta[self.x(k)] for k in range(self.N + 1)])
        us = np.array([theta[self.u(k)] for k in range(self.N)])
        rs = np.array([theta[self.r(k)] for k in range(self.N)])
        return xs, us, rs


@dataclass
class NlpJacobians:
    """Stage-block Jacobians of ``f`` and ``p``.

    ``f_stage[k]`` is ``d f_k / d z_k`` for the stage variables
    ``z_k = [x_k u_k r_k s_k]``; ``p_stage[k]`` is the Jacobian of the stage
    equality rows ``[update_k, defects_k, q_k]`` w.r.t. ``z_k``. The remaining
    entries are constant couplings: ``+I`` of the initial-condition rows on
    ``x_0`` and ``-I`` of ``update_k`` on ``x_{k+1}``.
    """

    f_stage: np.ndarray
    f_term: np.ndarray
    p_stage: np.ndarray
    p_term: np.ndarray


@dataclass
class NlpEval:
    f: np.ndarray
    p: np.ndarray
    jac: NlpJacobians


def _vec(v, size, fill, name):
    if v is None:
        return np.full(size, fill)
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != (size,):
        raise DimensionError(f"{name}: expected length {size}, got {v.size}")
    return v


class NlpProblem:
    """The transcribed NLP. Evaluation methods are pure functions of theta."""

    def __init__(self, spec: OcpSpec, model: OdeModel, tableau: ButcherTableau, layout: ThetaLayout,
                 n_h: int, n_hT: int):
        self.spec = spec
        self.model = model
        self.tableau = tableau
        self.layout = layout
        self.n_h = n_h
        self.n_hT = n_hT
        self.x_hat = np.asarray(spec.x_hat, dtype=float).copy()
        self._build_bounds()

    # ------------------------------------------------------------ bounds
    def _build_bounds(self):
        L, sp = self.layout, self.spec
        n, m = L.n, L.m
        lb = np.full(L.n_theta, -np.inf)
        ub = np.full(L.n_theta, np.inf)
        x_lb, x_ub = _vec(sp.x_lb, n, -np.inf, "x_lb"), _vec(sp.x_ub, n, np.inf, "x_ub")
        u_lb, u_ub = _vec(sp.u_lb, m, -np.inf, "u_lb"), _vec(sp.u_ub, m, np.inf, "u_ub")
        s_lb, s_ub = _vec(sp.s_lb, L.n_s, -np.inf, "s_lb"), _vec(sp.s_ub, L.n_s, np.inf, "s_ub")
        for k in range(L.N):
            lb[L.x(k)], ub[L.x(k)] = x_lb, x_ub
            lb[L.u(k)], ub[L.u(k)] = u_lb, u_ub
            lb[L.s(k)], ub[L.s(k)] = s_lb, s_ub
        lb[L.x(L.N)] = _vec(sp.xT_lb, n, -np.inf, "xT_lb")
        ub[L.x(L.N)] = _vec(sp.xT_ub, n, np.inf, "xT_ub")
        lb[L.s_T()] = _vec(sp.sT_lb, L.n_sT, -np.inf, "sT_lb")
        ub[L.s_T()] = _vec(sp.sT_ub, L.n_sT, np.inf, "sT_ub")
        if np.any(lb > ub):
            bad = int(np.flatnonzero(lb > ub)[0])
            raise DimensionError(f"lower bound exceeds upper bound at theta[{bad}]")
        self.lb, self.ub = lb, ub

        var, sign, d = [], [], []
        for i in range(L.n_theta):
            if np.isfinite(lb[i]):
                var.append(i), sign.append(-1.0), d.append(-lb[i])
            if np.isfinite(ub[i]):
                var.append(i), sign.append(1.0), d.append(ub[i])
        self.ineq_var = np.array(var, dtype=int)
        self.ineq_sign = np.array(sign, dtype=float)
        self.d = np.array(d, dtype=float)

    @property
    def n_ineq(self) -> int:
        return len(self.d)

    @property
    def J(self) -> np.ndarray:
        out = np.zeros((self.n_ineq, self.layout.n_theta))
        out[np.arange(self.n_ineq), self.ineq_var] = self.ineq_sign
        return out

    def J_dot(self, v) -> np.ndarray:
        return self.ineq_sign * np.asarray(v)[self.ineq_var]

    def JT_dot(self, w) -> np.ndarray:
        return np.bincount(self.ineq_var, weights=self.ineq_sign * w, minlength=self.layout.n_theta)

    def g(self, theta) -> np.ndarray:
        return self.J_dot(theta) - self.d

    # ------------------------------------------------------------ evaluation
    def _split_stage(self, z):
        L = self.layout
        n, m, nl = L.n, L.m, L.n * L.l
        x = z[:n]
        u = z[n:n + m]
        R = z[n + m:n + m + nl].reshape(L.l, n)
        s = z[n + m + nl:]
        return x, u, R, s

    def _stage(self, z, x_next, with_jac=True):
        L, tab, sp = self.layout, self.tableau, self.spec
        n, m, l, nl = L.n, L.m, L.l, L.n * L.l
        T_s = sp.T_s
        x, u, R, s = self._split_stage(z)
        sq = np.sqrt(T_s)
        f = sq * np.asarray(sp.stage_cost(x, u, s), dtype=float)

        e = np.empty(L.stage_eq_size)
        e[:n] = x + T_s * (tab.b @ R) - x_next
        Ys = x + T_s * (tab.A @ R)
        for i in range(l):
            e[n + i * n:n + (i + 1) * n] = R[i] - self.model.rhs(Ys[i], u)
        if L.n_q:
            e[n + nl:] = sp.stage_eq(x, u, s)
        if not with_jac:
            return f, e, None, None

        nz = L.stage_size
        hx, hu, hs = sp.stage_cost_jac(x, u, s)
        Jf = np.zeros((self.n_h, nz))
        Jf[:, :n] = hx
        Jf[:, n:n + m] = hu
        if L.n_s:
            Jf[:, n + m + nl:] = hs
        Jf *= sq

        Je = np.zeros((L.stage_eq_size, nz))
        eye = np.eye(n)
        Je[:n, :n] = eye
        for j in range(l):
            Je[:n, n + m + j * n:n + m + (j + 1) * n] = T_s * tab.b[j] * eye
        for i in range(l):
            jx = self.model.jac_x(Ys[i], u)
            ju = self.model.jac_u(Ys[i], u)
            rows = slice(n + i * n, n + (i + 1) * n)
            Je[rows, :n] = -jx
            Je[rows, n:n + m] = -ju
            for j in range(l):
                blk = -T_s * tab.A[i, j] * jx
                if i == j:
                    blk = blk + eye
                Je[rows, n + m + j * n:n + m + (j + 1) * n] = blk
        if L.n_q:
            qx, qu, qs = sp.stage_eq_jac(x, u, s)
            rows = slice(n + nl, n + nl + L.n_q)
            Je[rows, :n] = qx
            Je[rows, n:n + m] = qu
            if L.n_s:
                Je[rows, n + m + nl:] = qs
        return f, e, Jf, Je

    def _terminal(self, zT, with_jac=True):
        L, sp = self.layout, self.spec
        n = L.n
        x, s = zT[:n], zT[n:]
        f = np.asarray(sp.terminal_cost(x, s), dtype=float)
        e = np.asarray(sp.terminal_eq(x, s), dtype=float) if L.n_qT else np.zeros(0)
        if not with_jac:
            return f, e, None, None
        hx, hs = sp.terminal_cost_jac(x, s)
        Jf = np.zeros((self.n_hT, L.terminal_size))
        Jf[:, :n] = hx
        if L.n_sT:
            Jf[:, n:] = hs
        Je = np.zeros((L.n_qT, L.terminal_size))
        if L.n_qT:
            qx, qs = sp.terminal_eq_jac(x, s)
            Je[:, :n] = qx
            if L.n_sT:
                Je[:, n:] = qs
        return f, e, Jf, Je

    def evaluate(self, theta, with_jac=True) -> NlpEval:
        theta = np.asarray(theta, dtype=float)
        L = self.layout
        if theta.shape != (L.n_theta,):
            raise DimensionError(f"theta: expected length {L.n_theta}, got {theta.shape}")
        fs, ps = [], [theta[L.x(0)] - self.x_hat]
        Jfs, Jps = [], []
        for k in range(L.N):
            f, e, Jf, Je = self._stage(theta[L.stage(k)], theta[L.x(k + 1)], with_jac)
            fs.append(f), ps.append(e), Jfs.append(Jf), Jps.append(Je)
        fT, eT, JfT, JeT = self._terminal(theta[L.terminal()], with_jac)
        fs.append(fT), ps.append(eT)
        jac = None
        if with_jac:
            jac = NlpJacobians(np.array(Jfs), JfT, np.array(Jps), JeT)
        return NlpEval(np.concatenate(fs), np.concatenate(ps), jac)

    def eval_f(self, theta) -> np.ndarray:
        return self.evaluate(theta, with_jac=False).f

    def eval_p(self, theta) -> np.ndarray:
        return self.evaluate(theta, with_jac=False).p

    def eval_jacobians(self, theta) -> NlpJacobians:
        return self.evaluate(theta).jac

    def objective(self, theta) -> float:
        f = self.eval_f(theta)
        return 0.5 * float(f @ f)

    # ------------------------------------------------------------ products
    def jac_f_T_dot(self, jac: NlpJacobians, w) -> np.ndarray:
        """``(df/dtheta)^T w`` using the stage blocks."""
        L = self.layout
        out = np.zeros(L.n_theta)
        nh = self.n_h
        W = np.asarray(w[:L.N * nh]).reshape(L.N, nh)
        out[:L.N * L.stage_size] = np.einsum("kij,ki->kj", jac.f_stage, W).ravel()
        out[L.terminal()] = jac.f_term.T @ w[L.N * nh:]
        return out

    def jac_p_T_dot(self, jac: NlpJacobians, nu) -> np.ndarray:
        """``(dp/dtheta)^T nu`` including the identity couplings."""
        L = self.layout
        nu = np.asarray(nu)
        out = np.zeros(L.n_theta)
        V = np.array([nu[L.eq_stage(k)] for k in range(L.N)]).reshape(L.N, L.stage_eq_size)
        out[:L.N * L.stage_size] = np.einsum("kij,ki->kj", jac.p_stage, V).ravel()
        out[L.terminal()] += jac.p_term.T @ nu[L.eq_terminal()]
        out[L.x(0)] += nu[L.eq_init()]
        for k in range(L.N):
            out[L.x(k + 1)] -= nu[L.eq_update(k)]
        return out

    def dense_jacobians(self, theta):
        """Full ``(df/dtheta, dp/dtheta)`` matrices (test and oracle use)."""
        L = self.layout
        jac = self.eval_jacobians(theta)
        Jf = np.zeros((L.N * self.n_h + self.n_hT, L.n_theta))
        Jp = np.zeros((L.n_eq, L.n_theta))
        for k in range(L.N):
            Jf[k * self.n_h:(k + 1) * self.n_h, L.stage(k)] = jac.f_stage[k]
            Jp[L.eq_stage(k), L.stage(k)] = jac.p_stage[k]
            Jp[L.eq_update(k), L.x(k + 1)] = -np.eye(L.n)
        Jf[L.N * self.n_h:, L.terminal()] = jac.f_term
        Jp[L.eq_terminal(), L.terminal()] = jac.p_term
        Jp[L.eq_init(), L.x(0)] = np.eye(L.n)
        return Jf, Jp


def build_nlp(spec: OcpSpec, model: OdeModel, tableau: ButcherTableau) -> NlpProblem:
    if int(spec.N) != spec.N or spec.N < 1:
        raise DimensionError(f"N: horizon must be a positive integer, got {spec.N}")
    if not spec.T_s > 0:
        raise DimensionError(f"T_s: sampling time must be positive, got {spec.T_s}")
    n, m = model.n, model.m
    x_hat = np.asarray(spec.x_hat, dtype=float).ravel()
    if x_hat.shape != (n,):
        raise DimensionError(f"x_hat: expected length {n}, got {x_hat.size}")
    x0, u0 = x_hat, np.zeros(m)
    s0, sT0 = np.zeros(spec.n_s), np.zeros(spec.n_sT)

    h = np.asarray(spec.stage_cost(x0, u0, s0), dtype=float).ravel()
    n_h = h.size
    hx, hu, hs = spec.stage_cost_jac(x0, u0, s0)
    _check_shape("stage_cost_jac[x]", hx, (n_h, n))
    _check_shape("stage_cost_jac[u]", hu, (n_h, m))
    _check_shape("stage_cost_jac[s]", hs, (n_h, spec.n_s))
    hT = np.asarray(spec.terminal_cost(x0, sT0), dtype=float).ravel()
    n_hT = hT.size
    hTx, hTs = spec.terminal_cost_jac(x0, sT0)
    _check_shape("terminal_cost_jac[x]", hTx, (n_hT, n))
    _check_shape("terminal_cost_jac[s]", hTs, (n_hT, spec.n_sT))

    n_q = n_qT = 0
    if spec.stage_eq is not None:
        n_q = np.asarray(spec.stage_eq(x0, u0, s0)).size
        qx, qu, qs = spec.stage_eq_jac(x0, u0, s0)
        _check_shape("stage_eq_jac[x]", qx, (n_q, n))
        _check_shape("stage_eq_jac[u]", qu, (n_q, m))
        _check_shape("stage_eq_jac[s]", qs, (n_q, spec.n_s))
    if spec.terminal_eq is not None:
        n_qT = np.asarray(spec.terminal_eq(x0, sT0)).size
        qx, qs = spec.terminal_eq_jac(x0, sT0)
        _check_shape("terminal_eq_jac[x]", qx, (n_qT, n))
        _check_shape("terminal_eq_jac[s]", qs, (n_qT, spec.n_sT))

    layout = ThetaLayout(N=int(spec.N), n=n, m=m, l=tableau.l, n_s=spec.n_s, n_sT=spec.n_sT,
                         n_q=n_q, n_qT=n_qT)
    return NlpProblem(spec, model, tableau, layout, n_h, n_hT)


def _check_shape(name, arr, shape):
    arr = np.asarray(arr)
    if arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")


# --------------------------------------------------------------------------- crane OCP

CRANE_INPUT_WEIGHT = 1e-4
CRANE_HEIGHT_TARGET = 0.5
CRANE_U_BOUND = 0.15


def crane_stage_cost(x, u, s=None):
    x_c, _, x_l, _, th, om = x
    return np.array([
        x_c + x_l * np.sin(th),
        x_l * np.cos(th) - CRANE_HEIGHT_TARGET,
        om,
        CRANE_INPUT_WEIGHT * u[0],
        CRANE_INPUT_WEIGHT * u[1],
    ])


def crane_stage_cost_jac(x, u, s=None):
    _, _, x_l, _, th, _ = x
    hx = np.zeros((5, 6))
    hx[:3] = crane_terminal_cost_jac(x)[0]
    hu = np.zeros((5, 2))
    hu[3, 0] = hu[4, 1] = CRANE_INPUT_WEIGHT
    return hx, hu, np.zeros((5, 0))


def crane_terminal_cost(x, s=None):
    return crane_stage_cost(x, np.zeros(2))[:3]


def crane_terminal_cost_jac(x, s=None):
    _, _, x_l, _, th, _ = x
    c, sn = np.cos(th), np.sin(th)
    hx = np.zeros((3, 6))
    hx[0, 0] = 1.0
    hx[0, 2] = sn
    hx[0, 4] = x_l * c
    hx[1, 2] = c
    hx[1, 4] = -x_l * sn
    hx[2, 5] = 1.0
    return hx, np.zeros((3, 0))


def crane_ocp(N: int = 10, T_s: float = 0.1, x_hat=None, u_bound: float = CRANE_U_BOUND,
              x_l_lower: float | None = None) -> OcpSpec:
    """Gantry-crane benchmark: move the payload to (0, 0.5) with no swing.

    ``x_l_lower`` optionally adds a rope-length lower bound on every predicted
    state (not part of the benchmark; useful to keep iterates away from the
    ``1/x_l`` singularity).
    """
    if x_hat is None:
        x_hat = [0.5, 0.0, 0.7, 0.0, -0.2, -0.5]
    x_lb = None
    if x_l_lower is not None:
        x_lb = np.full(6, -np.inf)
        x_lb[2] = x_l_lower
    return OcpSpec(
        N=N,
        T_s=T_s,
        x_hat=np.asarray(x_hat, dtype=float),
        stage_cost=crane_stage_cost,
        stage_cost_jac=crane_stage_cost_jac,
        terminal_cost=crane_terminal_cost,
        terminal_cost_jac=crane_terminal_cost_jac,
        u_lb=np.full(2, -u_bound),
        u_ub=np.full(2, u_bound),
        x_lb=x_lb,
        xT_lb=None if x_lb is None else x_lb.copy(),
    )
