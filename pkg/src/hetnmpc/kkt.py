"""Block-sparse KKT matrices for the interior-point Newton step.

Rows/columns of the KKT system are ordered as::

    [ nu_init | z_0, e_0 | z_1, e_1 | ... | z_{N-1}, e_{N-1} | z_T, e_T ]

where ``z_k`` are the primal stage variables and ``e_k`` the duals of the stage
equalities ``[update_k, defects_k, q_k]``. Each stage block holds the augmented
Gauss-Newton Hessian ``H_k`` (top-left, lower triangle) and the equality
Jacobian ``dF_k`` below it. Consecutive blocks only interact through
negative identities: ``-I`` between ``update_k`` and ``x_{k+1}``, and ``-I``
between the initial-condition duals (the leading "head" block) and ``x_0``.
The initial-condition rows are sign-flipped in the KKT system to make that
second coupling a negative identity as well.

Only the lower triangle is stored.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InfeasibleIterateError, ModelDomainError
from .transcription import NlpProblem

NEG_IDENTITY = "neg_identity"
DIAGONAL = "diagonal"


def _coords(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    return a.reshape(-1, 2)


def mac_coords(coords) -> np.ndarray:
    """Symmetric expansion of lower-triangle coords, i.e. one entry per MAC.

    Each stored off-diagonal value ``a_ij`` is used twice by the symmetric
    sweep (it writes rows ``i`` and ``j``). Duplicates are removed, so the
    call is idempotent on an already-expanded list.
    """
    c = _coords(coords)
    both = np.vstack([c, c[:, ::-1]])
    return np.unique(both, axis=0)


@dataclass(frozen=True, eq=False)
class BlockPattern:
    """Sparsity pattern of a block-banded KKT matrix."""

    n_b: int
    coords: np.ndarray
    N_blocks: int
    n_head: int
    head_coords: np.ndarray
    n_terminal: int
    terminal_coords: np.ndarray
    couplings: np.ndarray
    coupling_kind: str = NEG_IDENTITY
    n_primal: int = 0
    n_primal_terminal: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("coords", "head_coords", "terminal_coords", "couplings"):
            object.__setattr__(self, name, _coords(getattr(self, name)))
        for name, c, size in (("coords", self.coords, self.n_b),
                              ("head_coords", self.head_coords, self.n_head),
                              ("terminal_coords", self.terminal_coords, self.n_terminal)):
            if len(c) and (np.any(c[:, 1] > c[:, 0]) or c.max() >= size or c.min() < 0):
                raise DimensionError(f"{name}: entries must be lower-triangular inside the block")
            if len(np.unique(c, axis=0)) != len(c):
                raise DimensionError(f"{name}: duplicate coordinates")
        if len(self.couplings) and np.any(self.couplings[:, 0] <= self.couplings[:, 1]):
            raise DimensionError("couplings: must be stored strictly below the diagonal")

    @property
    def n_A(self) -> int:
        return self.n_head + self.N_blocks * self.n_b + self.n_terminal

    @property
    def stage_offsets(self) -> np.ndarray:
        return self.n_head + self.n_b * np.arange(self.N_blocks)

    @property
    def terminal_offset(self) -> int:
        return self.n_head + self.N_blocks * self.n_b

    @property
    def nnz_lower(self) -> int:
        return len(self.head_coords) + self.N_blocks * len(self.coords) + len(self.terminal_coords)

    @property
    def n_couplings(self) -> int:
        return len(self.couplings)

    def block_of(self, index: int) -> int:
        """Block id of a global index (0 = head, 1..N = stages, N+1 = terminal)."""
        if index < self.n_head:
            return 0
        if index >= self.terminal_offset:
            return self.N_blocks + 1
        return 1 + (index - self.n_head) // self.n_b

    def global_entries(self):
        """Concatenated global ``(rows, cols)`` of all stored in-block entries."""
        if "glob" not in self._cache:
            rows = [self.head_coords[:, 0], (self.stage_offsets[:, None] + self.coords[:, 0]).ravel(),
                    self.terminal_offset + self.terminal_coords[:, 0]]
            cols = [self.head_coords[:, 1], (self.stage_offsets[:, None] + self.coords[:, 1]).ravel(),
                    self.terminal_offset + self.terminal_coords[:, 1]]
            self._cache["glob"] = (np.concatenate(rows), np.concatenate(cols))
        return self._cache["glob"]

    def with_coupling_kind(self, kind: str) -> "BlockPattern":
        return BlockPattern(self.n_b, self.coords, self.N_blocks, self.n_head, self.head_coords,
                            self.n_terminal, self.terminal_coords, self.couplings, kind,
                            self.n_primal, self.n_primal_terminal)


@dataclass(eq=False)
class BlockSparseMatrix:
    """Symmetric matrix stored as lower-triangle block values plus couplings."""

    pattern: BlockPattern
    stage_values: np.ndarray
    head_values: np.ndarray
    terminal_values: np.ndarray
    coupling_values: np.ndarray

    def __post_init__(self):
        p = self.pattern
        self.stage_values = np.asarray(self.stage_values).reshape(p.N_blocks, len(p.coords))
        self.head_values = np.asarray(self.head_values).reshape(len(p.head_coords))
        self.terminal_values = np.asarray(self.terminal_values).reshape(len(p.terminal_coords))
        self.coupling_values = np.asarray(self.coupling_values).reshape(p.n_couplings)

    @property
    def shape(self):
        return (self.pattern.n_A, self.pattern.n_A)

    @property
    def dtype(self):
        return self.stage_values.dtype

    def all_values(self) -> np.ndarray:
        """In-block values aligned with :meth:`BlockPattern.global_entries`."""
        return np.concatenate([self.head_values, self.stage_values.ravel(), self.terminal_values])

    def astype(self, dtype) -> "BlockSparseMatrix":
        return BlockSparseMatrix(self.pattern, self.stage_values.astype(dtype), self.head_values.astype(dtype),
                                 self.terminal_values.astype(dtype), self.coupling_values.astype(dtype))

    def max_abs(self) -> float:
        vals = np.concatenate([self.all_values(), self.coupling_values])
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def __matmul__(self, v):
        return block_sparse_matvec(self, v)


def _sweep(coords, values, v, out):
    """Symmetric lower-triangle MAC sweep for a batch of equally-shaped blocks.

    ``values`` is (B, nnz), ``v`` and ``out`` are (B, size).
    """
    if not len(coords):
        return
    r, c = coords[:, 0], coords[:, 1]
    off = r != c
    B, size = out.shape
    base = (np.arange(B) * size)[:, None]
    flat = out.reshape(-1)
    flat += np.bincount((base + r).ravel(), weights=(values * v[:, c]).ravel(), minlength=B * size)
    if off.any():
        flat += np.bincount((base + c[off]).ravel(), weights=(values[:, off] * v[:, r[off]]).ravel(),
                            minlength=B * size)


def block_sparse_matvec(A: BlockSparseMatrix, v) -> np.ndarray:
    """``A @ v`` in two phases: coupling transfers, then independent block sweeps."""
    p = A.pattern
    v = np.asarray(v)
    if v.shape != (p.n_A,):
        raise DimensionError(f"v: expected length {p.n_A}, got {v.shape}")
    dtype = np.result_type(A.stage_values.dtype, v.dtype)
    y = np.zeros(p.n_A, dtype=dtype)

    # phase 1: couplings are signed (or diagonally scaled) copies between blocks
    if p.n_couplings:
        r, c = p.couplings[:, 0], p.couplings[:, 1]
        if p.coupling_kind == NEG_IDENTITY:
            y[r] -= v[c]
            y[c] -= v[r]
        else:
            y[r] += A.coupling_values * v[c]
            y[c] += A.coupling_values * v[r]

    # phase 2: block interiors; stage blocks have disjoint input/output slices
    if p.n_head:
        _sweep(p.head_coords, A.head_values[None, :], v[None, :p.n_head], y[None, :p.n_head])
    if p.N_blocks:
        s0 = p.n_head
        s1 = s0 + p.N_blocks * p.n_b
        ys = y[s0:s1].reshape(p.N_blocks, p.n_b)
        _sweep(p.coords, A.stage_values, v[s0:s1].reshape(p.N_blocks, p.n_b), ys)
    if p.n_terminal:
        t0 = p.terminal_offset
        _sweep(p.terminal_coords, A.terminal_values[None, :], v[None, t0:], y[None, t0:])
    return y


def to_dense(A: BlockSparseMatrix) -> np.ndarray:
    p = A.pattern
    out = np.zeros((p.n_A, p.n_A), dtype=A.stage_values.dtype)
    rows, cols = p.global_entries()
    vals = A.all_values()
    out[rows, cols] = vals
    out[cols, rows] = vals
    if p.n_couplings:
        cv = -np.ones(p.n_couplings) if p.coupling_kind == NEG_IDENTITY else A.coupling_values
        out[p.couplings[:, 0], p.couplings[:, 1]] = cv
        out[p.couplings[:, 1], p.couplings[:, 0]] = cv
    return out


# --------------------------------------------------------------------------- KKT layout


@dataclass(frozen=True, eq=False)
class KktLayout:
    """Maps between KKT ordering and the NLP's (theta, nu) ordering."""

    primal_pos: np.ndarray
    dual_pos: np.ndarray
    dual_sign: np.ndarray
    n_A: int

    def split(self, z):
        """KKT solution vector -> ``(dtheta, dnu)`` in NLP ordering."""
        z = np.asarray(z)
        return z[self.primal_pos].copy(), self.dual_sign * z[self.dual_pos]

    def merge(self, primal, dual) -> np.ndarray:
        out = np.zeros(self.n_A, dtype=np.result_type(primal, dual))
        out[self.primal_pos] = primal
        out[self.dual_pos] = self.dual_sign * np.asarray(dual)
        return out


def kkt_layout(nlp: NlpProblem) -> KktLayout:
    L = nlp.layout
    n, nz, ne = L.n, L.stage_size, L.stage_eq_size
    n_b = nz + ne
    primal = np.empty(L.n_theta, dtype=np.int64)
    dual = np.empty(L.n_eq, dtype=np.int64)
    dual[L.eq_init()] = np.arange(n)
    for k in range(L.N):
        off = n + k * n_b
        primal[L.stage(k)] = off + np.arange(nz)
        dual[L.eq_stage(k)] = off + nz + np.arange(ne)
    tof = n + L.N * n_b
    primal[L.terminal()] = tof + np.arange(L.terminal_size)
    dual[L.eq_terminal()] = tof + L.terminal_size + np.arange(L.n_qT)
    sign = np.ones(L.n_eq)
    sign[L.eq_init()] = -1.0
    return KktLayout(primal, dual, sign, n + L.N * n_b + L.terminal_size + L.n_qT)


# --------------------------------------------------------------------------- pattern extraction


def _nominal_theta(nlp: NlpProblem) -> np.ndarray:
    L = nlp.layout
    lb, ub = nlp.lb, nlp.ub
    theta = np.zeros(L.n_theta)
    for k in range(L.N + 1):
        theta[L.x(k)] = nlp.x_hat
    both = np.isfinite(lb) & np.isfinite(ub)
    mid = np.zeros_like(lb)
    mid[both] = 0.5 * (lb[both] + ub[both])
    lo = np.where(np.isfinite(lb), lb, -np.inf)
    hi = np.where(np.isfinite(ub), ub, np.inf)
    for k in range(L.N):
        theta[L.u(k)] = mid[L.u(k)]
    theta = np.clip(theta, lo, hi)
    for k in range(L.N):
        f0 = nlp.model.rhs(theta[L.x(k)], theta[L.u(k)])
        theta[L.r(k)] = np.tile(f0, L.l)
    return theta


def _sampled_patterns(nlp: NlpProblem, n_samples: int = 4, seed: int = 0):
    """Union of nonzero Jacobian positions over a few perturbed points."""
    L = nlp.layout
    rng = np.random.default_rng(seed)
    base = _nominal_theta(nlp)
    pf = np.zeros((nlp.n_h, L.stage_size), dtype=bool)
    pe = np.zeros((L.stage_eq_size, L.stage_size), dtype=bool)
    pfT = np.zeros((nlp.n_hT, L.terminal_size), dtype=bool)
    peT = np.zeros((L.n_qT, L.terminal_size), dtype=bool)
    got = 0
    scale = 1e-2
    for _ in range(8 * n_samples):
        if got >= n_samples:
            break
        theta = base + scale * (1.0 + np.abs(base)) * rng.standard_normal(base.size)
        try:
            jac = nlp.eval_jacobians(theta)
        except ModelDomainError:
            scale *= 0.5
            continue
        pf |= np.any(jac.f_stage != 0, axis=0)
        pe |= np.any(jac.p_stage != 0, axis=0)
        pfT |= jac.f_term != 0
        peT |= jac.p_term != 0
        got += 1
    if not got:
        raise ModelDomainError("could not evaluate Jacobians near the nominal point")
    return pf, pe, pfT, peT


def _lower(mask) -> np.ndarray:
    r, c = np.nonzero(np.tril(mask))
    return np.column_stack([r, c])


def pattern_from_nlp(nlp: NlpProblem, regularize: bool = False, seed: int = 0) -> BlockPattern:
    """Block-banded pattern of the KKT matrix of ``nlp``.

    With ``regularize`` the full primal and dual diagonals are included so a
    Tikhonov shift can be stored.
    """
    L = nlp.layout
    n, nz, ne = L.n, L.stage_size, L.stage_eq_size
    n_b = nz + ne
    pf, pe, pfT, peT = _sampled_patterns(nlp, seed=seed)
    bounded = np.isfinite(nlp.lb) | np.isfinite(nlp.ub)

    mask = np.zeros((n_b, n_b), dtype=bool)
    mask[:nz, :nz] = (pf.T.astype(int) @ pf.astype(int)) > 0
    stage_bounded = np.zeros(nz, dtype=bool)
    for k in range(L.N):
        stage_bounded |= bounded[L.stage(k)]
    mask[np.arange(nz), np.arange(nz)] |= stage_bounded
    mask[nz:, :nz] = pe
    if regularize:
        mask[np.arange(n_b), np.arange(n_b)] = True

    nT = L.terminal_size
    n_term = nT + L.n_qT
    tmask = np.zeros((n_term, n_term), dtype=bool)
    tmask[:nT, :nT] = (pfT.T.astype(int) @ pfT.astype(int)) > 0
    tmask[np.arange(nT), np.arange(nT)] |= bounded[L.terminal()]
    tmask[nT:, :nT] = peT
    if regularize:
        tmask[np.arange(n_term), np.arange(n_term)] = True

    head = np.column_stack([np.arange(n), np.arange(n)]) if regularize else np.zeros((0, 2), int)

    lay = kkt_layout(nlp)
    couplings = []
    for i in range(n):
        couplings.append((lay.primal_pos[L.x(0).start + i], lay.dual_pos[i]))
    for k in range(L.N):
        for i in range(n):
            couplings.append((lay.primal_pos[L.x(k + 1).start + i], lay.dual_pos[L.eq_update(k).start + i]))

    return BlockPattern(
        n_b=n_b, coords=_lower(mask), N_blocks=L.N, n_head=n, head_coords=head,
        n_terminal=n_term, terminal_coords=_lower(tmask), couplings=np.array(couplings),
        coupling_kind=NEG_IDENTITY, n_primal=nz, n_primal_terminal=nT,
    )


# --------------------------------------------------------------------------- assembly


@dataclass(eq=False)
class KktSystem:
    A: BlockSparseMatrix
    b: np.ndarray
    layout: KktLayout
    r_dual: np.ndarray
    r_eq: np.ndarray


def check_strictly_feasible(g, lam):
    if np.any(~(g < 0)):
        i = int(np.flatnonzero(~(g < 0))[0])
        raise InfeasibleIterateError(f"inequality {i} not strictly satisfied: g={g[i]!r}")
    if np.any(~(lam > 0)):
        i = int(np.flatnonzero(~(lam > 0))[0])
        raise InfeasibleIterateError(f"multiplier {i} not positive: lambda={lam[i]!r}")


def kkt_residuals(nlp: NlpProblem, ev, nu, lam, mu, g):
    """``r_dual = J^T G^-1 mu e - df^T f - dp^T nu`` and ``r_eq = -p``."""
    r_dual = nlp.JT_dot(mu / g) - nlp.jac_f_T_dot(ev.jac, ev.f) - nlp.jac_p_T_dot(ev.jac, nu)
    return r_dual, -ev.p


def stationarity(nlp: NlpProblem, ev, nu, lam) -> np.ndarray:
    """Lagrangian gradient ``df^T f + dp^T nu + J^T lambda``."""
    return nlp.jac_f_T_dot(ev.jac, ev.f) + nlp.jac_p_T_dot(ev.jac, nu) + nlp.JT_dot(lam)


def _gather(M, coords, what):
    """Values of stacked dense blocks at ``coords``; rejects mass outside them."""
    vals = M[..., coords[:, 0], coords[:, 1]]
    outside = np.tril(np.ones(M.shape[-2:], dtype=bool))
    outside[coords[:, 0], coords[:, 1]] = False
    if np.any(M[..., outside] != 0):
        raise DimensionError(f"{what}: nonzero value outside the sparsity pattern")
    return vals


def assemble_kkt(nlp: NlpProblem, pattern: BlockPattern, theta, nu, lam, mu, delta: float = 0.0,
                 ev=None) -> KktSystem:
    """Assemble the KKT matrix and right-hand side at ``(theta, nu, lam)``."""
    L = nlp.layout
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = nlp.g(theta)
    check_strictly_feasible(g, lam)
    if ev is None:
        ev = nlp.evaluate(theta)
    jac = ev.jac
    nz, nT = L.stage_size, L.terminal_size

    # -J^T W J with W = Lambda G^-1 (negative), a nonnegative diagonal
    aug = np.bincount(nlp.ineq_var, weights=-lam / g, minlength=L.n_theta)
    if delta and not len(pattern.head_coords):
        raise DimensionError("regularization requires a pattern built with regularize=True")

    n_b = pattern.n_b
    M = np.zeros((L.N, n_b, n_b))
    M[:, :nz, :nz] = np.einsum("kij,kil->kjl", jac.f_stage, jac.f_stage)
    diag = np.arange(nz)
    M[:, diag, diag] += aug[:L.N * nz].reshape(L.N, nz)
    M[:, nz:, :nz] = jac.p_stage
    if delta:
        M[:, diag, diag] += delta
        dd = np.arange(nz, n_b)
        M[:, dd, dd] -= delta
    stage_vals = _gather(M, pattern.coords, "stage block")

    n_term = pattern.n_terminal
    T = np.zeros((n_term, n_term))
    T[:nT, :nT] = jac.f_term.T @ jac.f_term
    T[np.arange(nT), np.arange(nT)] += aug[L.terminal()]
    T[nT:, :nT] = jac.p_term
    if delta:
        T[np.arange(nT), np.arange(nT)] += delta
        T[np.arange(nT, n_term), np.arange(nT, n_term)] -= delta
    term_vals = _gather(T, pattern.terminal_coords, "terminal block")

    head_vals = np.full(len(pattern.head_coords), -float(delta))

    A = BlockSparseMatrix(pattern, stage_vals, head_vals, term_vals, -np.ones(pattern.n_couplings))
    lay = kkt_layout(nlp)
    r_dual, r_eq = kkt_residuals(nlp, ev, nu, lam, mu, g)
    return KktSystem(A, lay.merge(r_dual, r_eq), lay, r_dual, r_eq)


def default_regularization(A: BlockSparseMatrix) -> float:
    return 1e-8 * (1.0 + A.max_abs())


# --------------------------------------------------------------------------- CSV export


def write_pattern_csv(pattern: BlockPattern, directory) -> list[Path]:
    """Write ``pattern.csv`` (block_id,row,col), ``blocks.csv`` and ``couplings.csv``.

    Block ids: 0 = head, 1..N = stage blocks, N+1 = terminal.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blocks = [(0, "head", 0, pattern.n_head, pattern.head_coords)]
    for k, off in enumerate(pattern.stage_offsets):
        blocks.append((k + 1, "stage", int(off), pattern.n_b, pattern.coords))
    blocks.append((pattern.N_blocks + 1, "terminal", pattern.terminal_offset, pattern.n_terminal,
                   pattern.terminal_coords))
    paths = [d / "pattern.csv", d / "blocks.csv", d / "couplings.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "row", "col"])
        for bid, _, _, _, coords in blocks:
            for r, c in coords:
                w.writerow([bid, int(r), int(c)])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "kind", "offset", "size"])
        for bid, kind, off, size, _ in blocks:
            w.writerow([bid, kind, off, size])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "kind"])
        for r, c in pattern.couplings:
            w.writerow([int(r), int(c), pattern.coupling_kind])
    return paths


def read_pattern_csv(path, block_id: int | None = None) -> np.ndarray:
    """Coordinates of one block from a ``block_id,row,col`` file.

    With ``block_id=None`` the first block id in the file that has entries is used.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"block_id", "row", "col"} - set(reader.fieldnames or [])
        if missing:
            raise DimensionError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            rows.append((int(rec["block_id"]), int(rec["row"]), int(rec["col"])))
    if not rows:
        raise DimensionError(f"{path}: no entries")
    if block_id is None:
        block_id = rows[0][0]
    out = [(r, c) for b, r, c in rows if b == block_id]
    if not out:
        raise DimensionError(f"{path}: no entries for block {block_id}")
    return np.array(out, dtype=np.int64)
