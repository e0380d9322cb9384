"""MINRES on the Lanczos three-term recurrence, with a sparsity-preserving prescaler.

Each iteration uses exactly two scalar divisions and two scalar square roots;
everything else is vector work and one matrix-vector product. Scalar
``_div``/``_sqrt`` go through :data:`SCALAR_OPS` so tests can count them.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MinresBreakdown
from .kkt import DIAGONAL, BlockSparseMatrix, KktSystem, block_sparse_matvec

SCALAR_OPS: Counter = Counter()


def _div(a, b):
    SCALAR_OPS["div"] += 1
    return a / b


def _sqrt(a):
    SCALAR_OPS["sqrt"] += 1
    return math.sqrt(a)


@dataclass
class MinresStats:
    iterations: int
    final_relres: float
    converged: bool
    residual_history: list
    lanczos_vectors: list | None = None


@dataclass(eq=False)
class PrescaledSystem:
    A_tilde: BlockSparseMatrix
    b_tilde: np.ndarray
    D: np.ndarray


def _as_operator(A):
    if isinstance(A, BlockSparseMatrix):
        return lambda v: block_sparse_matvec(A, v), A.shape[0]
    if callable(A):
        raise DimensionError("callable operators need an explicit size; wrap them in a matrix")
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A: expected a square matrix, got shape {A.shape}")
    return (lambda v: A @ v), A.shape[0]


def row_norms(A: BlockSparseMatrix) -> np.ndarray:
    """Euclidean norms of the rows of the full symmetric matrix."""
    p = A.pattern
    rows, cols = p.global_entries()
    vals = A.all_values().astype(float)
    sq = vals**2
    off = rows != cols
    acc = np.bincount(rows, weights=sq, minlength=p.n_A)
    acc += np.bincount(cols[off], weights=sq[off], minlength=p.n_A)
    if p.n_couplings:
        cv = A.coupling_values.astype(float) ** 2 if p.coupling_kind == DIAGONAL else np.ones(p.n_couplings)
        acc += np.bincount(p.couplings[:, 0], weights=cv, minlength=p.n_A)
        acc += np.bincount(p.couplings[:, 1], weights=cv, minlength=p.n_A)
    return np.sqrt(acc)


def prescale(A: BlockSparseMatrix, b) -> PrescaledSystem:
    """Symmetric scaling ``D A D`` with ``D_i = ||row_i||^(-1/2)``.

    The block pattern is unchanged; negative-identity couplings become general
    diagonals ``-D_i D_j``.
    """
    p = A.pattern
    norms = row_norms(A)
    D = np.ones(p.n_A)
    nz = norms > 0
    D[nz] = 1.0 / np.sqrt(norms[nz])

    def scale(coords, offset, values):
        if not len(coords):
            return values.copy()
        return values * D[offset + coords[:, 0]] * D[offset + coords[:, 1]]

    offs = p.stage_offsets
    stage = A.stage_values * D[offs[:, None] + p.coords[:, 0]] * D[offs[:, None] + p.coords[:, 1]] \
        if len(p.coords) else A.stage_values.copy()
    head = scale(p.head_coords, 0, A.head_values)
    term = scale(p.terminal_coords, p.terminal_offset, A.terminal_values)
    cpl = np.zeros(0)
    if p.n_couplings:
        base = A.coupling_values if p.coupling_kind == DIAGONAL else -np.ones(p.n_couplings)
        cpl = base * D[p.couplings[:, 0]] * D[p.couplings[:, 1]]
    At = BlockSparseMatrix(p.with_coupling_kind(DIAGONAL), stage.astype(A.dtype), head.astype(A.dtype),
                           term.astype(A.dtype), cpl.astype(A.dtype))
    return PrescaledSystem(At, (D * np.asarray(b)).astype(A.dtype), D)


def minres_solve(A, b, max_iter: int | None = None, rtol: float = 1e-8, fixed_count: bool = False,
                 dtype=None, record: bool = False):
    """Solve symmetric ``A z = b`` by MINRES from ``z0 = 0``.

    Stops when the recurrence residual estimate drops below ``rtol * ||b||``
    (unless ``fixed_count``) or after ``max_iter`` iterations. Returns
    ``(z, MinresStats)``; ``final_relres`` is the true relative residual.
    With ``record`` the full residual-estimate history and the Lanczos
    vectors are kept.
    """
    op, n = _as_operator(A)
    if dtype is None:
        dtype = A.dtype if isinstance(A, BlockSparseMatrix) else np.float64
    dtype = np.dtype(dtype)
    b = np.asarray(b, dtype=dtype)
    if b.shape != (n,):
        raise DimensionError(f"b: expected length {n}, got {b.shape}")
    if max_iter is None:
        max_iter = n
    z = np.zeros(n, dtype=dtype)
    beta1 = math.sqrt(float(b @ b))
    history = [beta1]
    if beta1 == 0.0:
        return z, MinresStats(0, 0.0, True, history)
    tol = rtol * beta1

    v_prev = np.zeros(n, dtype=dtype)
    v = b / dtype.type(beta1)
    beta = 0.0
    # previous Givens rotation and QR bookkeeping
    cs, sn = -1.0, 0.0
    dbar, epsln = 0.0, 0.0
    phibar = beta1
    w = np.zeros(n, dtype=dtype)
    w2 = np.zeros(n, dtype=dtype)
    converged = False
    eps = float(np.finfo(dtype).eps)
    anorm = 0.0
    basis = [v] if record else None
    it = 0
    for it in range(1, max_iter + 1):
        # Lanczos: y = A v_k - beta_k v_{k-1} - alpha_k v_k
        y = op(v).astype(dtype, copy=False)
        if beta:
            y = y - dtype.type(beta) * v_prev
        alpha = float(v @ y)
        y = y - dtype.type(alpha) * v
        beta_next = _sqrt(float(y @ y))
        anorm = max(anorm, abs(alpha) + beta + beta_next)

        # apply the previous rotation, then build the new one
        oldeps = epsln
        delta = cs * dbar + sn * alpha
        gbar = sn * dbar - cs * alpha
        epsln = sn * beta_next
        dbar = -cs * beta_next
        gamma = _sqrt(gbar * gbar + beta_next * beta_next)
        if gamma == 0.0:
            raise MinresBreakdown(f"singular tridiagonal at iteration {it}")
        inv_gamma = _div(1.0, gamma)
        cs = gbar * inv_gamma
        sn = beta_next * inv_gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - dtype.type(oldeps) * w1 - dtype.type(delta) * w2) * dtype.type(inv_gamma)
        z = z + dtype.type(phi) * w
        history.append(abs(phibar))

        if abs(phibar) <= tol and not fixed_count:
            converged = True
            break
        # invariant Krylov subspace: the residual cannot shrink any further
        if beta_next <= eps * anorm:
            if abs(phibar) <= max(tol, 4 * eps * beta1):
                converged = True
                break
            raise MinresBreakdown(f"Lanczos breakdown at iteration {it} with residual {abs(phibar):.3e}")
        inv_beta = _div(1.0, beta_next)
        v_prev, v = v, y * dtype.type(inv_beta)
        beta = beta_next
        if record:
            basis.append(v)

    res = b.astype(float) - op(z).astype(float)
    relres = float(np.linalg.norm(res)) / beta1
    converged = converged or relres <= rtol
    stats = MinresStats(it, relres, converged, history if record else history[-1:], basis)
    return z, stats


@dataclass
class KktSolveConfig:
    rtol: float = 1e-8
    max_iter: int | None = None
    fixed_count: bool = False
    prescale: bool = True
    precision: str = "double"
    method: str = "minres"

    def __post_init__(self):
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.method not in ("minres", "dense"):
            raise ValueError(f"method must be 'minres' or 'dense', got {self.method!r}")


def solve_kkt(system: KktSystem, cfg: KktSolveConfig | None = None):
    """Solve an assembled KKT system; returns ``(dtheta, dnu, stats)``."""
    from .kkt import to_dense

    cfg = cfg or KktSolveConfig()
    A, b = system.A, system.b
    if cfg.method == "dense":
        z = np.linalg.solve(to_dense(A).astype(float), b)
        relres = float(np.linalg.norm(b - block_sparse_matvec(A, z)) / max(np.linalg.norm(b), 1e-300))
        stats = MinresStats(0, relres, True, [])
    else:
        dtype = np.float32 if cfg.precision == "single" else np.float64
        max_iter = cfg.max_iter if cfg.max_iter is not None else A.shape[0]
        if cfg.prescale:
            ps = prescale(A.astype(dtype), b)
            zt, stats = minres_solve(ps.A_tilde, ps.b_tilde, max_iter, cfg.rtol, cfg.fixed_count, dtype)
            z = ps.D * zt.astype(float)
        else:
            z, stats = minres_solve(A.astype(dtype), b, max_iter, cfg.rtol, cfg.fixed_count, dtype)
            z = z.astype(float)
        nb = np.linalg.norm(b)
        stats.final_relres = float(np.linalg.norm(b - block_sparse_matvec(A, z)) / nb) if nb else 0.0
    dtheta, dnu = system.layout.split(z)
    return dtheta, dnu, stats
