"""Acceptance criteria 1-12, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the summary
section) or directly with ``python tests/test_acceptance.py``.
"""
import contextlib
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, X_HAT, crane_nlp, scalar_nlp  # noqa: E402
from hetnmpc import cli  # noqa: E402
from hetnmpc.hwmodel import HwConfig, block_cycles, matvec_latency, memory_report, tradeoff_sweep  # noqa: E402
from hetnmpc.ipm import IpmConfig, ipm_solve  # noqa: E402
from hetnmpc.kkt import BlockSparseMatrix, block_sparse_matvec, mac_coords, pattern_from_nlp, to_dense  # noqa: E402
from hetnmpc.minres import KktSolveConfig, minres_solve  # noqa: E402
from hetnmpc.model import crane_dynamics, crane_jacobians, crane_model, linear_model  # noqa: E402
from hetnmpc.sched import (initiation_interval, schedule_bnb, schedule_exhaustive, schedule_greedy,  # noqa: E402
                           verify_schedule)
from hetnmpc.simloop import closed_loop  # noqa: E402
from hetnmpc.transcription import crane_ocp, make_tableau  # noqa: E402
from test_minres import random_symmetric  # noqa: E402
from test_model import fd_jac  # noqa: E402
from test_transcription import _random_theta, one_step  # noqa: E402


@contextlib.contextmanager
def criterion(num, text):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except Exception as exc:
        line = f"criterion {num:2d}: FAIL  {text} ({type(exc).__name__}: {exc})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = f"criterion {num:2d}: PASS  {text} [{time.perf_counter() - t0:.2f}s{', ' + extra if extra else ''}]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_01_matvec_oracle():
    with criterion(1, "block-sparse matvec equals dense oracle, rel err <= 1e-12, < 5 s") as info:
        t0 = time.perf_counter()
        p = pattern_from_nlp(crane_nlp(5))
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(100):
            A = BlockSparseMatrix(p, rng.normal(size=(p.N_blocks, len(p.coords))), rng.normal(size=len(p.head_coords)),
                                  rng.normal(size=len(p.terminal_coords)), -np.ones(p.n_couplings))
            v = rng.normal(size=p.n_A)
            ref = to_dense(A) @ v
            worst = max(worst, np.linalg.norm(block_sparse_matvec(A, v) - ref) / np.linalg.norm(ref))
        info["worst_rel_err"] = f"{worst:.2e}"
        assert worst <= 1e-12
        assert time.perf_counter() - t0 < 5


def test_02_minres_random_systems():
    with criterion(2, "MINRES on 50 random symmetric systems: relres <= 1e-8 within n, matches direct <= 1e-6, < 10 s") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        worst_res = worst_err = 0.0
        n_indef = 0
        for i in range(50):
            n = int(rng.integers(2, 61))
            indefinite = i % 5 != 0
            n_indef += indefinite
            A = random_symmetric(rng, n, indefinite=indefinite)
            b = rng.normal(size=n)
            z, stats = minres_solve(A, b, max_iter=n, rtol=1e-10)
            ref = np.linalg.solve(A, b)
            assert stats.iterations <= n
            worst_res = max(worst_res, stats.final_relres)
            worst_err = max(worst_err, np.linalg.norm(z - ref) / np.linalg.norm(ref))
        info.update(indefinite=n_indef, worst_relres=f"{worst_res:.1e}", worst_err=f"{worst_err:.1e}")
        assert worst_res <= 1e-8 and worst_err <= 1e-6
        assert time.perf_counter() - t0 < 10


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_03_jacobians():
    with criterion(3, "analytic Jacobians (crane, NLP f, NLP p) match central differences <= 1e-5 rel") as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            x = np.array([rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.0),
                          rng.uniform(-0.5, 0.5), rng.uniform(-0.8, 0.8), rng.uniform(-2, 2)])
            u = rng.uniform(-0.15, 0.15, 2)
            jx, ju = crane_jacobians(x, u)
            worst = max(worst, _rel(jx, fd_jac(lambda z: crane_dynamics(z, u), x)),
                        _rel(ju, fd_jac(lambda z: crane_dynamics(x, z), u)))
        nlp = crane_nlp(3)
        for _ in range(20):
            theta = _random_theta(nlp, rng)
            Jf, Jp = nlp.dense_jacobians(theta)
            worst = max(worst, _rel(Jf, fd_jac(nlp.eval_f, theta)), _rel(Jp, fd_jac(nlp.eval_p, theta)))
        info["worst_rel"] = f"{worst:.1e}"
        assert worst <= 1e-5


def test_04_trapezoidal_exactness():
    with criterion(4, "trapezoidal one-step map equals (1 + h l/2)/(1 - h l/2) <= 1e-12") as info:
        rng = np.random.default_rng(4)
        tab = make_tableau("trapezoidal")
        worst = 0.0
        for _ in range(10):
            lam, h = rng.uniform(-10, 3), rng.uniform(0.01, 0.3)
            got = one_step(tab, linear_model([[lam]], [[0.0]]), np.array([1.0]), np.zeros(1), h)[0]
            worst = max(worst, abs(got - (1 + h * lam / 2) / (1 - h * lam / 2)))
        info["worst_abs"] = f"{worst:.1e}"
        assert worst <= 1e-12


def test_05_ipm_fixed_points():
    with criterion(5, "IPM fixed points: unconstrained within 1e-6, bound-constrained (theta, lambda) within 1e-4") as info:
        cfg = IpmConfig(n_iter=15)
        nlp = scalar_nlp(3.0)
        st, _ = ipm_solve(nlp, cfg)
        e1 = abs(st.theta[nlp.layout.u(0)][0] - 3.0)
        nlp = scalar_nlp(0.0, u_lb=1.0)
        st, _ = ipm_solve(nlp, cfg)
        e2 = max(abs(st.theta[nlp.layout.u(0)][0] - 1.0), abs(st.lam[0] - 1.0))
        info.update(err_unconstrained=f"{e1:.1e}", err_constrained=f"{e2:.1e}")
        assert e1 <= 1e-6 and e2 <= 1e-4


def test_06_crane_ocp_solve():
    with criterion(6, "crane N=10: 15 IPM iterations, MINRES count = n_A, r_eq and compl <= 1e-3, strictly feasible, < 60 s") as info:
        t0 = time.perf_counter()
        nlp = crane_nlp(10)
        pat = pattern_from_nlp(nlp)
        cfg = IpmConfig(n_iter=15, linear=KktSolveConfig(max_iter=pat.n_A, fixed_count=True))
        feasible = []

        def check(state):
            feasible.append(bool(np.all(nlp.g(state.theta) < 0) and np.all(state.lam > 0)))

        _, log = ipm_solve(nlp, cfg, pattern=pat, callback=check)
        last = log[-1]
        info.update(n_A=pat.n_A, r_eq=f"{last.r_eq_inf:.2e}", compl=f"{last.compl:.2e}")
        assert all(r.minres_iterations == pat.n_A for r in log[:-1])
        assert len(feasible) == 15 and all(feasible)
        assert last.r_eq_inf <= 1e-3 and last.compl <= 1e-3
        assert time.perf_counter() - t0 < 60


def test_07_closed_loop():
    with criterion(7, "closed loop from the benchmark state: |h_T| <= 0.05 within 15 s, inputs within +-0.15, < 5 min") as info:
        t0 = time.perf_counter()
        tr = closed_loop(crane_model(), crane_ocp(N=10, T_s=0.1), IpmConfig(), X_HAT, 150)
        h = tr.h_T_norms()
        below = np.flatnonzero(h <= 0.05)
        info.update(first_below=f"{tr.t[below[0]]:.1f}s" if len(below) else "never", final=f"{h[-1]:.1e}",
                    max_u=repr(float(np.max(np.abs(tr.u)))))
        assert tr.t[-1] == pytest.approx(15.0)
        assert len(below) and h[-1] <= 0.05
        assert np.all(tr.u >= -0.15) and np.all(tr.u <= 0.15)
        assert time.perf_counter() - t0 < 300


def test_08_scheduling():
    with criterion(8, "B&B equals exhaustive on <= 9 nnz (50 random + six-entry pattern = 3); greedy crane d_star >= 6, II = 1") as info:
        six = [(1, 1), (1, 2), (2, 1), (2, 3), (3, 2), (4, 4)]
        assert max(verify_schedule(six, p) for p in itertools.permutations(six)) == 3
        b = schedule_bnb(six)
        assert b.d_star == 3 and b.optimal
        rng = np.random.default_rng(8)
        for _ in range(50):
            k = int(rng.integers(1, 10))
            cells = rng.choice(16, size=k, replace=False)
            cs = [(int(c) // 4, int(c) % 4) for c in cells]
            assert schedule_bnb(cs).d_star == schedule_exhaustive(cs).d_star
        mac = mac_coords(pattern_from_nlp(crane_nlp(10)).coords)
        g = schedule_greedy(mac)
        info.update(crane_nnz=len(mac), greedy_d_star=g.d_star)
        assert g.d_star >= 6 and initiation_interval(g.d_star, 6) == 1


def test_09_scheduling_speedup():
    with criterion(9, "cycle ratio unscheduled/scheduled for a 161-nnz block in [5.0, 6.0]") as info:
        hw = HwConfig(adder_latency=6, multiplier_latency=5)
        r = block_cycles(161, 6, hw) / block_cycles(161, 1, hw)
        p = pattern_from_nlp(crane_nlp(10))
        raw = matvec_latency(p, None, hw)
        sch = matvec_latency(p, schedule_greedy(mac_coords(p.coords)), hw)
        r_crane = raw.block_cycles / sch.block_cycles
        info.update(ratio_161=f"{r:.3f}", ratio_crane_block=f"{r_crane:.3f}")
        assert 5.0 <= r <= 6.0 and 5.0 <= r_crane <= 6.0


def test_10_memory():
    with criterion(10, "memory ratio dense_band / block_sparse_scheduled >= 15 for crane N=20") as info:
        rep = memory_report(pattern_from_nlp(crane_nlp(20)))
        r = rep.ratio("dense_band", "block_sparse_scheduled")
        info.update(ratio=f"{r:.2f}", **rep.words)
        assert r >= 15


def test_11_parallel_saturation():
    with criterion(11, "tradeoff sweep with 10 blocks: identical cycles for P = 5..9, fewer for P = 10") as info:
        rows = tradeoff_sweep(pattern_from_nlp(crane_nlp(10)), HwConfig(), range(1, 11))
        c = {p: cyc for p, cyc, _ in rows}
        info.update(P5_9=c[5], P10=c[10])
        assert len({c[p] for p in range(5, 10)}) == 1 and c[10] < c[9]


def test_12_determinism(tmp_path):
    with criterion(12, "repeated CLI runs with a fixed seed give byte-identical CSVs"):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"N": 5, "sim": {"duration": 1.0}}))
        outs = []
        for rep in range(2):
            d = tmp_path / f"run{rep}"
            for cmd in ("solve", "simulate", "schedule", "hw-report"):
                assert cli.main([cmd, "--config", str(cfg), "--out", str(d / cmd), "--seed", "42"]) == 0
            outs.append({f.relative_to(d): f.read_bytes() for f in sorted(d.rglob("*")) if f.is_file()})
        assert len(outs[0]) >= 8 and outs[0] == outs[1]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
