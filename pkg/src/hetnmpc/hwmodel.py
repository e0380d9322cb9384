"""Cycle and memory models for the pipelined block-sparse matrix-vector product.

A block is swept by one MAC unit: a nonzero enters every ``II`` cycles, and
the last one drains through the multiplier and adder pipelines. ``P`` units
process blocks in parallel rounds. The negative-identity couplings are pure
data transfers and cost one cycle each.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .kkt import BlockPattern, mac_coords
from .sched import Schedule, schedule_greedy, schedule_interval, verify_schedule

MEMORY_MODES = ("dense_band", "block_dense", "block_sparse_scheduled")


@dataclass(frozen=True)
class HwConfig:
    adder_latency: int = 6
    multiplier_latency: int = 5
    P: int = 1
    clock_mhz: float | None = None

    def __post_init__(self):
        if self.adder_latency < 1 or self.multiplier_latency < 1:
            raise ValueError("latencies must be at least 1 cycle")
        if self.P < 1:
            raise ValueError(f"P must be at least 1, got {self.P}")
        if self.clock_mhz is not None and not self.clock_mhz > 0:
            raise ValueError(f"clock_mhz must be positive, got {self.clock_mhz}")


@dataclass
class LatencyReport:
    P: int
    n_nz: int
    d_star: int
    II: int
    block_cycles: int
    rounds: int
    coupling_cycles: int
    terminal_cycles: int
    total_cycles: int
    microseconds: float | None = None


@dataclass
class MemoryReport:
    words: dict = field(default_factory=dict)

    def ratio(self, num: str, den: str) -> float:
        return self.words[num] / self.words[den]


def block_cycles(n_nz: int, II: int, hw: HwConfig) -> int:
    """Issue ``n_nz`` entries at interval ``II`` and drain both pipelines."""
    if n_nz <= 0:
        return 0
    return II * (n_nz - 1) + hw.multiplier_latency + hw.adder_latency + 1


def _unscheduled(coords) -> Schedule:
    order = tuple(tuple(int(v) for v in c) for c in sorted(map(tuple, coords)))
    return Schedule(order, verify_schedule(order, order), "row_major")


def matvec_latency(pattern: BlockPattern, schedule: Schedule | None, hw: HwConfig) -> LatencyReport:
    """Cycle count of one matvec.

    ``schedule`` orders the MAC operations of one stage block; ``None`` means
    row-major issue order. Stage blocks run in ``ceil(N_blocks / P)`` rounds,
    then the terminal block runs once.
    """
    mac = mac_coords(pattern.coords)
    sch = schedule if schedule is not None else _unscheduled(mac)
    if len(mac) and verify_schedule(mac, sch.order) != sch.d_star:
        raise ValueError("schedule does not match the block pattern")
    II = schedule_interval(sch, hw.adder_latency)
    per_block = block_cycles(len(mac), II, hw)
    rounds = math.ceil(pattern.N_blocks / hw.P)
    term = 0
    if len(pattern.terminal_coords):
        tmac = mac_coords(pattern.terminal_coords)
        tsch = schedule_greedy(tmac) if schedule is not None else _unscheduled(tmac)
        term = block_cycles(len(tmac), schedule_interval(tsch, hw.adder_latency), hw)
    total = rounds * per_block + pattern.n_couplings + term
    us = total / hw.clock_mhz if hw.clock_mhz else None
    return LatencyReport(hw.P, len(mac), sch.d_star, II, per_block, rounds, pattern.n_couplings, term, total, us)


def bandwidth(pattern: BlockPattern) -> int:
    """Largest ``row - col`` over stored entries and couplings."""
    rows, cols = pattern.global_entries()
    bw = int(np.max(rows - cols)) if len(rows) else 0
    if pattern.n_couplings:
        bw = max(bw, int(np.max(pattern.couplings[:, 0] - pattern.couplings[:, 1])))
    return bw


def memory_footprint(pattern: BlockPattern, mode: str) -> int:
    """Words needed to store the symmetric matrix in the given mode.

    ``block_sparse_scheduled`` stores the lower-triangle values, one word per
    coupling, and one metadata word (a packed row/col pair) per position of
    each distinct block pattern. All stage blocks share one pattern and hence
    one copy of the metadata.
    """
    tri = lambda k: k * (k + 1) // 2
    if mode == "dense_band":
        return (bandwidth(pattern) + 1) * pattern.n_A
    if mode == "block_dense":
        return pattern.N_blocks * tri(pattern.n_b) + tri(pattern.n_head) + tri(pattern.n_terminal)
    if mode == "block_sparse_scheduled":
        meta = len(pattern.coords) + len(pattern.head_coords) + len(pattern.terminal_coords)
        return pattern.nnz_lower + pattern.n_couplings + meta
    raise ValueError(f"unknown memory mode {mode!r}; expected one of {MEMORY_MODES}")


def memory_report(pattern: BlockPattern) -> MemoryReport:
    return MemoryReport({m: memory_footprint(pattern, m) for m in MEMORY_MODES})


def tradeoff_sweep(pattern: BlockPattern, hw_base: HwConfig, P_range, schedule: Schedule | None = None):
    """Rows ``(P, total_cycles, mac_units)`` for each ``P`` in ``P_range``."""
    if schedule is None:
        schedule = schedule_greedy(mac_coords(pattern.coords))
    rows = []
    for P in P_range:
        if not 1 <= P <= pattern.N_blocks:
            raise ValueError(f"P={P} outside [1, {pattern.N_blocks}]")
        hw = HwConfig(hw_base.adder_latency, hw_base.multiplier_latency, int(P), hw_base.clock_mhz)
        rows.append((int(P), matvec_latency(pattern, schedule, hw).total_cycles, int(P)))
    return rows


def saturation_points(rows) -> list[int]:
    """Values of ``P`` that give no speedup over the next smaller ``P``."""
    return [p for (p0, c0, _), (p, c, _) in zip(rows, rows[1:]) if c >= c0]


def _write(header, rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def latency_to_csv(reports, path=None) -> str:
    cols = ("P", "n_nz", "d_star", "II", "block_cycles", "rounds", "coupling_cycles",
            "terminal_cycles", "total_cycles", "microseconds")
    rows = [[getattr(r, c) if getattr(r, c) is not None else "" for c in cols] for r in reports]
    for row in rows:
        if row[-1] != "":
            row[-1] = repr(float(row[-1]))
    return _write(cols, rows, path)


def memory_to_csv(report: MemoryReport, path=None) -> str:
    base = report.words["block_sparse_scheduled"]
    rows = [(m, report.words[m], repr(report.words[m] / base)) for m in MEMORY_MODES]
    return _write(("mode", "words", "ratio_to_block_sparse_scheduled"), rows, path)
