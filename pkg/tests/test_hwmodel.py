import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crane_nlp
from hetnmpc.hwmodel import (HwConfig, bandwidth, block_cycles, latency_to_csv, matvec_latency,
                             memory_footprint, memory_report, memory_to_csv, saturation_points, tradeoff_sweep)
from hetnmpc.kkt import BlockPattern, mac_coords, pattern_from_nlp
from hetnmpc.sched import schedule_greedy

EMPTY = np.zeros((0, 2), dtype=int)


def test_block_cycle_formula():
    hw = HwConfig()
    assert block_cycles(161, 1, hw) == 172
    assert block_cycles(161, 6, hw) == 972
    assert block_cycles(161, 6, hw) / block_cycles(161, 1, hw) == pytest.approx(5.65, abs=0.01)
    assert block_cycles(0, 1, hw) == 0


def test_scheduled_beats_unscheduled(crane10_pattern):
    hw = HwConfig()
    sch = matvec_latency(crane10_pattern, schedule_greedy(mac_coords(crane10_pattern.coords)), hw)
    raw = matvec_latency(crane10_pattern, None, hw)
    assert sch.II == 1 and raw.II == 6
    assert sch.total_cycles < raw.total_cycles
    assert sch.block_cycles == 157 + 12
    assert sch.total_cycles == sch.rounds * sch.block_cycles + sch.coupling_cycles + sch.terminal_cycles


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 2000))
def test_ratio_tends_to_adder_latency(n):
    hw = HwConfig()
    r = block_cycles(n, 6, hw) / block_cycles(n, 1, hw)
    assert 1 < r < 6
    assert block_cycles(10 * n, 6, hw) / block_cycles(10 * n, 1, hw) > r


def test_rounds_and_clock_conversion(crane10_pattern):
    sched = schedule_greedy(mac_coords(crane10_pattern.coords))
    rep = matvec_latency(crane10_pattern, sched, HwConfig(P=10, clock_mhz=200.0))
    assert rep.rounds == 1
    assert rep.microseconds == pytest.approx(rep.total_cycles / 200.0)


def test_tradeoff_sweep_saturation(crane10_pattern):
    rows = tradeoff_sweep(crane10_pattern, HwConfig(), range(1, 11))
    cycles = {p: c for p, c, _ in rows}
    assert len({cycles[p] for p in range(5, 10)}) == 1
    assert cycles[10] < cycles[9]
    assert all(cycles[p + 1] <= cycles[p] for p in range(1, 10))
    assert saturation_points(rows) == [6, 7, 8, 9]
    sched = schedule_greedy(mac_coords(crane10_pattern.coords))
    for p, c, units in rows:
        assert c == matvec_latency(crane10_pattern, sched, HwConfig(P=p)).total_cycles
        assert units == p
    # coupling and terminal passes are not parallelized
    rep = matvec_latency(crane10_pattern, sched, HwConfig(P=1))
    fixed = rep.coupling_cycles + rep.terminal_cycles
    assert cycles[1] == 10 * rep.block_cycles + fixed
    assert cycles[10] == rep.block_cycles + fixed


def test_sweep_rejects_out_of_range_P(crane10_pattern):
    with pytest.raises(ValueError):
        tradeoff_sweep(crane10_pattern, HwConfig(), [0, 1])
    with pytest.raises(ValueError):
        HwConfig(P=0)
    with pytest.raises(ValueError):
        HwConfig(adder_latency=0)


def test_memory_counts_single_entry():
    p = BlockPattern(1, [(0, 0)], 1, 0, EMPTY, 0, EMPTY, EMPTY)
    assert memory_footprint(p, "dense_band") == 1
    assert memory_footprint(p, "block_dense") == 1
    assert memory_footprint(p, "block_sparse_scheduled") == 2
    with pytest.raises(ValueError):
        memory_footprint(p, "csr")


def test_crane_block_in_block_saving(crane10_pattern):
    assert 38 * 39 // 2 == 741
    assert 741 / len(crane10_pattern.coords) > 4.6


def test_memory_ordering_and_ratio():
    for N in (2, 5, 20):
        p = pattern_from_nlp(crane_nlp(N))
        m = memory_report(p).words
        assert m["block_sparse_scheduled"] <= m["block_dense"] <= m["dense_band"]
    rep = memory_report(pattern_from_nlp(crane_nlp(20)))
    assert rep.ratio("dense_band", "block_sparse_scheduled") >= 15


def test_bandwidth_includes_couplings(crane10_pattern):
    p = crane10_pattern
    rows, cols = p.global_entries()
    assert bandwidth(p) >= int(np.max(rows - cols))
    assert bandwidth(p) >= int(np.max(p.couplings[:, 0] - p.couplings[:, 1]))


def test_csv_outputs(crane10_pattern):
    text = latency_to_csv([matvec_latency(crane10_pattern, None, HwConfig())])
    assert text.splitlines()[0].startswith("P,n_nz,d_star,II")
    mem = memory_to_csv(memory_report(crane10_pattern)).splitlines()
    assert [l.split(",")[0] for l in mem[1:]] == ["dense_band", "block_dense", "block_sparse_scheduled"]
