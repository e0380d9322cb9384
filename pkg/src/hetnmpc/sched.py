"""Issue-order scheduling of the multiply-accumulate sweep over one block.

Each nonzero ``(row, col)`` of a block is issued in one slot of a pipelined
MAC unit, and entries that share an output row accumulate into the same
register. The scheduler orders the nonzeros to maximize ``d``, the minimum
number of slots strictly between two entries of the same row, so that the
adder pipeline can accept one entry per cycle.

Only the row sequence matters for ``d``: columns within a row are placed in
ascending order.
"""
from __future__ import annotations

import csv
import io
import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleError

GREEDY = "greedy"
BRANCH_AND_BOUND = "branch_and_bound"
EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class Schedule:
    """``order[t]`` is issued in slot ``t + 1``."""

    order: tuple
    d_star: int
    method: str
    optimal: bool = False

    @property
    def n_nz(self) -> int:
        return len(self.order)

    @property
    def pair_free(self) -> bool:
        """No two entries share a row (``d_star`` then equals ``n_nz``)."""
        return self.d_star >= self.n_nz


def schedule_interval(schedule: Schedule, adder_latency: int) -> int:
    """Issue interval of a schedule; pair-free blocks never wait on the adder."""
    if schedule.pair_free:
        return 1
    return initiation_interval(schedule.d_star, adder_latency)


def _as_coords(coords) -> list[tuple[int, int]]:
    arr = np.asarray(coords, dtype=int)
    if arr.size == 0:
        return []
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScheduleError(f"coords: expected (k, 2) integer pairs, got shape {arr.shape}")
    out = [tuple(int(v) for v in c) for c in arr]
    if len(set(out)) != len(out):
        raise ScheduleError("coords contain duplicate entries")
    return out


def _row_sequence_d(rows) -> int:
    last: dict = {}
    best = len(rows)
    for t, r in enumerate(rows):
        if r in last:
            best = min(best, t - last[r] - 1)
        last[r] = t
    return best


def verify_schedule(coords, order) -> int:
    """Achieved ``d`` of ``order``, a permutation of ``coords``.

    Returns ``len(coords)`` when no two entries share a row.
    """
    cs = _as_coords(coords)
    od = _as_coords(order)
    if len(od) != len(cs) or set(od) != set(cs):
        raise ScheduleError("order is not a permutation of coords")
    return _row_sequence_d([r for r, _ in od])


def _order_from_rows(coords, rows) -> tuple:
    by_row: dict = {}
    for r, c in sorted(coords):
        by_row.setdefault(r, []).append((r, c))
    pos = Counter()
    out = []
    for r in rows:
        out.append(by_row[r][pos[r]])
        pos[r] += 1
    return tuple(out)


def _lru_rows(counts: dict, n: int) -> list:
    rem = dict(counts)
    last = {r: -math.inf for r in rem}
    rows = []
    for t in range(n):
        r = min((q for q in rem if rem[q]), key=lambda q: (last[q], -rem[q], q))
        rows.append(r)
        rem[r] -= 1
        last[r] = t
    return rows


def _targeted_rows(counts: dict, n: int, d: int):
    """List scheduling at spacing ``d``: busiest ready row first, or None if a slot idles."""
    rem = dict(counts)
    last = {r: -math.inf for r in rem}
    rows = []
    for t in range(n):
        ready = [q for q in rem if rem[q] and t - last[q] > d]
        if not ready:
            return None
        r = min(ready, key=lambda q: (-rem[q], last[q], q))
        rows.append(r)
        rem[r] -= 1
        last[r] = t
    return rows


def schedule_greedy(coords) -> Schedule:
    """Deterministic heuristic schedule.

    Two passes: least-recently-used row first (ties to the row with most
    entries left, then by index), and list scheduling at decreasing target
    spacing from :func:`upper_bound`. The better order wins.
    """
    cs = _as_coords(coords)
    if not cs:
        raise ScheduleError("coords must be nonempty")
    counts = Counter(r for r, _ in cs)
    n = len(cs)
    rows = _lru_rows(counts, n)
    best = _row_sequence_d(rows)
    for d in range(upper_bound(cs), best, -1):
        cand = _targeted_rows(counts, n, d)
        if cand is not None:
            rows, best = cand, _row_sequence_d(cand)
            break
    order = _order_from_rows(cs, rows)
    return Schedule(order, verify_schedule(cs, order), GREEDY)


def upper_bound(coords) -> int:
    """Counting bound on ``d``.

    With ``c`` the largest row count and ``m`` the number of rows attaining
    it, those rows need ``(c - 1)(d + 1) + m`` slots.
    """
    cs = _as_coords(coords)
    n = len(cs)
    counts = Counter(r for r, _ in cs)
    c_max = max(counts.values(), default=0)
    if c_max < 2:
        return n
    m_max = sum(1 for v in counts.values() if v == c_max)
    return (n - m_max) // (c_max - 1) - 1


class _Timeout(Exception):
    pass


def _feasible_rows(counts: dict, n: int, d: int, deadline: float | None):
    """Row sequence with same-row spacing ``> d`` and no idle slot, or None."""
    gap = d + 1
    rows = sorted(counts)
    rem = {r: counts[r] for r in rows}
    ready = {r: 0 for r in rows}
    seq: list = []
    failed: set = set()
    ticks = [0]

    def key(t):
        return tuple(sorted((rem[r], max(0, ready[r] - t)) for r in rows if rem[r]))

    def dfs(t):
        if t == n:
            return True
        ticks[0] += 1
        if deadline is not None and ticks[0] % 256 == 0 and time.monotonic() > deadline:
            raise _Timeout
        for r in rows:
            if rem[r] and max(t, ready[r]) + (rem[r] - 1) * gap > n - 1:
                return False
        k = (t, key(t))
        if k in failed:
            return False
        tried = set()
        cands = sorted((r for r in rows if rem[r] and ready[r] <= t), key=lambda r: (-rem[r], r))
        for r in cands:
            if rem[r] in tried:
                continue
            tried.add(rem[r])
            old = ready[r]
            rem[r] -= 1
            ready[r] = t + gap
            seq.append(r)
            if dfs(t + 1):
                return True
            seq.pop()
            rem[r] += 1
            ready[r] = old
        failed.add(k)
        return False

    return list(seq) if dfs(0) else None


def schedule_bnb(coords, time_limit: float | None = 10.0) -> Schedule:
    """Maximize ``d`` by binary search over depth-first feasibility checks.

    Starts from the greedy value and the counting upper bound. When the time
    limit runs out, the best schedule found so far is returned with
    ``optimal=False``. ``time_limit <= 0`` skips the search.
    """
    cs = _as_coords(coords)
    if not cs:
        raise ScheduleError("coords must be nonempty")
    best = schedule_greedy(cs)
    lo, hi = best.d_star, upper_bound(cs)
    if lo >= hi:
        return Schedule(best.order, best.d_star, BRANCH_AND_BOUND, True)
    if time_limit is not None and time_limit <= 0:
        return Schedule(best.order, best.d_star, GREEDY, False)
    deadline = None if time_limit is None else time.monotonic() + time_limit
    counts = Counter(r for r, _ in cs)
    order = best.order
    optimal = True
    while lo < hi:
        mid = (lo + hi + 1) // 2
        try:
            rows = _feasible_rows(counts, len(cs), mid, deadline)
        except _Timeout:
            optimal = False
            break
        if rows is None:
            hi = mid - 1
        else:
            order = _order_from_rows(cs, rows)
            lo = verify_schedule(cs, order)
    return Schedule(order, verify_schedule(cs, order), BRANCH_AND_BOUND, optimal)


def _multiset_permutations(counts: dict, n: int):
    rows = sorted(counts)
    rem = dict(counts)
    seq: list = []

    def rec():
        if len(seq) == n:
            yield list(seq)
            return
        for r in rows:
            if rem[r]:
                rem[r] -= 1
                seq.append(r)
                yield from rec()
                seq.pop()
                rem[r] += 1

    yield from rec()


def schedule_exhaustive(coords, max_nnz: int = 12) -> Schedule:
    """Reference optimum by enumerating every distinct row sequence."""
    cs = _as_coords(coords)
    if not cs:
        raise ScheduleError("coords must be nonempty")
    if len(cs) > max_nnz:
        raise ScheduleError(f"exhaustive search limited to {max_nnz} nonzeros, got {len(cs)}")
    counts = Counter(r for r, _ in cs)
    best_rows, best_d = None, -1
    for rows in _multiset_permutations(counts, len(cs)):
        d = _row_sequence_d(rows)
        if d > best_d:
            best_rows, best_d = rows, d
    order = _order_from_rows(cs, best_rows)
    return Schedule(order, best_d, EXHAUSTIVE, True)


def initiation_interval(d_star: int, adder_latency: int) -> int:
    """Smallest issue interval keeping same-row additions ``adder_latency`` apart."""
    if d_star < 0:
        raise ValueError(f"d_star must be nonnegative, got {d_star}")
    if adder_latency < 1:
        raise ValueError(f"adder_latency must be at least 1, got {adder_latency}")
    return -(-adder_latency // (d_star + 1))


def schedule_to_csv(schedule: Schedule, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("slot", "block_row", "block_col"))
    for t, (r, c) in enumerate(schedule.order, start=1):
        w.writerow((t, r, c))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def summary_to_csv(schedule: Schedule, adder_latency: int, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("d_star", "II", "optimal", "method", "n_nz"))
    w.writerow((schedule.d_star, schedule_interval(schedule, adder_latency),
                int(schedule.optimal), schedule.method, schedule.n_nz))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
