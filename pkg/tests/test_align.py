"""Clock offset estimation: interval extraction, violation counting, search."""

from __future__ import annotations

import pytest

from xray.align import (
    AlignmentError,
    ClockOffset,
    OffsetMethod,
    apply_offset,
    count_violations,
    estimate_offset,
    syscall_intervals,
)
from xray.devlog import build_command
from xray.model import HostEvent, HostEventKind, Protocol

E = HostEventKind


def events_for(intervals: list[tuple[int, int]]) -> list[HostEvent]:
    events = []
    for i, (start, end) in enumerate(intervals):
        events.append(HostEvent(kind=E.SYSCALL_ENTER, name=f"op{i}", ts=start))
        events.append(HostEvent(kind=E.FUNC_ENTER, name="k", ts=start, depth=0))
        events.append(HostEvent(kind=E.FUNC_EXIT, name="k", ts=end, depth=0))
        events.append(HostEvent(kind=E.SYSCALL_EXIT, name=f"op{i}", ts=end))
    return events


def cmds_at(ts_list: list[int]):
    return [
        build_command(Protocol.SCSI, "WRITE_10", ts, lba=8, block_count=1)
        for ts in ts_list
    ]


def test_syscall_intervals_extraction() -> None:
    assert syscall_intervals(events_for([(100, 200), (300, 400)])) == [
        (100, 200),
        (300, 400),
    ]
    assert syscall_intervals([]) == []


def test_count_violations_bounds_are_inclusive() -> None:
    intervals = [(100, 200)]
    assert count_violations(intervals, [100], 0) == 0
    assert count_violations(intervals, [200], 0) == 0
    assert count_violations(intervals, [99], 0) == 1
    assert count_violations(intervals, [201], 0) == 1
    assert count_violations(intervals, [99, 201, 150], 0) == 2
    assert count_violations(intervals, [99], 1) == 0


def test_offset_plus_five_recovers_single_command() -> None:
    events = events_for([(100, 200)])
    offset = estimate_offset(events, cmds_at([95]))
    assert offset.offset_ns == 5
    assert offset.residual_violations == 0
    assert offset.method is OffsetMethod.ESTIMATED
    assert offset.to_dict() == {
        "offset_ns": 5, "method": "estimated", "residual_violations": 0,
    }


def test_uniform_shift_recovered_exactly() -> None:
    intervals = [(10_100, 10_200), (10_300, 10_400)]
    true_ts = [10_100, 10_200, 10_300, 10_400]  # touching every boundary
    for delta in (-37, 300, -8_000, 5_000):
        observed = [ts - delta for ts in true_ts]
        offset = estimate_offset(events_for(intervals), cmds_at(observed))
        assert offset.offset_ns == delta
        assert offset.residual_violations == 0


def test_already_aligned_log_estimates_zero() -> None:
    offset = estimate_offset(events_for([(100, 200)]), cmds_at([150, 170]))
    assert offset.offset_ns == 0 and offset.residual_violations == 0


def test_equal_magnitude_tie_resolves_negative() -> None:
    # 95 fits at +5 (into [100, 110]) or at -5 (onto the 90 boundary).
    offset = estimate_offset(events_for([(80, 90), (100, 110)]), cmds_at([95]))
    assert offset.offset_ns == -5
    assert offset.residual_violations == 0


def brute_force(intervals, ts_list, lo=-1_000, hi=1_000) -> int:
    return min(
        range(lo, hi + 1),
        key=lambda off: (count_violations(intervals, ts_list, off), abs(off), off),
    )


@pytest.mark.parametrize(
    ("intervals", "ts_list"),
    [
        ([(100, 200)], [95]),
        ([(100, 150), (300, 350)], [90, 160, 290, 500]),
        ([(100, 150), (300, 350)], [40, 240]),
        ([(0, 10), (20, 30), (40, 50)], [15, 35, 55]),
        ([(100, 110)], [105, 700]),
        ([(500, 600)], [505, 506, 507, 610]),
    ],
)
def test_estimator_matches_brute_force_oracle(intervals, ts_list) -> None:
    got = estimate_offset(events_for(intervals), cmds_at(ts_list))
    want = brute_force(intervals, ts_list)
    assert got.offset_ns == want
    assert got.residual_violations == count_violations(intervals, ts_list, want)


def test_estimate_requires_anchors() -> None:
    with pytest.raises(AlignmentError, match="no anchors"):
        estimate_offset([], cmds_at([5]))
    kernel_only = [HostEvent(kind=E.FUNC_ENTER, name="k", ts=1)]
    with pytest.raises(AlignmentError, match="no syscall intervals"):
        estimate_offset(kernel_only, cmds_at([5]))


def test_apply_offset_shifts_and_validates() -> None:
    cmds = cmds_at([100, 200])
    shifted = apply_offset(cmds, 50)
    assert [c.ts for c in shifted] == [150, 250]
    assert [c.raw for c in shifted] == [c.raw for c in cmds]

    via_clock = apply_offset(cmds, ClockOffset(50, OffsetMethod.CONFIGURED, 0))
    assert via_clock == shifted
    assert apply_offset(cmds, 0) == cmds

    with pytest.raises(AlignmentError, match="negative"):
        apply_offset(cmds, -101)


def test_simulated_scenario_offset(barrier_abnormal) -> None:
    assert barrier_abnormal.offset.offset_ns == 5_000
    assert barrier_abnormal.offset.residual_violations == 0
    assert barrier_abnormal.result.ground_truth.expected_offset_ns == 5_000
