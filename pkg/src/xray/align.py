"""Clock offset estimation between device logs and host traces.

Device and host clocks drift apart; the estimator picks the integer
offset (added to device timestamps) that minimizes the number of
commands falling outside every syscall interval. Candidate offsets are
the shifts that align some command timestamp with some interval
boundary, plus zero; on a violation-count tie, the smallest magnitude
wins, and an exact magnitude tie resolves toward the negative candidate
to stay deterministic. Quadratic in candidates, which is fine for the
per-run command counts this tool sees.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum

from .model import DeviceCommand, HostEvent, HostEventKind, XrayError


class AlignmentError(XrayError):
    pass


class OffsetMethod(Enum):
    CONFIGURED = "configured"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class ClockOffset:
    offset_ns: int
    method: OffsetMethod
    residual_violations: int

    def to_dict(self) -> dict:
        return {
            "offset_ns": self.offset_ns,
            "method": self.method.value,
            "residual_violations": self.residual_violations,
        }


def syscall_intervals(host_events: list[HostEvent]) -> list[tuple[int, int]]:
    """[start, end] interval per syscall, in trace order."""
    intervals: list[tuple[int, int]] = []
    open_ts: int | None = None
    for ev in host_events:
        if ev.kind is HostEventKind.SYSCALL_ENTER:
            open_ts = ev.ts
        elif ev.kind is HostEventKind.SYSCALL_EXIT and open_ts is not None:
            intervals.append((open_ts, ev.ts))
            open_ts = None
    return intervals


def count_violations(
    intervals: list[tuple[int, int]], cmd_ts: list[int], offset_ns: int
) -> int:
    """Commands that fall outside every interval after adding the offset.

    Interval bounds are inclusive. Syscalls execute sequentially, so the
    intervals are non-overlapping and checking the nearest start suffices.
    """
    ordered = sorted(intervals)
    starts = [s for s, _ in ordered]
    violations = 0
    for ts in cmd_ts:
        shifted = ts + offset_ns
        idx = bisect_right(starts, shifted) - 1
        if idx < 0 or shifted > ordered[idx][1]:
            violations += 1
    return violations


def estimate_offset(
    host_events: list[HostEvent], cmds: list[DeviceCommand]
) -> ClockOffset:
    """Estimate the device-to-host clock offset from interval containment."""
    intervals = syscall_intervals(host_events)
    if not intervals:
        raise AlignmentError("no anchors: host trace has no syscall intervals")
    cmd_ts = [c.ts for c in cmds]
    candidates = {0}
    for ts in cmd_ts:
        for start, end in intervals:
            candidates.add(start - ts)
            candidates.add(end - ts)
    best = min(
        candidates,
        key=lambda off: (count_violations(intervals, cmd_ts, off), abs(off), off),
    )
    return ClockOffset(
        offset_ns=best,
        method=OffsetMethod.ESTIMATED,
        residual_violations=count_violations(intervals, cmd_ts, best),
    )


def apply_offset(
    cmds: list[DeviceCommand], offset: ClockOffset | int
) -> list[DeviceCommand]:
    """Shift all command timestamps by the offset, preserving order."""
    delta = offset.offset_ns if isinstance(offset, ClockOffset) else int(offset)
    out: list[DeviceCommand] = []
    for cmd in cmds:
        shifted = cmd.ts + delta
        if shifted < 0:
            raise AlignmentError(
                f"offset {delta} ns drives command timestamp {cmd.ts} negative"
            )
        out.append(cmd.shifted(delta))
    return out
