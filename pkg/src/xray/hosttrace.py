"""Host-side kernel trace parsing and epoch reconstruction.

Trace format, one event per line, ``#`` starts a comment:

    S <syscall>@<epoch_ns>        syscall anchor carrying a wall-clock epoch
    K <name>() {                  kernel function entry
    K <name>(); <duration_ns>     kernel leaf call with its duration
    K } <duration_ns>             kernel function exit with its duration

Kernel lines are indented two spaces per nesting level. Only syscall
anchors carry epochs; kernel functions carry durations. A function's
entry epoch is reconstructed as the anchor epoch plus the sum of all
completed durations that precede it inside the anchor's scope, and its
exit epoch is its entry plus its own duration. Any parent slack (self
time) therefore sits after its children, which is the only placement the
duration-only format can express.

Unbalanced traces are repaired, not rejected: a function still open at
the next anchor or at end of file is synthetically closed there, and a
warning is recorded. A kernel line before any anchor is an error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from .model import HostEvent, HostEventKind, XrayError


class HostTraceParseError(XrayError):
    """A malformed host trace line; carries the source name and line number."""

    def __init__(self, reason: str, line_no: int, source: str = "<host>") -> None:
        self.reason = reason
        self.line_no = line_no
        self.source = source
        super().__init__(f"{source}:{line_no}: {reason}")


class LineKind(Enum):
    SYSCALL_ANCHOR = "SyscallAnchor"
    FUNC_ENTRY = "FuncEntry"
    FUNC_LEAF = "FuncLeaf"
    FUNC_EXIT = "FuncExit"


@dataclass(frozen=True)
class HostTraceLine:
    kind: LineKind
    line_no: int
    depth: int = 0
    name: str | None = None
    epoch_ns: int | None = None
    duration_ns: int | None = None


_ANCHOR_RE = re.compile(r"^S ([A-Za-z0-9_.]+)@(\d+)$")
_ENTRY_RE = re.compile(r"^K ((?:  )*)([A-Za-z0-9_.]+)\(\) \{$")
_LEAF_RE = re.compile(r"^K ((?:  )*)([A-Za-z0-9_.]+)\(\); (\d+)$")
_EXIT_RE = re.compile(r"^K ((?:  )*)\} (\d+)$")


def iter_trace_lines(
    lines: Iterable[str] | str, source: str = "<host>"
) -> Iterator[HostTraceLine]:
    """Tokenize a host trace, rejecting lines of unknown shape."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    for line_no, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        m = _ANCHOR_RE.match(body)
        if m:
            yield HostTraceLine(
                LineKind.SYSCALL_ANCHOR, line_no, name=m.group(1), epoch_ns=int(m.group(2))
            )
            continue
        m = _ENTRY_RE.match(body)
        if m:
            yield HostTraceLine(
                LineKind.FUNC_ENTRY, line_no, depth=len(m.group(1)) // 2, name=m.group(2)
            )
            continue
        m = _LEAF_RE.match(body)
        if m:
            yield HostTraceLine(
                LineKind.FUNC_LEAF,
                line_no,
                depth=len(m.group(1)) // 2,
                name=m.group(2),
                duration_ns=int(m.group(3)),
            )
            continue
        m = _EXIT_RE.match(body)
        if m:
            yield HostTraceLine(
                LineKind.FUNC_EXIT, line_no, depth=len(m.group(1)) // 2, duration_ns=int(m.group(2))
            )
            continue
        raise HostTraceParseError(f"unrecognized line shape: {body!r}", line_no, source)


@dataclass
class _Frame:
    name: str
    entry: int
    cursor: int
    line_no: int


@dataclass
class _Scope:
    name: str
    anchor: int
    cursor: int
    max_end: int


@dataclass
class HostTrace:
    """Parsed host trace: timestamped events plus repair warnings."""

    events: list[HostEvent] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def reconstruct_epochs(
    lines: Iterable[HostTraceLine],
    source: str = "<host>",
    thread_id: int = 0,
) -> tuple[list[HostEvent], list[str]]:
    """Turn tokenized lines into timestamped events.

    Returns (events, warnings). Events are ordered by timestamp; every
    function entry has a matching exit, synthesizing one where the input
    is unbalanced.
    """
    events: list[HostEvent] = []
    warnings: list[str] = []
    frames: list[_Frame] = []
    scope: _Scope | None = None

    def emit(kind: HostEventKind, name: str, ts: int, depth: int) -> None:
        events.append(HostEvent(kind=kind, name=name, ts=ts, depth=depth, thread_id=thread_id))

    def cursor() -> int:
        assert scope is not None
        return frames[-1].cursor if frames else scope.cursor

    def advance(end: int) -> None:
        assert scope is not None
        if frames:
            frames[-1].cursor = end
        else:
            scope.cursor = end
        scope.max_end = max(scope.max_end, end)

    def force_close_frames(at: int | None, reason: str) -> None:
        # Innermost first. With no epoch to close at (end of file), a frame
        # closes at its own cursor: entry plus the durations of its
        # completed children.
        while frames:
            f = frames.pop()
            end = max(f.entry, at) if at is not None else f.cursor
            emit(HostEventKind.FUNC_EXIT, f.name, end, len(frames))
            advance(end)
            warnings.append(
                f"{source}:{f.line_no}: {f.name} never closed, synthetically closed {reason}"
            )

    def close_scope() -> None:
        nonlocal scope
        if scope is not None:
            emit(HostEventKind.SYSCALL_EXIT, scope.name, scope.max_end, 0)
            scope = None

    for ln in lines:
        if ln.kind is LineKind.SYSCALL_ANCHOR:
            assert ln.name is not None and ln.epoch_ns is not None
            force_close_frames(ln.epoch_ns if scope is not None else None, "at next anchor")
            close_scope()
            scope = _Scope(name=ln.name, anchor=ln.epoch_ns, cursor=ln.epoch_ns, max_end=ln.epoch_ns)
            emit(HostEventKind.SYSCALL_ENTER, ln.name, ln.epoch_ns, 0)
            continue
        if scope is None:
            raise HostTraceParseError("orphan kernel event before any anchor", ln.line_no, source)
        if ln.kind is LineKind.FUNC_ENTRY:
            assert ln.name is not None
            start = cursor()
            emit(HostEventKind.FUNC_ENTER, ln.name, start, len(frames))
            frames.append(_Frame(name=ln.name, entry=start, cursor=start, line_no=ln.line_no))
        elif ln.kind is LineKind.FUNC_LEAF:
            assert ln.name is not None and ln.duration_ns is not None
            start = cursor()
            end = start + ln.duration_ns
            depth = len(frames)
            emit(HostEventKind.FUNC_ENTER, ln.name, start, depth)
            emit(HostEventKind.FUNC_EXIT, ln.name, end, depth)
            advance(end)
        else:  # FUNC_EXIT
            assert ln.duration_ns is not None
            if not frames:
                warnings.append(f"{source}:{ln.line_no}: unmatched closer ignored")
                continue
            f = frames.pop()
            end = f.entry + ln.duration_ns
            if end < f.cursor:
                warnings.append(
                    f"{source}:{ln.line_no}: {f.name} duration shorter than its children"
                )
            emit(HostEventKind.FUNC_EXIT, f.name, end, len(frames))
            advance(end)

    force_close_frames(None, "at end of trace")
    close_scope()
    return events, warnings


def parse_host_trace(
    lines: Iterable[str] | str, source: str = "<host>", thread_id: int = 0
) -> HostTrace:
    """Parse trace text into timestamped events with repair warnings."""
    events, warnings = reconstruct_epochs(iter_trace_lines(lines, source), source, thread_id)
    return HostTrace(events=events, warnings=warnings)
