"""Correlation tree construction: attachment, flags, id layout, errors."""

from __future__ import annotations

import pytest

from xray.devlog import build_command
from xray.explorer import BuildError, build_tree
from xray.model import (
    HostEvent,
    HostEventKind,
    NodeKind,
    Protocol,
    validate_tree,
)

E = HostEventKind


def ev(kind: HostEventKind, name: str, ts: int, depth: int = 0) -> HostEvent:
    return HostEvent(kind=kind, name=name, ts=ts, depth=depth)


HOST_EVENTS = [
    ev(E.SYSCALL_ENTER, "fsync", 100),
    ev(E.FUNC_ENTER, "vfs_fsync", 120),
    ev(E.FUNC_ENTER, "filemap_write_and_wait_range", 150, 1),
    ev(E.FUNC_EXIT, "filemap_write_and_wait_range", 400, 1),
    ev(E.FUNC_ENTER, "blkdev_issue_flush", 400, 1),
    ev(E.FUNC_EXIT, "blkdev_issue_flush", 800, 1),
    ev(E.FUNC_EXIT, "vfs_fsync", 950),
    ev(E.SYSCALL_EXIT, "fsync", 1_000),
]


def cmd_at(ts: int):
    return build_command(Protocol.SCSI, "WRITE_10", ts, lba=0, block_count=1)


def test_host_only_tree_shape() -> None:
    tree = build_tree(HOST_EVENTS, [])
    assert [(n.id, n.kind, n.name) for n in tree.nodes] == [
        (0, NodeKind.SYSCALL, "fsync"),
        (1, NodeKind.KERNEL, "vfs_fsync"),
        (2, NodeKind.KERNEL, "filemap_write_and_wait_range"),
        (3, NodeKind.KERNEL, "blkdev_issue_flush"),
    ]
    assert tree.roots == [0]
    assert tree.nodes[0].children == [1]
    assert tree.nodes[1].children == [2, 3]
    assert tree.meta == {"unanchored": [], "gap_attached": []}
    assert validate_tree(tree) == []


def test_command_attachment_and_flags() -> None:
    cmds = [cmd_at(ts) for ts in (300, 400, 960, 110, 50, 1_500)]
    tree = build_tree(HOST_EVENTS, cmds)
    assert validate_tree(tree) == []

    expected = [
        (0, NodeKind.SYSCALL, "fsync", None),
        (1, NodeKind.CMD, "WRITE_10", 0),      # ts 50: unanchored, first root
        (2, NodeKind.CMD, "WRITE_10", 0),      # ts 110: gap before vfs_fsync
        (3, NodeKind.KERNEL, "vfs_fsync", 0),
        (4, NodeKind.KERNEL, "filemap_write_and_wait_range", 3),
        (5, NodeKind.CMD, "WRITE_10", 4),      # ts 300: deepest containing node
        (6, NodeKind.KERNEL, "blkdev_issue_flush", 3),
        (7, NodeKind.CMD, "WRITE_10", 6),      # ts 400: boundary tie -> later sibling
        (8, NodeKind.CMD, "WRITE_10", 0),      # ts 960: gap after vfs_fsync
        (9, NodeKind.CMD, "WRITE_10", 0),      # ts 1500: past root end, unanchored
    ]
    assert [(n.id, n.kind, n.name, n.parent) for n in tree.nodes] == expected
    assert tree.meta["unanchored"] == [1, 9]
    assert tree.meta["gap_attached"] == [2, 8]
    by_ts = {n.id: n.start_ns for n in tree.nodes if n.kind is NodeKind.CMD}
    assert by_ts == {1: 50, 2: 110, 5: 300, 7: 400, 8: 960, 9: 1_500}


def test_unanchored_goes_to_nearest_preceding_root() -> None:
    events = []
    for i, (start, end) in enumerate([(100, 200), (500, 600)]):
        events += [
            ev(E.SYSCALL_ENTER, f"op{i}", start),
            ev(E.SYSCALL_EXIT, f"op{i}", end),
        ]
    tree = build_tree(events, [cmd_at(300), cmd_at(700), cmd_at(10)])
    cmd_parents = {
        n.start_ns: n.parent for n in tree.nodes if n.kind is NodeKind.CMD
    }
    op0 = next(n.id for n in tree.nodes if n.name == "op0")
    op1 = next(n.id for n in tree.nodes if n.name == "op1")
    assert cmd_parents == {300: op0, 700: op1, 10: op0}
    assert len(tree.meta["unanchored"]) == 3
    # No kernel children under these roots, so nothing is gap-attached.
    assert tree.meta["gap_attached"] == []
    assert validate_tree(tree) == []


def test_preorder_ids_are_dense_and_contiguous(barrier_abnormal) -> None:
    tree = barrier_abnormal.tree
    assert [n.id for n in tree.nodes] == list(range(len(tree.nodes)))
    assert [n.id for n in tree.iter_preorder()] == list(range(len(tree.nodes)))
    for node in tree.nodes:
        ids = tree.subtree_ids(node.id)
        assert ids == list(range(node.id, node.id + len(ids)))


def test_empty_inputs() -> None:
    tree = build_tree([], [])
    assert len(tree) == 0 and tree.roots == []
    assert validate_tree(tree) == []


@pytest.mark.parametrize(
    ("events", "message"),
    [
        ([ev(E.FUNC_ENTER, "k", 5)], "kernel function k has no enclosing syscall"),
        (
            [ev(E.SYSCALL_ENTER, "f", 1), ev(E.FUNC_ENTER, "a", 2),
             ev(E.FUNC_EXIT, "b", 3)],
            "exit event b does not match open a",
        ),
        ([ev(E.SYSCALL_EXIT, "f", 1)], "exit event f with nothing open"),
        ([ev(E.SYSCALL_ENTER, "f", 1)], "host events end while f is still open"),
        (
            [ev(E.SYSCALL_ENTER, "f", 1), ev(E.SYSCALL_ENTER, "g", 2)],
            "syscall g enters while f is open",
        ),
    ],
)
def test_fold_rejects_malformed_event_streams(events, message) -> None:
    with pytest.raises(BuildError, match=message):
        build_tree(events, [])


def test_commands_without_any_syscall_is_an_error() -> None:
    with pytest.raises(BuildError, match="host trace produced no syscalls"):
        build_tree([], [cmd_at(5)])


def test_meta_passthrough() -> None:
    tree = build_tree(HOST_EVENTS, [], meta={"host_source": "h.trace"})
    assert tree.meta["host_source"] == "h.trace"
    assert tree.meta["unanchored"] == []
