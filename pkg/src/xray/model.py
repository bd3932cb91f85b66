"""Shared domain model for cross-layer storage traces.

Holds the decoded device-command and host-event records, the correlation
tree that ties both layers together, the report containers, and the
canonical JSON tree file that the pipeline stages exchange.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Iterator


class XrayError(Exception):
    """Base error for this package."""


class Protocol(Enum):
    SCSI = "SCSI"
    NVME = "NVME"


class CommandClass(Enum):
    DATA_TRANSFER = "DataTransfer"
    ADMIN = "Admin"


class Queue(Enum):
    """NVMe submission queue kind. SCSI records carry no queue."""

    IO = "IO"
    ADMIN = "ADMIN"


SCSI_RAW_LEN = 16
NVME_RAW_LEN = 64


@dataclass(frozen=True)
class DeviceCommand:
    """One decoded device-side command.

    ``raw`` always holds the full captured buffer: 16 bytes for a SCSI CDB
    (zero padded past the opcode-determined CDB length) or 64 bytes for an
    NVMe submission queue entry. ``decoded`` holds only the integer fields
    the opcode defines.
    """

    ts: int
    protocol: Protocol
    opcode: int
    name: str
    cmd_class: CommandClass
    decoded: dict[str, int] = field(default_factory=dict)
    raw: bytes = b""

    def __post_init__(self) -> None:
        if self.ts < 0:
            raise XrayError(f"command timestamp must be non-negative, got {self.ts}")
        want = SCSI_RAW_LEN if self.protocol is Protocol.SCSI else NVME_RAW_LEN
        if len(self.raw) != want:
            raise XrayError(
                f"{self.protocol.value} raw buffer must be {want} bytes, got {len(self.raw)}"
            )
        if self.raw[0] != self.opcode:
            raise XrayError(
                f"opcode 0x{self.opcode:02x} does not match raw[0] = 0x{self.raw[0]:02x}"
            )

    def shifted(self, delta_ns: int) -> DeviceCommand:
        """Copy of this command with its timestamp moved by ``delta_ns``."""
        return replace(self, ts=self.ts + delta_ns)


class HostEventKind(Enum):
    SYSCALL_ENTER = "SyscallEnter"
    SYSCALL_EXIT = "SyscallExit"
    FUNC_ENTER = "FuncEnter"
    FUNC_EXIT = "FuncExit"


@dataclass(frozen=True)
class HostEvent:
    """One timestamped host-side event (syscall or kernel function edge)."""

    kind: HostEventKind
    name: str
    ts: int
    depth: int = 0
    thread_id: int = 0

    def __post_init__(self) -> None:
        if self.ts < 0:
            raise XrayError(f"host event timestamp must be non-negative, got {self.ts}")
        if self.depth < 0:
            raise XrayError(f"host event depth must be non-negative, got {self.depth}")


class NodeKind(Enum):
    SYSCALL = "SYSCALL"
    KERNEL = "KERNEL"
    CMD = "CMD"


@dataclass(slots=True)
class TreeNode:
    """One correlation tree node.

    CMD nodes are leaves with a zero-width interval (start == end == the
    command timestamp) and carry the decoded command as payload.
    """

    id: int
    kind: NodeKind
    name: str
    start_ns: int
    end_ns: int
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    cmd: DeviceCommand | None = None


@dataclass
class CorrelationTree:
    """Rooted forest of SYSCALL/KERNEL/CMD nodes with nested intervals.

    Node ids are dense and assigned in pre-order, so ``nodes[i].id == i``
    and every subtree occupies a contiguous id range. Roots are SYSCALL
    nodes. Trees are immutable by convention once the producing operation
    returns; nothing in this package mutates a finished tree.

    ``meta`` carries provenance and diagnostics: source file names, the
    applied clock offset, parser warnings, and the ids of CMD nodes that
    were attached out-of-interval (``unanchored``) or directly under a
    syscall that has kernel children (``gap_attached``).
    """

    nodes: list[TreeNode] = field(default_factory=list)
    roots: list[int] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> TreeNode:
        if not 0 <= node_id < len(self.nodes):
            raise XrayError(f"node id {node_id} out of range (tree has {len(self.nodes)} nodes)")
        return self.nodes[node_id]

    def iter_preorder(self) -> Iterator[TreeNode]:
        """All nodes, each root's subtree in pre-order, roots in order."""
        nodes = self.nodes
        for root in self.roots:
            stack = [root]
            while stack:
                node = nodes[stack.pop()]
                yield node
                stack.extend(reversed(node.children))

    def subtree_ids(self, root_id: int) -> list[int]:
        """Ids of ``root_id`` and every node below it."""
        nodes = self.nodes
        out: list[int] = []
        stack = [root_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(nodes[nid].children))
        return out


def node_count_by_kind(tree: CorrelationTree) -> dict[NodeKind, int]:
    """Node totals per kind; all kinds present, zero-filled for an empty tree."""
    counts = {kind: 0 for kind in NodeKind}
    for node in tree.nodes:
        counts[node.kind] += 1
    return counts


def percentage(count: int, total: int) -> str:
    """Share of ``count`` in ``total`` as a half-up-rounded string like '6.20%'."""
    if total <= 0:
        raise XrayError(f"percentage needs a positive total, got {total}")
    if count < 0:
        raise XrayError(f"percentage needs a non-negative count, got {count}")
    ratio = (Decimal(count) * 100 / Decimal(total)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP
    )
    return f"{ratio}%"


def validate_tree(tree: CorrelationTree) -> list[str]:
    """Check structural invariants; return one message per violation.

    An empty list means the tree is well formed. CMD nodes listed in
    ``meta['unanchored']`` were deliberately attached outside their
    parent's interval and are exempt from the nesting check only.
    """
    violations: list[str] = []
    nodes = tree.nodes
    unanchored = set(tree.meta.get("unanchored", ()))

    for idx, node in enumerate(nodes):
        if node.id != idx:
            violations.append(f"node {node.id}: id does not match arena index {idx}")
    root_set = set(tree.roots)
    if len(root_set) != len(tree.roots):
        violations.append("roots: duplicate root ids")

    for node in nodes:
        nid = node.id
        if node.start_ns < 0:
            violations.append(f"node {nid}: negative start_ns {node.start_ns}")
        if node.end_ns < node.start_ns:
            violations.append(
                f"node {nid}: interval end {node.end_ns} before start {node.start_ns}"
            )
        if nid in root_set:
            if node.parent is not None:
                violations.append(f"node {nid}: root has parent {node.parent}")
            if node.kind is not NodeKind.SYSCALL:
                violations.append(f"node {nid}: root kind is {node.kind.value}, not SYSCALL")
        elif node.parent is None:
            violations.append(f"node {nid}: non-root node has no parent")

        if node.kind is NodeKind.CMD:
            if node.children:
                violations.append(f"node {nid}: CMD node has children")
            if node.start_ns != node.end_ns:
                violations.append(f"node {nid}: CMD interval is not a point")
            if node.cmd is None:
                violations.append(f"node {nid}: CMD node has no command payload")
            elif node.cmd.ts != node.start_ns:
                violations.append(
                    f"node {nid}: payload ts {node.cmd.ts} differs from node ts {node.start_ns}"
                )
        elif node.cmd is not None:
            violations.append(f"node {nid}: {node.kind.value} node carries a command payload")

        prev_start = None
        for cid in node.children:
            if not 0 <= cid < len(nodes):
                violations.append(f"node {nid}: child id {cid} out of range")
                continue
            child = nodes[cid]
            if child.parent != nid:
                violations.append(
                    f"node {cid}: parent field {child.parent} does not match actual parent {nid}"
                )
            if cid not in unanchored and (
                child.start_ns < node.start_ns or child.end_ns > node.end_ns
            ):
                violations.append(
                    f"node {cid}: interval [{child.start_ns}, {child.end_ns}] not nested in "
                    f"parent {nid} [{node.start_ns}, {node.end_ns}]"
                )
            if prev_start is not None and child.start_ns < prev_start:
                violations.append(f"node {nid}: children not ordered by start at child {cid}")
            prev_start = child.start_ns

    seen: set[int] = set()
    for root in tree.roots:
        if not 0 <= root < len(nodes):
            violations.append(f"roots: root id {root} out of range")
            continue
        stack = [root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                violations.append(f"node {nid}: reachable more than once (cycle or shared child)")
                continue
            seen.add(nid)
            stack.extend(c for c in nodes[nid].children if 0 <= c < len(nodes))
    for node in nodes:
        if node.id not in seen:
            violations.append(f"node {node.id}: unreachable from any root")

    return violations


@dataclass
class PruneReport:
    """Result of applying selection rules to one tree."""

    original_count: int
    selected: dict[str, frozenset[int]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    percentages: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def add_rule(self, rule_id: str, selection: frozenset[int]) -> None:
        self.selected[rule_id] = selection
        self.counts[rule_id] = len(selection)
        if self.original_count > 0:
            self.percentages[rule_id] = percentage(len(selection), self.original_count)
        else:
            self.percentages[rule_id] = "0.00%"

    def to_dict(self) -> dict[str, Any]:
        return {
            "original_count": self.original_count,
            "selected": {rid: sorted(ids) for rid, ids in self.selected.items()},
            "counts": dict(self.counts),
            "percentages": dict(self.percentages),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class DiffEntry:
    """One divergence: a matched node pair whose child label sequences differ."""

    abnormal_path: tuple[str, ...]
    reference_path: tuple[str, ...]
    abnormal_id: int | None
    reference_id: int | None
    depth: int
    missing_in_abnormal: tuple[tuple[str, str], ...]
    missing_in_reference: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "abnormal_path": list(self.abnormal_path),
            "reference_path": list(self.reference_path),
            "abnormal_id": self.abnormal_id,
            "reference_id": self.reference_id,
            "depth": self.depth,
            "missing_in_abnormal": [
                {"kind": k, "name": n} for k, n in self.missing_in_abnormal
            ],
            "missing_in_reference": [
                {"kind": k, "name": n} for k, n in self.missing_in_reference
            ],
        }


@dataclass
class DiffReport:
    """Divergences between an abnormal tree and a reference tree."""

    divergences: list[DiffEntry] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.divergences

    def to_dict(self) -> dict[str, Any]:
        return {"divergence_roots": [d.to_dict() for d in self.divergences]}


def command_to_dict(cmd: DeviceCommand) -> dict[str, Any]:
    return {
        "ts": cmd.ts,
        "protocol": cmd.protocol.value,
        "opcode": cmd.opcode,
        "name": cmd.name,
        "class": cmd.cmd_class.value,
        "decoded": dict(cmd.decoded),
        "raw_hex": cmd.raw.hex(),
    }


def command_from_dict(data: dict[str, Any]) -> DeviceCommand:
    try:
        return DeviceCommand(
            ts=int(data["ts"]),
            protocol=Protocol(data["protocol"]),
            opcode=int(data["opcode"]),
            name=str(data["name"]),
            cmd_class=CommandClass(data["class"]),
            decoded={str(k): int(v) for k, v in data.get("decoded", {}).items()},
            raw=bytes.fromhex(data["raw_hex"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise XrayError(f"invalid command record: {exc}") from exc


def tree_to_dict(tree: CorrelationTree) -> dict[str, Any]:
    """Canonical JSON form: nodes in id order, children implied by parent."""
    nodes = []
    for node in tree.nodes:
        entry: dict[str, Any] = {
            "id": node.id,
            "kind": node.kind.value,
            "name": node.name,
            "start_ns": node.start_ns,
            "end_ns": node.end_ns,
            "parent": node.parent,
        }
        if node.cmd is not None:
            entry["cmd"] = command_to_dict(node.cmd)
        nodes.append(entry)
    return {"meta": tree.meta, "nodes": nodes, "roots": list(tree.roots)}


def tree_from_dict(data: dict[str, Any]) -> CorrelationTree:
    try:
        nodes: list[TreeNode] = []
        for entry in data["nodes"]:
            cmd = command_from_dict(entry["cmd"]) if "cmd" in entry else None
            nodes.append(
                TreeNode(
                    id=int(entry["id"]),
                    kind=NodeKind(entry["kind"]),
                    name=str(entry["name"]),
                    start_ns=int(entry["start_ns"]),
                    end_ns=int(entry["end_ns"]),
                    parent=None if entry["parent"] is None else int(entry["parent"]),
                    cmd=cmd,
                )
            )
        for node in nodes:
            if node.parent is not None:
                if not 0 <= node.parent < len(nodes):
                    raise XrayError(f"node {node.id}: parent {node.parent} out of range")
                nodes[node.parent].children.append(node.id)
        roots = [int(r) for r in data["roots"]]
        meta = dict(data.get("meta", {}))
        return CorrelationTree(nodes=nodes, roots=roots, meta=meta)
    except XrayError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise XrayError(f"invalid tree file: {exc}") from exc


def save_tree(tree: CorrelationTree, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree), indent=2) + "\n")


def load_tree(path: str | Path) -> CorrelationTree:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise XrayError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise XrayError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise XrayError(f"{path}: tree file must contain a JSON object")
    try:
        return tree_from_dict(data)
    except XrayError as exc:
        raise XrayError(f"{path}: {exc}") from exc
