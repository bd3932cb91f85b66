"""Deterministic storage-stack simulator with fault injection.

``simulate`` turns a scripted workload into a host kernel trace and a
device command log, as if captured on a machine whose device clock is
offset from the host clock. Kernel call shapes are small fixed templates
per syscall (with seeded durations), so runs with the same seed are
byte-identical and fault toggles change only their documented deltas.

Supported faults:

* ``broken_blkdev_fsync_barrier``: fsync on a raw block device omits
  ``blkdev_issue_flush`` and the flush command, so writes are left
  unbarriered in the device cache.
* ``ext4_fdatasync_isize_bug``: an fdatasync covering a size-only
  metadata change skips the journal commit, so no journal-commit WRITEs
  reach the device and the size update is not persisted.
* ``trim_misdirect``: discard requests reach the device with their range
  shifted by a fixed delta, silently trimming the wrong blocks.

``generate_random_tree`` produces seeded random correlation trees at a
requested node count, together with ground-truth selection sets for the
built-in pruning rules, for scale and correctness testing.

Every run also emits a :class:`GroundTruth` record (by-construction
bookkeeping, not derived through the parsers or the explorer) that tests
compare against the pipeline's output.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .devlog import build_command, encode, format_dev_log
from .model import (
    CorrelationTree,
    DeviceCommand,
    NodeKind,
    Protocol,
    TreeNode,
    XrayError,
)
from .rules import WRITE_FAMILY

BASE_EPOCH_NS = 1_700_000_000_000_000_000
DEFAULT_DEVICE_OFFSET_NS = -5_000
SYSCALL_GAP_NS = 1_000_000
TRIM_MISDIRECT_DELTA_BLOCKS = 64

FAULT_BROKEN_BARRIER = "broken_blkdev_fsync_barrier"
FAULT_ISIZE_BUG = "ext4_fdatasync_isize_bug"
FAULT_TRIM_MISDIRECT = "trim_misdirect"
KNOWN_FAULTS = frozenset({FAULT_BROKEN_BARRIER, FAULT_ISIZE_BUG, FAULT_TRIM_MISDIRECT})

# Kernel names the failure analyses hinge on; everything else in the
# templates is plausible filler and is reported as synthetic.
ANCHOR_FUNCTIONS = frozenset(
    {"blkdev_fsync", "blkdev_issue_flush", "filemap_write_and_wait_range", "ext4_sync_file"}
)


class SimConfigError(XrayError):
    pass


@dataclass(frozen=True)
class ScaleParams:
    node_count: int
    cmd_ratio: float = 0.08
    max_depth: int = 12


@dataclass(frozen=True)
class WorkloadOp:
    op: str
    len: int = 4096
    size_only: bool = False
    lba: int = 0
    blocks: int = 8


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    protocol: Protocol = Protocol.SCSI
    workload: tuple[WorkloadOp, ...] = ()
    faults: frozenset[str] = frozenset()
    offset_ns: int = DEFAULT_DEVICE_OFFSET_NS
    base_epoch_ns: int = BASE_EPOCH_NS
    scale: ScaleParams | None = None


_OP_KINDS = {"write", "fsync", "fdatasync", "trim"}


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    if not isinstance(data, dict):
        raise SimConfigError("config must be a JSON object")
    unknown = set(data) - {
        "seed", "protocol", "workload", "faults", "offset_ns", "base_epoch_ns", "scale",
    }
    if unknown:
        raise SimConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        protocol = Protocol(data.get("protocol", "SCSI"))
    except ValueError:
        raise SimConfigError(f"bad protocol {data.get('protocol')!r}") from None
    faults = frozenset(data.get("faults", ()))
    bad = faults - KNOWN_FAULTS
    if bad:
        raise SimConfigError(f"unknown faults {sorted(bad)}; known: {sorted(KNOWN_FAULTS)}")
    ops: list[WorkloadOp] = []
    for i, entry in enumerate(data.get("workload", ())):
        if not isinstance(entry, dict) or "op" not in entry:
            raise SimConfigError(f"workload[{i}]: each entry needs an 'op' key")
        kind = entry["op"]
        if kind not in _OP_KINDS:
            raise SimConfigError(f"workload[{i}]: unknown op {kind!r}; known: {sorted(_OP_KINDS)}")
        ops.append(
            WorkloadOp(
                op=kind,
                len=int(entry.get("len", 4096)),
                size_only=bool(entry.get("size_only", False)),
                lba=int(entry.get("lba", 0)),
                blocks=int(entry.get("blocks", 8)),
            )
        )
    scale = None
    if data.get("scale") is not None:
        s = data["scale"]
        scale = ScaleParams(
            node_count=int(s["node_count"]),
            cmd_ratio=float(s.get("cmd_ratio", 0.08)),
            max_depth=int(s.get("max_depth", 12)),
        )
    return SimConfig(
        seed=int(data.get("seed", 1)),
        protocol=protocol,
        workload=tuple(ops),
        faults=faults,
        offset_ns=int(data.get("offset_ns", DEFAULT_DEVICE_OFFSET_NS)),
        base_epoch_ns=int(data.get("base_epoch_ns", BASE_EPOCH_NS)),
        scale=scale,
    )


def config_from_file(path: str | Path) -> SimConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise SimConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SimConfigError(f"{path}: not valid JSON: {exc}") from exc
    try:
        return config_from_dict(data)
    except SimConfigError as exc:
        raise SimConfigError(f"{path}: {exc}") from exc


@dataclass
class GroundTruth:
    """By-construction facts about one simulated run."""

    node_counts: dict[str, int] = field(default_factory=dict)
    command_names: list[str] | None = None
    per_syscall: list[dict[str, Any]] | None = None
    rule_counts: dict[str, int] = field(default_factory=dict)
    divergence_roots: list[str] = field(default_factory=list)
    expected_offset_ns: int = 0
    synthetic_functions: list[str] = field(default_factory=list)
    trim_requested: list[list[int]] = field(default_factory=list)
    trim_emitted: list[list[int]] = field(default_factory=list)
    rule_selections: dict[str, frozenset[int]] | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "node_counts": dict(self.node_counts),
            "command_names": self.command_names,
            "per_syscall": self.per_syscall,
            "rule_counts": dict(self.rule_counts),
            "divergence_roots": list(self.divergence_roots),
            "expected_offset_ns": self.expected_offset_ns,
            "synthetic_functions": list(self.synthetic_functions),
            "trim_requested": [list(r) for r in self.trim_requested],
            "trim_emitted": [list(r) for r in self.trim_emitted],
        }
        if self.rule_selections is not None:
            out["rule_selections"] = {
                rid: sorted(ids) for rid, ids in self.rule_selections.items()
            }
        return out


@dataclass
class SimResult:
    host_text: str
    dev_text: str
    ground_truth: GroundTruth


class _SimNode:
    __slots__ = ("name", "children", "cmds", "dur", "start")

    def __init__(self, name: str, *children: "_SimNode") -> None:
        self.name = name
        self.children = list(children)
        self.cmds: list[_CmdPlan] = []
        self.dur = 0
        self.start = 0

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass
class _CmdPlan:
    tag: str  # write | journal | flush | trim
    lba: int = 0
    blocks: int = 0
    at_entry: bool = False


def _leaf_with(tag: str, **kw: Any) -> _SimNode:
    node = _SimNode("submit_bio")
    node.cmds.append(_CmdPlan(tag=tag, **kw))
    return node


def _assign_durations(node: _SimNode, rng: random.Random) -> int:
    total = 0
    for child in node.children:
        total += _assign_durations(child, rng)
    if node.children:
        node.dur = total + rng.randint(100, 1_000)
    else:
        node.dur = rng.randint(200, 3_000)
    return node.dur


def _layout(node: _SimNode, start: int) -> None:
    node.start = start
    cursor = start
    for child in node.children:
        _layout(child, cursor)
        cursor += child.dur


def _render(node: _SimNode, depth: int, out: list[str]) -> None:
    indent = "  " * depth
    if node.children:
        out.append(f"K {indent}{node.name}() {{")
        for child in node.children:
            _render(child, depth + 1, out)
        out.append(f"K {indent}}} {node.dur}")
    else:
        out.append(f"K {indent}{node.name}(); {node.dur}")


def _write_template() -> _SimNode:
    return _SimNode(
        "vfs_write",
        _SimNode(
            "ext4_file_write_iter",
            _SimNode("ext4_write_checks"),
            _SimNode("file_update_time"),
            _SimNode(
                "generic_perform_write",
                _SimNode("ext4_da_write_begin"),
                _SimNode("ext4_da_write_end"),
            ),
            _SimNode("balance_dirty_pages_ratelimited"),
        ),
    )


def _fsync_template(extents: list[tuple[int, int]], include_flush: bool) -> _SimNode:
    # The writeback chain is the first descent, so the first WRITE lands
    # exactly on the syscall anchor; that boundary contact is what lets
    # offset estimation recover the injected clock skew exactly.
    submits = [
        _leaf_with("write", lba=lba, blocks=blocks, at_entry=(k == 0))
        for k, (lba, blocks) in enumerate(extents)
    ]
    writeback = _SimNode(
        "filemap_write_and_wait_range",
        _SimNode(
            "__filemap_fdatawrite_range",
            _SimNode("do_writepages", _SimNode("blkdev_writepages", *submits)),
        ),
        _SimNode("filemap_fdatawait_range"),
    )
    blk_children = [writeback]
    if include_flush:
        blk_children.append(
            _SimNode("blkdev_issue_flush", _SimNode("submit_bio_wait", _leaf_with("flush")))
        )
    return _SimNode("vfs_fsync", _SimNode("blkdev_fsync", *blk_children))


def _fdatasync_template(
    extents: list[tuple[int, int]],
    include_journal: bool,
    journal_extents: list[tuple[int, int]],
) -> _SimNode:
    submits = [
        _leaf_with("write", lba=lba, blocks=blocks, at_entry=(k == 0))
        for k, (lba, blocks) in enumerate(extents)
    ]
    writeback = _SimNode(
        "file_write_and_wait_range",
        _SimNode(
            "__filemap_fdatawrite_range",
            _SimNode(
                "do_writepages",
                _SimNode("ext4_writepages", _SimNode("ext4_io_submit", *submits)),
            ),
        ),
        _SimNode("filemap_fdatawait_range"),
    )
    children = [writeback]
    if include_journal:
        desc, commit = journal_extents
        children.append(
            _SimNode(
                "jbd2_complete_transaction",
                _SimNode(
                    "jbd2_journal_commit_transaction",
                    _SimNode(
                        "journal_submit_commit_record",
                        _leaf_with("journal", lba=desc[0], blocks=desc[1]),
                    ),
                    _leaf_with("journal", lba=commit[0], blocks=commit[1]),
                    _SimNode("journal_wait_on_commit_record"),
                ),
            )
        )
    children.append(
        _SimNode("blkdev_issue_flush", _SimNode("submit_bio_wait", _leaf_with("flush")))
    )
    return _SimNode("vfs_fsync", _SimNode("ext4_sync_file", *children))


def _trim_template(lba: int, blocks: int) -> _SimNode:
    return _SimNode(
        "blkdev_ioctl",
        _SimNode(
            "blkdev_common_ioctl",
            _SimNode(
                "blk_ioctl_discard",
                _SimNode(
                    "blkdev_issue_discard",
                    _SimNode("bio_alloc"),
                    _SimNode(
                        "__blkdev_issue_discard",
                        _leaf_with("trim", lba=lba, blocks=blocks),
                    ),
                    _SimNode("submit_bio_wait"),
                ),
            ),
        ),
    )


def _cmd_from_plan(protocol: Protocol, plan: _CmdPlan, ts: int) -> DeviceCommand:
    if plan.tag in ("write", "journal"):
        if protocol is Protocol.SCSI:
            return build_command(protocol, "WRITE_10", ts, lba=plan.lba, block_count=plan.blocks)
        return build_command(protocol, "WRITE", ts, nsid=1, slba=plan.lba, nlb=plan.blocks - 1)
    if plan.tag == "flush":
        if protocol is Protocol.SCSI:
            return build_command(protocol, "SYNCHRONIZE_CACHE", ts)
        return build_command(protocol, "FLUSH", ts, nsid=1)
    if plan.tag == "trim":
        if protocol is Protocol.SCSI:
            return build_command(protocol, "UNMAP", ts, lba=plan.lba, block_count=plan.blocks)
        return build_command(protocol, "DSM", ts, nsid=1, slba=plan.lba, nlb=plan.blocks - 1)
    raise SimConfigError(f"unknown command plan tag {plan.tag!r}")


def _op_rng(seed: int, index: int) -> random.Random:
    # Independent substream per workload op, so toggling a fault in one op
    # cannot shift the randomness of the others.
    return random.Random(seed * 1_000_003 + index * 7_919)


@dataclass
class _OpFacts:
    syscall: str
    kernel_count: int
    cmd_names: list[str]
    cmd_ts: list[int]
    write_flags: list[bool]
    rule3_kernel: int
    rule2_kernel: int


def _collect_op(
    root: _SimNode, protocol: Protocol
) -> tuple[list[tuple[_CmdPlan, int, list[_SimNode]]], list[_SimNode]]:
    """All (plan, true_ts, ancestor chain) plus every kernel node, in time order."""
    cmds: list[tuple[_CmdPlan, int, list[_SimNode]]] = []
    kernels: list[_SimNode] = []

    def walk(node: _SimNode, stack: list[_SimNode]) -> None:
        kernels.append(node)
        chain = stack + [node]
        for plan in node.cmds:
            ts = node.start if plan.at_entry else node.start + node.dur // 2
            cmds.append((plan, ts, chain))
        for child in node.children:
            walk(child, chain)

    walk(root, [])
    cmds.sort(key=lambda item: item[1])
    return cmds, kernels


def simulate(config: SimConfig) -> SimResult:
    """Run the workload; returns host trace text, device log text, ground truth."""
    host_lines: list[str] = []
    dev_cmds: list[DeviceCommand] = []
    gt = GroundTruth(
        command_names=[],
        per_syscall=[],
        expected_offset_ns=-config.offset_ns,
    )
    kernel_names: set[str] = set()
    n_kernel = 0
    rule1 = rule2 = rule3 = 0

    pending: list[tuple[int, int]] = []
    lba_cursor = 2_048
    journal_cursor = 1 << 20
    epoch = config.base_epoch_ns

    for index, op in enumerate(config.workload):
        rng = _op_rng(config.seed, index)
        if op.op == "write":
            syscall = "write"
            blocks = max(1, op.len // 512)
            pending.append((lba_cursor, blocks))
            lba_cursor += blocks
            root = _write_template()
        elif op.op == "fsync":
            syscall = "fsync"
            include_flush = FAULT_BROKEN_BARRIER not in config.faults
            root = _fsync_template(pending, include_flush)
            pending = []
        elif op.op == "fdatasync":
            syscall = "fdatasync"
            include_journal = not (FAULT_ISIZE_BUG in config.faults and op.size_only)
            journal_extents = [(journal_cursor, 8), (journal_cursor + 8, 1)]
            journal_cursor += 9
            root = _fdatasync_template(pending, include_journal, journal_extents)
            pending = []
        else:  # trim
            syscall = "ioctl"
            emitted_lba = op.lba
            if FAULT_TRIM_MISDIRECT in config.faults:
                emitted_lba += TRIM_MISDIRECT_DELTA_BLOCKS
            gt.trim_requested.append([op.lba, op.blocks])
            gt.trim_emitted.append([emitted_lba, op.blocks])
            root = _trim_template(emitted_lba, op.blocks)

        _assign_durations(root, rng)
        _layout(root, epoch)
        host_lines.append(f"S {syscall}@{epoch}")
        _render(root, 0, host_lines)

        cmds, kernels = _collect_op(root, config.protocol)
        op_cmd_names: list[str] = []
        op_cmd_ts: list[int] = []
        write_chain: set[int] = set()
        n_write = 0
        for plan, ts, chain in cmds:
            cmd = _cmd_from_plan(config.protocol, plan, ts + config.offset_ns)
            dev_cmds.append(cmd)
            op_cmd_names.append(cmd.name)
            op_cmd_ts.append(ts)
            if cmd.name in WRITE_FAMILY:
                n_write += 1
                write_chain.update(id(n) for n in chain)
        kernel_names.update(n.name for n in kernels)
        n_kernel += len(kernels)
        assert gt.command_names is not None and gt.per_syscall is not None
        gt.command_names.extend(op_cmd_names)
        gt.per_syscall.append(
            {"name": syscall, "kernel_count": len(kernels), "commands": op_cmd_names}
        )
        if n_write:
            subtree_total = 1 + len(kernels) + len(cmds)
            rule1 += subtree_total
            last_ts = max(op_cmd_ts)
            rule2 += 1 + len(cmds) + sum(1 for k in kernels if k.start <= last_ts)
            rule3 += 1 + n_write + len(write_chain)
        epoch = root.end + SYSCALL_GAP_NS

    gt.node_counts = {
        NodeKind.SYSCALL.value: len(config.workload),
        NodeKind.KERNEL.value: n_kernel,
        NodeKind.CMD.value: len(dev_cmds),
    }
    gt.rule_counts = {"rule1": rule1, "rule2": rule2, "rule3": rule3}
    if FAULT_BROKEN_BARRIER in config.faults and any(
        op.op == "fsync" for op in config.workload
    ):
        gt.divergence_roots.append("blkdev_fsync")
    if FAULT_ISIZE_BUG in config.faults and any(
        op.op == "fdatasync" and op.size_only for op in config.workload
    ):
        gt.divergence_roots.append("ext4_sync_file")
    gt.synthetic_functions = sorted(kernel_names - ANCHOR_FUNCTIONS)

    host_text = "\n".join(host_lines) + "\n" if host_lines else ""
    dev_text = format_dev_log(encode(c) for c in dev_cmds)
    return SimResult(host_text=host_text, dev_text=dev_text, ground_truth=gt)


def scenario_broken_barrier(
    protocol: Protocol = Protocol.SCSI, faulty: bool = True, seed: int = 7
) -> SimConfig:
    """Three buffered writes then fsync on a raw block device."""
    return SimConfig(
        seed=seed,
        protocol=protocol,
        workload=(
            WorkloadOp("write", len=4096),
            WorkloadOp("write", len=4096),
            WorkloadOp("write", len=4096),
            WorkloadOp("fsync"),
        ),
        faults=frozenset({FAULT_BROKEN_BARRIER}) if faulty else frozenset(),
    )


def scenario_isize_update(
    protocol: Protocol = Protocol.SCSI, faulty: bool = True, seed: int = 11
) -> SimConfig:
    """An appending write followed by a size-only fdatasync."""
    return SimConfig(
        seed=seed,
        protocol=protocol,
        workload=(
            WorkloadOp("write", len=4096),
            WorkloadOp("fdatasync", size_only=True),
        ),
        faults=frozenset({FAULT_ISIZE_BUG}) if faulty else frozenset(),
    )


def scenario_trim_misdirect(
    protocol: Protocol = Protocol.SCSI, faulty: bool = True, seed: int = 13
) -> SimConfig:
    """A discard over a known range."""
    return SimConfig(
        seed=seed,
        protocol=protocol,
        workload=(WorkloadOp("trim", lba=8_192, blocks=2_048),),
        faults=frozenset({FAULT_TRIM_MISDIRECT}) if faulty else frozenset(),
    )


_RANDOM_SYSCALLS = ("write", "fsync", "read", "fdatasync", "ioctl")


def _random_command(
    rng: random.Random, protocol: Protocol, ts: int, write_prob: float
) -> DeviceCommand:
    write = rng.random() < write_prob
    if protocol is Protocol.SCSI:
        if write:
            name = "WRITE_10" if rng.random() < 0.8 else "WRITE_16"
            return build_command(
                protocol, name, ts,
                lba=rng.randrange(1 << 24), block_count=rng.randint(1, 256),
            )
        name = rng.choice(("READ_10", "SYNCHRONIZE_CACHE", "UNMAP", "TEST_UNIT_READY"))
        if name == "READ_10" or name == "UNMAP":
            return build_command(
                protocol, name, ts,
                lba=rng.randrange(1 << 24), block_count=rng.randint(1, 256),
            )
        return build_command(protocol, name, ts)
    if write:
        return build_command(
            protocol, "WRITE", ts,
            nsid=1, slba=rng.randrange(1 << 30), nlb=rng.randint(0, 255),
        )
    name = rng.choice(("READ", "FLUSH", "DSM", "IDENTIFY"))
    if name in ("READ", "DSM"):
        return build_command(
            protocol, name, ts,
            nsid=1, slba=rng.randrange(1 << 30), nlb=rng.randint(0, 255),
        )
    return build_command(protocol, name, ts, nsid=1)


def generate_random_tree(
    scale: ScaleParams, seed: int, protocol: Protocol = Protocol.SCSI
) -> tuple[CorrelationTree, GroundTruth]:
    """Seeded random correlation tree with ground-truth rule selections.

    The node count is met exactly: syscall subtrees are planned so their
    sizes sum to ``scale.node_count``. CMD leaves hang under uniformly
    chosen kernel leaves; ~70% of commands are write-family.
    """
    n_total = scale.node_count
    if n_total < 1:
        raise SimConfigError(f"node_count must be positive, got {n_total}")
    if not 0 <= scale.cmd_ratio < 1:
        raise SimConfigError(f"cmd_ratio must be in [0, 1), got {scale.cmd_ratio}")
    rng = random.Random(seed)

    sizes: list[int] = []
    remaining = n_total
    while remaining > 0:
        m = min(remaining, rng.randint(2_000, 8_000))
        sizes.append(m)
        remaining -= m

    g_kind: list[NodeKind] = []
    g_name: list[str] = []
    g_parent: list[int | None] = []
    g_children: list[list[int]] = []
    g_block_root: list[int] = []
    roots: list[int] = []
    # ~35% of syscall subtrees get no write-family commands at all, so the
    # rules' trigger condition is exercised in both directions.
    block_write_prob: dict[int, float] = {}

    for m in sizes:
        n_cmd = int(scale.cmd_ratio * (m - 1))
        n_kern = m - 1 - n_cmd
        # Local skeleton: index 0 is the syscall root.
        l_children: list[list[int]] = [[] for _ in range(1 + n_kern)]
        l_depth = [0] * (1 + n_kern)
        eligible = [0]
        for j in range(1, 1 + n_kern):
            p = eligible[rng.randrange(len(eligible))]
            l_children[p].append(j)
            l_depth[j] = l_depth[p] + 1
            if l_depth[j] < scale.max_depth:
                eligible.append(j)
        leaves = [i for i in range(1 + n_kern) if not l_children[i]] or [0]
        cmd_parents: dict[int, int] = {}
        for j in range(n_cmd):
            local_id = 1 + n_kern + j
            parent = leaves[rng.randrange(len(leaves))]
            l_children[parent].append(local_id)
            cmd_parents[local_id] = parent

        # Pre-order renumber into the global arena.
        base = len(g_kind)
        root_gid = base
        roots.append(root_gid)
        block_write_prob[root_gid] = 0.0 if rng.random() < 0.35 else 0.7
        local_to_gid: dict[int, int] = {}
        stack = [(0, None)]
        while stack:
            lid, parent_gid = stack.pop()
            gid = len(g_kind)
            local_to_gid[lid] = gid
            is_cmd = lid > n_kern
            g_kind.append(NodeKind.CMD if is_cmd else
                          NodeKind.KERNEL if lid > 0 else NodeKind.SYSCALL)
            g_name.append("")  # names filled below
            g_parent.append(parent_gid)
            g_children.append([])
            g_block_root.append(root_gid)
            if parent_gid is not None:
                g_children[parent_gid].append(gid)
            if lid <= n_kern:
                stack.extend((child, gid) for child in reversed(l_children[lid]))
            # CMD locals have no children.

    n = len(g_kind)
    assert n == n_total

    # Intervals: slice each parent's interval evenly among its children.
    g_start = [0] * n
    g_end = [0] * n
    cursor = BASE_EPOCH_NS
    for root_gid, m in zip(roots, sizes):
        span = 1_000 * m
        g_start[root_gid], g_end[root_gid] = cursor, cursor + span
        cursor += span + SYSCALL_GAP_NS
    for gid in range(n):
        kids = g_children[gid]
        if not kids:
            continue
        start, end = g_start[gid], g_end[gid]
        sub = max((end - start) // (len(kids) + 1), 2)
        for k, cid in enumerate(kids):
            cs = min(start + k * sub, end)
            ce = min(cs + sub - 1, end)
            if g_kind[cid] is NodeKind.CMD:
                ts = cs + (ce - cs) // 2
                g_start[cid], g_end[cid] = ts, ts
            else:
                g_start[cid], g_end[cid] = cs, max(ce, cs)

    # Names and command payloads.
    nodes: list[TreeNode] = []
    cmd_payload: list[DeviceCommand | None] = [None] * n
    for gid in range(n):
        kind = g_kind[gid]
        if kind is NodeKind.SYSCALL:
            name = _RANDOM_SYSCALLS[rng.randrange(len(_RANDOM_SYSCALLS))]
        elif kind is NodeKind.KERNEL:
            name = f"kfunc_{rng.randrange(500):03d}"
        else:
            prob = block_write_prob[g_block_root[gid]]
            cmd = _random_command(rng, protocol, g_start[gid], prob)
            cmd_payload[gid] = cmd
            name = cmd.name
        g_name[gid] = name
        nodes.append(
            TreeNode(
                id=gid,
                kind=kind,
                name=name,
                start_ns=g_start[gid],
                end_ns=g_end[gid],
                parent=g_parent[gid],
                children=g_children[gid],
                cmd=cmd_payload[gid],
            )
        )

    tree = CorrelationTree(
        nodes=nodes,
        roots=roots,
        meta={
            "generator": "random",
            "seed": seed,
            "node_count": n_total,
            "unanchored": [],
            "gap_attached": [],
        },
    )

    # Ground-truth selections straight from the arrays.
    subtree_size = [1] * n
    for gid in range(n - 1, 0, -1):
        parent = g_parent[gid]
        if parent is not None:
            subtree_size[parent] += subtree_size[gid]
    write_cmds = [
        gid for gid in range(n) if g_kind[gid] is NodeKind.CMD and g_name[gid] in WRITE_FAMILY
    ]
    triggered = sorted({g_block_root[gid] for gid in write_cmds})
    rule1_sel: set[int] = set()
    for root_gid in triggered:
        rule1_sel.update(range(root_gid, root_gid + subtree_size[root_gid]))
    rule2_sel: set[int] = set()
    for root_gid in triggered:
        block = range(root_gid, root_gid + subtree_size[root_gid])
        cmd_ids = [i for i in block if g_kind[i] is NodeKind.CMD]
        last_ts = max(g_start[i] for i in cmd_ids)
        rule2_sel.add(root_gid)
        rule2_sel.update(cmd_ids)
        rule2_sel.update(
            i for i in block if g_kind[i] is NodeKind.KERNEL and g_start[i] <= last_ts
        )
    rule3_sel: set[int] = set()
    for gid in write_cmds:
        nid: int | None = gid
        while nid is not None and nid not in rule3_sel:
            rule3_sel.add(nid)
            nid = g_parent[nid]

    gt = GroundTruth(
        node_counts={
            NodeKind.SYSCALL.value: sum(1 for k in g_kind if k is NodeKind.SYSCALL),
            NodeKind.KERNEL.value: sum(1 for k in g_kind if k is NodeKind.KERNEL),
            NodeKind.CMD.value: sum(1 for k in g_kind if k is NodeKind.CMD),
        },
        rule_counts={
            "rule1": len(rule1_sel),
            "rule2": len(rule2_sel),
            "rule3": len(rule3_sel),
        },
        rule_selections={
            "rule1": frozenset(rule1_sel),
            "rule2": frozenset(rule2_sel),
            "rule3": frozenset(rule3_sel),
        },
    )
    return tree, gt
