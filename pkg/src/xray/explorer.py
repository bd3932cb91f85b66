"""Correlation tree construction, pruning, expectation checks, and diff.

``build_tree`` folds host events into a syscall/kernel forest and hangs
each device command under the deepest host node whose interval contains
its timestamp. ``prune`` applies selection rules that shrink the tree to
the regions that can explain a write-path failure. ``check_expectations``
asserts cross-layer relations. ``diff`` compares an abnormal tree with a
reference tree and reports where their shapes diverge.
"""

from __future__ import annotations

from bisect import bisect_right, insort
from dataclasses import dataclass, field
from typing import Any, Iterable

from .model import (
    CorrelationTree,
    DeviceCommand,
    DiffEntry,
    DiffReport,
    HostEvent,
    HostEventKind,
    NodeKind,
    PruneReport,
    TreeNode,
    XrayError,
)
from .rules import (
    BUILTIN_SELECT_IDS,
    WRITE_FAMILY,
    Closure,
    ExpectRule,
    Polarity,
    RuleError,
    SelectRule,
)


class BuildError(XrayError):
    pass


@dataclass
class _PNode:
    """Provisional node used while the tree is under construction."""

    kind: NodeKind
    name: str
    start: int
    end: int = -1
    parent: "_PNode | None" = None
    children: list["_PNode"] = field(default_factory=list)
    cmd: DeviceCommand | None = None
    flag: str | None = None


def _fold_host_events(events: Iterable[HostEvent]) -> list[_PNode]:
    """Pair enter/exit events into a forest of provisional nodes."""
    roots: list[_PNode] = []
    stack: list[_PNode] = []
    for ev in events:
        if ev.kind is HostEventKind.SYSCALL_ENTER:
            if stack:
                raise BuildError(f"syscall {ev.name} enters while {stack[-1].name} is open")
            node = _PNode(kind=NodeKind.SYSCALL, name=ev.name, start=ev.ts)
            roots.append(node)
            stack.append(node)
        elif ev.kind is HostEventKind.FUNC_ENTER:
            if not stack:
                raise BuildError(f"kernel function {ev.name} has no enclosing syscall")
            node = _PNode(kind=NodeKind.KERNEL, name=ev.name, start=ev.ts, parent=stack[-1])
            stack[-1].children.append(node)
            stack.append(node)
        else:
            if not stack:
                raise BuildError(f"exit event {ev.name} with nothing open")
            node = stack.pop()
            if node.name != ev.name:
                raise BuildError(f"exit event {ev.name} does not match open {node.name}")
            node.end = ev.ts
    if stack:
        raise BuildError(f"host events end while {stack[-1].name} is still open")
    return roots


def _descend(root: _PNode, ts: int) -> _PNode:
    """Deepest node under ``root`` whose interval contains ts.

    When sibling intervals share the boundary point ts, the later sibling
    wins, which keeps attachment deterministic.
    """
    node = root
    while True:
        chosen = None
        for child in node.children:
            if child.kind is not NodeKind.CMD and child.start <= ts <= child.end:
                chosen = child
        if chosen is None:
            return node
        node = chosen


def build_tree(
    host_events: list[HostEvent],
    cmds: list[DeviceCommand],
    meta: dict[str, Any] | None = None,
) -> CorrelationTree:
    """Correlate aligned device commands with the host call forest.

    Commands outside every syscall interval attach to the nearest
    preceding syscall root (the first root if none precedes) and are
    flagged ``unanchored`` in the tree meta; commands landing in a gap
    between kernel intervals directly under a syscall are flagged
    ``gap_attached``.
    """
    roots = _fold_host_events(host_events)
    root_starts = [r.start for r in roots]

    for cmd in cmds:
        ts = cmd.ts
        parent: _PNode | None = None
        unanchored = False
        idx = bisect_right(root_starts, ts) - 1
        if idx >= 0 and ts <= roots[idx].end:
            parent = _descend(roots[idx], ts)
        elif roots:
            parent = roots[max(idx, 0)]
            unanchored = True
        else:
            raise BuildError("cannot attach commands: host trace produced no syscalls")
        node = _PNode(
            kind=NodeKind.CMD, name=cmd.name, start=ts, end=ts, parent=parent, cmd=cmd
        )
        if unanchored:
            node.flag = "unanchored"
        elif parent.kind is NodeKind.SYSCALL and any(
            c.kind is NodeKind.KERNEL for c in parent.children
        ):
            node.flag = "gap_attached"
        # Keep siblings ordered by interval start.
        starts = [c.start for c in parent.children]
        parent.children.insert(bisect_right(starts, ts), node)

    nodes: list[TreeNode] = []
    root_ids: list[int] = []
    flags: dict[str, list[int]] = {"unanchored": [], "gap_attached": []}
    for root in roots:
        stack: list[tuple[_PNode, int | None]] = [(root, None)]
        while stack:
            pnode, parent_id = stack.pop()
            nid = len(nodes)
            nodes.append(
                TreeNode(
                    id=nid,
                    kind=pnode.kind,
                    name=pnode.name,
                    start_ns=pnode.start,
                    end_ns=pnode.end,
                    parent=parent_id,
                    cmd=pnode.cmd,
                )
            )
            if parent_id is None:
                root_ids.append(nid)
            else:
                nodes[parent_id].children.append(nid)
            if pnode.flag is not None:
                insort(flags[pnode.flag], nid)
            stack.extend((child, nid) for child in reversed(pnode.children))

    tree_meta: dict[str, Any] = dict(meta or {})
    tree_meta["unanchored"] = flags["unanchored"]
    tree_meta["gap_attached"] = flags["gap_attached"]
    return CorrelationTree(nodes=nodes, roots=root_ids, meta=tree_meta)


def _write_cmd_ids(tree: CorrelationTree) -> list[int]:
    return [
        n.id for n in tree.nodes if n.kind is NodeKind.CMD and n.name in WRITE_FAMILY
    ]


def _root_of(tree: CorrelationTree, node_id: int) -> int:
    node = tree.nodes[node_id]
    while node.parent is not None:
        node = tree.nodes[node.parent]
    return node.id


def _triggered_roots(tree: CorrelationTree) -> list[int]:
    """Syscall roots whose subtree contains a write-family command."""
    seen: set[int] = set()
    for cid in _write_cmd_ids(tree):
        seen.add(_root_of(tree, cid))
    return sorted(seen)


def _rule1(tree: CorrelationTree) -> frozenset[int]:
    selected: set[int] = set()
    for root in _triggered_roots(tree):
        selected.update(tree.subtree_ids(root))
    return frozenset(selected)


def _rule2(tree: CorrelationTree) -> frozenset[int]:
    # Within each triggered subtree, drop kernel functions invoked after the
    # last correlated command: keep those entered at or before that command's
    # timestamp, plus the syscall root and every CMD node. Keying on entry
    # (not exit) keeps every ancestor of a command, which is what makes
    # rule3 a subset of rule2 on any tree.
    selected: set[int] = set()
    nodes = tree.nodes
    for root in _triggered_roots(tree):
        sub = tree.subtree_ids(root)
        cmd_ids = [i for i in sub if nodes[i].kind is NodeKind.CMD]
        last_ts = max(nodes[i].start_ns for i in cmd_ids)
        selected.add(root)
        selected.update(cmd_ids)
        selected.update(
            i
            for i in sub
            if nodes[i].kind is NodeKind.KERNEL and nodes[i].start_ns <= last_ts
        )
    return frozenset(selected)


def _rule3(tree: CorrelationTree) -> frozenset[int]:
    selected: set[int] = set()
    nodes = tree.nodes
    for cid in _write_cmd_ids(tree):
        nid: int | None = cid
        while nid is not None and nid not in selected:
            selected.add(nid)
            nid = nodes[nid].parent
    return frozenset(selected)


_BUILTIN_SELECT = {"rule1": _rule1, "rule2": _rule2, "rule3": _rule3}


def apply_select_rule(
    tree: CorrelationTree, rule: SelectRule
) -> tuple[frozenset[int], list[str]]:
    """Evaluate a user selection rule; returns (selection, warnings)."""
    warnings: list[str] = []
    if rule.match_names:
        vocab = {n.name for n in tree.nodes}
        unknown = sorted(rule.match_names - vocab)
        if unknown:
            warnings.append(
                f"rule {rule.rule_id}: names not present in tree: {', '.join(unknown)}"
            )
    seeds = [
        n.id
        for n in tree.nodes
        if (rule.match_kind is None or n.kind is rule.match_kind)
        and (rule.match_names is None or n.name in rule.match_names)
        and (
            rule.match_opcodes is None
            or (n.cmd is not None and n.cmd.opcode in rule.match_opcodes)
        )
    ]
    nodes = tree.nodes
    selected: set[int] = set()
    if rule.closure is Closure.SUBTREE:
        for root in sorted({_root_of(tree, s) for s in seeds}):
            selected.update(tree.subtree_ids(root))
    elif rule.closure is Closure.ANCESTORS:
        for seed in seeds:
            nid: int | None = seed
            while nid is not None and nid not in selected:
                selected.add(nid)
                nid = nodes[nid].parent
    else:  # BETWEEN
        by_root: dict[int, list[int]] = {}
        for seed in seeds:
            by_root.setdefault(_root_of(tree, seed), []).append(seed)
        for root, root_seeds in sorted(by_root.items()):
            window_start = nodes[root].start_ns
            window_end = max(nodes[s].end_ns for s in root_seeds)
            selected.add(root)
            selected.update(root_seeds)
            selected.update(
                i
                for i in tree.subtree_ids(root)
                if nodes[i].kind is NodeKind.KERNEL
                and nodes[i].start_ns >= window_start
                and nodes[i].end_ns <= window_end
            )
    return frozenset(selected), warnings


def prune(tree: CorrelationTree, rule: str | SelectRule) -> PruneReport:
    """Apply one selection rule (built-in id or user rule) to the tree."""
    report = PruneReport(original_count=len(tree.nodes))
    if isinstance(rule, str):
        fn = _BUILTIN_SELECT.get(rule)
        if fn is None:
            raise RuleError(
                f"unknown rule id {rule!r}; built-ins are {', '.join(BUILTIN_SELECT_IDS)}"
            )
        report.add_rule(rule, fn(tree))
    else:
        selection, warnings = apply_select_rule(tree, rule)
        report.add_rule(rule.rule_id, selection)
        report.warnings.extend(warnings)
    return report


def prune_rules(tree: CorrelationTree, rules: Iterable[str | SelectRule]) -> PruneReport:
    """Apply several selection rules, sharing one report."""
    report = PruneReport(original_count=len(tree.nodes))
    for rule in rules:
        single = prune(tree, rule)
        for rid, sel in single.selected.items():
            report.add_rule(rid, sel)
        report.warnings.extend(single.warnings)
    return report


@dataclass(frozen=True)
class Violation:
    """One failed expectation: the rule, the trigger node, and what broke."""

    rule_id: str
    node_id: int
    pattern: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "node_id": self.node_id,
            "pattern": self.pattern,
            "message": self.message,
        }


def check_expectations(
    tree: CorrelationTree, rules: Iterable[ExpectRule]
) -> list[Violation]:
    """Evaluate expectation rules against every triggering syscall root."""
    violations: list[Violation] = []
    nodes = tree.nodes
    for rule in rules:
        for root in tree.roots:
            root_node = nodes[root]
            if root_node.name not in rule.trigger_syscalls:
                continue
            sub = tree.subtree_ids(root)
            if rule.require_commands is not None:
                pattern = "|".join(sorted(rule.require_commands))
                present = any(
                    nodes[i].kind is NodeKind.CMD and nodes[i].name in rule.require_commands
                    for i in sub
                )
                subject = f"command {pattern}"
            else:
                pattern = rule.require_kernel or ""
                present = any(
                    nodes[i].kind is NodeKind.KERNEL and nodes[i].name == pattern
                    for i in sub
                )
                subject = f"kernel function {pattern}"
            if rule.polarity is Polarity.MUST and not present:
                violations.append(
                    Violation(
                        rule_id=rule.rule_id,
                        node_id=root,
                        pattern=pattern,
                        message=f"{root_node.name} (node {root}) is missing required {subject}",
                    )
                )
            elif rule.polarity is Polarity.MUST_NOT and present:
                violations.append(
                    Violation(
                        rule_id=rule.rule_id,
                        node_id=root,
                        pattern=pattern,
                        message=f"{root_node.name} (node {root}) contains forbidden {subject}",
                    )
                )
    return violations


def _lcs_pairs(a: list, b: list) -> list[tuple[int, int]]:
    """Index pairs of one longest common subsequence (deterministic)."""
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt = dp[i], dp[i + 1]
        for j in range(m - 1, -1, -1):
            row[j] = nxt[j + 1] + 1 if a[i] == b[j] else max(nxt[j], row[j + 1])
    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j] and dp[i][j] == dp[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def _label(node: TreeNode) -> tuple[str, str]:
    return (node.kind.value, node.name)


def _path_names(tree: CorrelationTree, node_id: int) -> tuple[str, ...]:
    names: list[str] = []
    nid: int | None = node_id
    while nid is not None:
        names.append(tree.nodes[nid].name)
        nid = tree.nodes[nid].parent
    return tuple(reversed(names))


def diff(abnormal: CorrelationTree, reference: CorrelationTree) -> DiffReport:
    """Locate structural divergences between two trees of the same workload.

    Matched nodes are compared top-down; children match by longest common
    subsequence over (kind, name) labels. Every matched node whose child
    label sequences differ is reported, ordered by depth then start time.
    An empty report means the trees are label-isomorphic.
    """
    entries: list[tuple[int, int, int, DiffEntry]] = []
    work: list[tuple[int, int, int]] = []

    a_roots = [abnormal.nodes[r] for r in abnormal.roots]
    r_roots = [reference.nodes[r] for r in reference.roots]
    a_labels = [_label(n) for n in a_roots]
    r_labels = [_label(n) for n in r_roots]
    pairs = _lcs_pairs(a_labels, r_labels)
    if len(pairs) != len(a_labels) or len(pairs) != len(r_labels):
        matched_a = {i for i, _ in pairs}
        matched_r = {j for _, j in pairs}
        entry = DiffEntry(
            abnormal_path=(),
            reference_path=(),
            abnormal_id=None,
            reference_id=None,
            depth=0,
            missing_in_abnormal=tuple(
                r_labels[j] for j in range(len(r_labels)) if j not in matched_r
            ),
            missing_in_reference=tuple(
                a_labels[i] for i in range(len(a_labels)) if i not in matched_a
            ),
        )
        entries.append((0, 0, -1, entry))
    for i, j in pairs:
        work.append((a_roots[i].id, r_roots[j].id, 1))

    while work:
        a_id, r_id, depth = work.pop()
        a_node = abnormal.nodes[a_id]
        r_node = reference.nodes[r_id]
        a_children = [abnormal.nodes[c] for c in a_node.children]
        r_children = [reference.nodes[c] for c in r_node.children]
        a_labels = [_label(n) for n in a_children]
        r_labels = [_label(n) for n in r_children]
        pairs = _lcs_pairs(a_labels, r_labels)
        if len(pairs) != len(a_labels) or len(pairs) != len(r_labels):
            matched_a = {i for i, _ in pairs}
            matched_r = {j for _, j in pairs}
            entry = DiffEntry(
                abnormal_path=_path_names(abnormal, a_id),
                reference_path=_path_names(reference, r_id),
                abnormal_id=a_id,
                reference_id=r_id,
                depth=depth,
                missing_in_abnormal=tuple(
                    r_labels[j] for j in range(len(r_labels)) if j not in matched_r
                ),
                missing_in_reference=tuple(
                    a_labels[i] for i in range(len(a_labels)) if i not in matched_a
                ),
            )
            entries.append((depth, a_node.start_ns, a_id, entry))
        for i, j in pairs:
            work.append((a_children[i].id, r_children[j].id, depth + 1))

    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return DiffReport(divergences=[e[3] for e in entries])
