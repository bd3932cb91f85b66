"""Text renderers for trees, prune reports, diffs, and violations.

All tabular output is tab-delimited with a header row, so it pipes
cleanly into cut/awk/sort. JSON output is handled by the callers via the
``to_dict`` methods on the underlying objects.
"""

from __future__ import annotations

from typing import Any, Iterable

from .explorer import Violation
from .model import (
    CorrelationTree,
    DiffReport,
    NodeKind,
    PruneReport,
    node_count_by_kind,
)
from .rules import BUILTIN_SELECT_IDS


def summarize_tree(tree: CorrelationTree) -> dict[str, Any]:
    """Counts and extents for one tree, as plain JSON-ready data."""
    kinds = node_count_by_kind(tree)
    commands: dict[str, int] = {}
    for node in tree.nodes:
        if node.kind is NodeKind.CMD:
            commands[node.name] = commands.get(node.name, 0) + 1
    if tree.nodes:
        span = [min(n.start_ns for n in tree.nodes), max(n.end_ns for n in tree.nodes)]
    else:
        span = [0, 0]
    return {
        "total_nodes": len(tree.nodes),
        "nodes_by_kind": {kind.value: count for kind, count in kinds.items()},
        "roots": len(tree.roots),
        "commands_by_name": dict(sorted(commands.items())),
        "unanchored": len(tree.meta.get("unanchored", [])),
        "gap_attached": len(tree.meta.get("gap_attached", [])),
        "span_ns": span,
    }


def render_summary_text(summary: dict[str, Any]) -> str:
    lines = ["metric\tvalue"]
    lines.append(f"total_nodes\t{summary['total_nodes']}")
    for kind, count in summary["nodes_by_kind"].items():
        lines.append(f"nodes[{kind}]\t{count}")
    lines.append(f"roots\t{summary['roots']}")
    for name, count in summary["commands_by_name"].items():
        lines.append(f"commands[{name}]\t{count}")
    lines.append(f"unanchored\t{summary['unanchored']}")
    lines.append(f"gap_attached\t{summary['gap_attached']}")
    lines.append(f"span_ns\t{summary['span_ns'][0]}..{summary['span_ns'][1]}")
    return "\n".join(lines) + "\n"


def _rule_order(rule_ids: Iterable[str]) -> list[str]:
    ids = set(rule_ids)
    ordered = [rid for rid in BUILTIN_SELECT_IDS if rid in ids]
    ordered.extend(sorted(ids - set(BUILTIN_SELECT_IDS)))
    return ordered


def render_prune_text(report: PruneReport) -> str:
    """Tab table of nodes selected per rule, with an all-nodes baseline row."""
    lines = ["rule\tselected\ttotal\tpercentage"]
    total = report.original_count
    lines.append(f"original\t{total}\t{total}\t100.00%")
    for rule_id in _rule_order(report.counts):
        lines.append(
            f"{rule_id}\t{report.counts[rule_id]}\t{total}\t{report.percentages[rule_id]}"
        )
    for warning in report.warnings:
        lines.append(f"# warning: {warning}")
    return "\n".join(lines) + "\n"


def _render_labels(labels: tuple[tuple[str, str], ...]) -> str:
    return ",".join(f"{kind}:{name}" for kind, name in labels) or "-"


def _render_path(path: tuple[str, ...]) -> str:
    return ">".join(path) or "-"


def render_diff_text(report: DiffReport) -> str:
    lines = [f"divergences\t{len(report.divergences)}"]
    if report.divergences:
        lines.append(
            "depth\tabnormal_path\treference_path\t"
            "missing_in_abnormal\tmissing_in_reference"
        )
        for entry in report.divergences:
            lines.append(
                f"{entry.depth}\t{_render_path(entry.abnormal_path)}\t"
                f"{_render_path(entry.reference_path)}\t"
                f"{_render_labels(entry.missing_in_abnormal)}\t"
                f"{_render_labels(entry.missing_in_reference)}"
            )
    return "\n".join(lines) + "\n"


def render_violations_text(violations: list[Violation]) -> str:
    lines = [f"violations\t{len(violations)}"]
    if violations:
        lines.append("rule\tnode\tmessage")
        for v in violations:
            lines.append(f"{v.rule_id}\t{v.node_id}\t{v.message}")
    return "\n".join(lines) + "\n"


def _node_line(tree: CorrelationTree, node_id: int, depth: int) -> str:
    node = tree.node(node_id)
    indent = "  " * depth
    if node.kind is NodeKind.CMD:
        cmd = node.cmd
        details = ""
        if cmd is not None and cmd.decoded:
            details = " " + " ".join(f"{k}={v}" for k, v in sorted(cmd.decoded.items()))
        return f"{indent}CMD {node.name} @{node.start_ns}{details}"
    return f"{indent}{node.kind.value} {node.name} [{node.start_ns}..{node.end_ns}]"


def render_tree_text(tree: CorrelationTree) -> str:
    """Indented one-line-per-node listing in pre-order."""
    lines: list[str] = []
    for root_id in tree.roots:
        stack: list[tuple[int, int]] = [(root_id, 0)]
        while stack:
            node_id, depth = stack.pop()
            lines.append(_node_line(tree, node_id, depth))
            for child in reversed(tree.node(node_id).children):
                stack.append((child, depth + 1))
    return "\n".join(lines) + "\n" if lines else ""
