"""Rendering: text tables, tree listings, DOT graphs, and the rule figure."""

from __future__ import annotations

from xray.devlog import build_command
from xray.dot import tree_to_dot
from xray.explorer import Violation, build_tree, diff, prune_rules
from xray.model import (
    CorrelationTree,
    HostEvent,
    HostEventKind,
    NodeKind,
    Protocol,
    PruneReport,
    TreeNode,
)
from xray.plotting import save_rule_summary_figure
from xray.report import (
    render_diff_text,
    render_prune_text,
    render_summary_text,
    render_tree_text,
    render_violations_text,
    summarize_tree,
)

E = HostEventKind


def sample_tree() -> CorrelationTree:
    events = [
        HostEvent(kind=E.SYSCALL_ENTER, name="fsync", ts=100),
        HostEvent(kind=E.FUNC_ENTER, name="vfs_fsync", ts=120),
        HostEvent(kind=E.FUNC_EXIT, name="vfs_fsync", ts=900),
        HostEvent(kind=E.SYSCALL_EXIT, name="fsync", ts=1_000),
    ]
    cmds = [
        build_command(Protocol.SCSI, "WRITE_10", 300, lba=2_048, block_count=8),
        build_command(Protocol.SCSI, "SYNCHRONIZE_CACHE", 800),
    ]
    return build_tree(events, cmds)


def test_summarize_tree_counts() -> None:
    summary = summarize_tree(sample_tree())
    assert summary == {
        "total_nodes": 4,
        "nodes_by_kind": {"SYSCALL": 1, "KERNEL": 1, "CMD": 2},
        "roots": 1,
        "commands_by_name": {"SYNCHRONIZE_CACHE": 1, "WRITE_10": 1},
        "unanchored": 0,
        "gap_attached": 0,
        "span_ns": [100, 1_000],
    }
    assert summarize_tree(CorrelationTree())["span_ns"] == [0, 0]


def test_render_summary_text_is_tab_table() -> None:
    text = render_summary_text(summarize_tree(sample_tree()))
    lines = text.splitlines()
    assert lines[0] == "metric\tvalue"
    assert "total_nodes\t4" in lines
    assert "nodes[CMD]\t2" in lines
    assert "commands[WRITE_10]\t1" in lines
    assert "span_ns\t100..1000" in lines


def test_render_prune_text_table() -> None:
    tree = sample_tree()
    report = prune_rules(tree, ["rule3", "rule1", "rule2"])
    text = render_prune_text(report)
    lines = text.splitlines()
    assert lines[0] == "rule\tselected\ttotal\tpercentage"
    assert lines[1] == "original\t4\t4\t100.00%"
    # Built-ins render in canonical order regardless of application order.
    assert [ln.split("\t")[0] for ln in lines[1:]] == [
        "original", "rule1", "rule2", "rule3",
    ]
    assert lines[2] == "rule1\t4\t4\t100.00%"
    assert lines[4] == "rule3\t3\t4\t75.00%"


def test_render_prune_text_includes_warnings() -> None:
    report = PruneReport(original_count=10)
    report.add_rule("custom", frozenset({1, 2}))
    report.warnings.append("rule custom: names not present in tree: zz")
    text = render_prune_text(report)
    assert text.splitlines()[-1] == "# warning: rule custom: names not present in tree: zz"
    assert "custom\t2\t10\t20.00%" in text


def test_render_diff_text() -> None:
    empty = render_diff_text(diff(sample_tree(), sample_tree()))
    assert empty == "divergences\t0\n"

    reference = sample_tree()
    abnormal_events = [
        HostEvent(kind=E.SYSCALL_ENTER, name="fsync", ts=100),
        HostEvent(kind=E.SYSCALL_EXIT, name="fsync", ts=1_000),
    ]
    abnormal = build_tree(abnormal_events, [])
    text = render_diff_text(diff(abnormal, reference))
    lines = text.splitlines()
    assert lines[0] == "divergences\t1"
    assert lines[1].startswith("depth\tabnormal_path")
    # Both commands nest inside vfs_fsync, so the root's only child label
    # is the kernel function; the whole subtree is missing in the abnormal.
    assert lines[2] == "1\tfsync\tfsync\tKERNEL:vfs_fsync\t-"


def test_render_violations_text() -> None:
    assert render_violations_text([]) == "violations\t0\n"
    violation = Violation(
        rule_id="sync-flush",
        node_id=3,
        pattern="FLUSH|SYNCHRONIZE_CACHE",
        message="fsync (node 3) is missing required command FLUSH|SYNCHRONIZE_CACHE",
    )
    text = render_violations_text([violation])
    lines = text.splitlines()
    assert lines[0] == "violations\t1"
    assert lines[1] == "rule\tnode\tmessage"
    assert lines[2].startswith("sync-flush\t3\t")


def test_render_tree_text_layout() -> None:
    text = render_tree_text(sample_tree())
    assert text.splitlines() == [
        "SYSCALL fsync [100..1000]",
        "  KERNEL vfs_fsync [120..900]",
        "    CMD WRITE_10 @300 block_count=8 lba=2048",
        "    CMD SYNCHRONIZE_CACHE @800",
    ]
    assert render_tree_text(CorrelationTree()) == ""


# ---------------------------------------------------------------------- dot


def test_tree_to_dot_structure() -> None:
    tree = sample_tree()
    dot = tree_to_dot(tree)
    assert dot.startswith("digraph correlation_tree {")
    assert dot.rstrip().endswith("}")
    assert 'n0 [label="fsync\\n[100..1000]" shape=box style=filled fillcolor="palegreen"];' in dot
    assert 'fillcolor="lightblue"' in dot
    assert "n0 -> n1;" in dot
    assert "n1 -> n2;" in dot and "n1 -> n3;" in dot


def test_tree_to_dot_highlight_and_escaping() -> None:
    tree = sample_tree()
    dot = tree_to_dot(tree, highlight={0, 1}, graph_name="sel")
    assert dot.startswith("digraph sel {")
    assert dot.count('color="red" penwidth=2') == 3  # two nodes + one edge
    assert 'n0 -> n1 [color="red" penwidth=2];' in dot
    assert "n1 -> n2;" in dot  # unhighlighted edge stays plain

    weird = CorrelationTree(
        nodes=[TreeNode(0, NodeKind.SYSCALL, 'io"uring', 0, 1, None, [])],
        roots=[0],
    )
    assert '\\"' in tree_to_dot(weird)


# ------------------------------------------------------------------- figure


def test_save_rule_summary_figure(tmp_path) -> None:
    report = prune_rules(sample_tree(), ["rule1", "rule2", "rule3"])
    out = tmp_path / "rules.png"
    path = save_rule_summary_figure(report, out)
    assert path == out
    assert out.exists() and out.stat().st_size > 1_000
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    svg = save_rule_summary_figure(report, tmp_path / "rules.svg")
    assert svg.read_text().lstrip().startswith("<?xml")
