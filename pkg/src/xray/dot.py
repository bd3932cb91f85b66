"""Graphviz DOT rendering of correlation trees.

Node shapes and fills encode the layer: syscalls are green boxes, kernel
functions plain ellipses, device commands blue boxes. An optional
highlight set (for example a prune-rule selection) is drawn with red
borders, and edges between two highlighted nodes are red as well.
"""

from __future__ import annotations

from .model import CorrelationTree, NodeKind

_KIND_ATTRS = {
    NodeKind.SYSCALL: 'shape=box style=filled fillcolor="palegreen"',
    NodeKind.KERNEL: 'shape=ellipse style=filled fillcolor="white"',
    NodeKind.CMD: 'shape=box style=filled fillcolor="lightblue"',
}


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _label(tree: CorrelationTree, node_id: int) -> str:
    # Escape the name only; the \n separator must reach DOT verbatim.
    node = tree.node(node_id)
    if node.kind is NodeKind.CMD:
        return f"{_escape(node.name)}\\n@{node.start_ns}"
    return f"{_escape(node.name)}\\n[{node.start_ns}..{node.end_ns}]"


def tree_to_dot(
    tree: CorrelationTree,
    highlight: frozenset[int] | set[int] | None = None,
    graph_name: str = "correlation_tree",
) -> str:
    marked = highlight or frozenset()
    lines = [
        f"digraph {graph_name} {{",
        "  rankdir=TB;",
        '  node [fontname="monospace" fontsize=10];',
    ]
    for node in tree.nodes:
        attrs = _KIND_ATTRS[node.kind]
        if node.id in marked:
            attrs += ' color="red" penwidth=2'
        lines.append(f'  n{node.id} [label="{_label(tree, node.id)}" {attrs}];')
    for node in tree.nodes:
        for child in node.children:
            edge = ' [color="red" penwidth=2]' if node.id in marked and child in marked else ""
            lines.append(f"  n{node.id} -> n{child}{edge};")
    lines.append("}")
    return "\n".join(lines) + "\n"
