"""DOT export for rendering workflow graphs with standard tooling.

Export works on any parseable graph, valid or not, so it can be used to
inspect broken workflows; validation findings are included as comment
lines at the top of the output.
"""

from __future__ import annotations

from .graph import WorkflowGraph
from .validator import soft_check

_FILL = {
    "CustomOp": "#d0e1f9",
    "ProgrammerOp": "#f9c2c2",
    "ScEnsembleOp": "#f9e4b7",
    "TestOp": "#d8f0d8",
    "CustomCodeGenerateOp": "#f9c2c2",
    "Interface": "#e2e2f2",
    "DecisionOp": "#ffffff",
}


def _fill_for(graph: WorkflowGraph, kind: str) -> str:
    resolved = graph.registry.resolve_kind(kind)
    if resolved in _FILL:
        return _FILL[resolved]
    schema = graph.registry.get(kind)
    if schema is not None and schema.style:
        for token in schema.style.split(","):
            if token.strip().startswith("fill:"):
                return token.strip()[5:]
    return "#ffffff"


def _shape_for(graph: WorkflowGraph, kind: str) -> str:
    schema = graph.registry.get(kind)
    if schema is not None and schema.is_interface:
        return "ellipse"
    if graph.registry.resolve_kind(kind) == "DecisionOp":
        return "diamond"
    return "box"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _quote(text: str) -> str:
    return '"' + _escape(text) + '"'


def export_dot(graph: WorkflowGraph, include_diagnostics: bool = True) -> str:
    lines = []
    if include_diagnostics:
        findings = soft_check(graph)
        for diag in findings:
            lines.append(f"// {diag.render()}")
    lines.append("digraph workflow {")
    lines.append("  rankdir=TB;")
    lines.append('  node [style="filled"];')
    for nid in sorted(graph.node_ids()):
        node = graph.node(nid)
        parts = [_escape(nid)]
        parts.extend(_escape(f"{k}: {v}") for k, v in sorted(node.attributes.items()))
        label = '"' + "\\n".join(parts) + '"'
        lines.append(
            f"  {nid} [label={label}, shape={_shape_for(graph, node.kind)}, "
            f'fillcolor="{_fill_for(graph, node.kind)}"];'
        )
    edge_rows = sorted(
        ((e.source, e.target, e.label) for e in graph.edges),
        key=lambda row: (row[0], row[1], row[2] is not None, row[2] or ""),
    )
    for source, target, label in edge_rows:
        if label:
            lines.append(f"  {source} -> {target} [label={_quote(label)}];")
        else:
            lines.append(f"  {source} -> {target};")
    lines.append("}")
    return "\n".join(lines) + "\n"
