"""Structural soft checks (W1-W5 + STRUCT) and the combined verdict gate.

``soft_check`` inspects a lowered graph; ``validate`` accepts either source
text (hard check, lowering, then soft check) or a graph value, and returns a
binary verdict: q=1 exactly when no error-severity finding exists.

Rule summary:
  W1  entry/exit interface presence and cardinality
  W2  every node on some entry-to-exit path
  W3  entry/exit roles played only by interface nodes
  W4  node kinds registered, domain-compatible, required attributes present
  W5  fan-in minimums on ensemble-style kinds
  STRUCT  self-loops, duplicate edges, cycles, port binding, prompt table
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .diagnostics import (
    ERROR,
    STRUCT,
    W1,
    W2,
    W3,
    W4,
    W5,
    WARNING,
    Diagnostic,
    Verdict,
    make_verdict,
    sort_diagnostics,
)
from .graph import (
    IDENT_RE,
    RESERVED_AUX_ENTRY,
    RESERVED_ENTRY,
    RESERVED_EXIT,
    WorkflowGraph,
    type_of_output,
)
from .mermaid import UNCLASSIFIED, lower_to_graph, parse_workflow
from .registry import port_accepts

_RESERVED_IDS = (RESERVED_ENTRY, RESERVED_AUX_ENTRY, RESERVED_EXIT)


@dataclass
class BindingResult:
    """Outcome of matching a node's incoming edges against its schema ports."""

    bindings: list  # ((source id, label), PortSpec) pairs
    missing: list  # required ports left unfed
    unexpected: list  # (source id, label) with no port to land on
    overfed: list  # non-variadic ports bound more than once
    ambiguous: bool


def bind_input_ports(graph: WorkflowGraph, node_id: str) -> BindingResult:
    """Deterministic edge-to-port matching.

    Labeled edges bind to the port with the same label. Remaining edges fill
    open ports in schema order; a variadic port absorbs any surplus. The
    matching is silent when only one assignment is possible; it is flagged
    ambiguous when several leftover edges competed for several open ports.
    """
    schema = graph.registry.get(graph.node(node_id).kind)
    ports = schema.input_ports if schema is not None else ()
    incoming = graph.predecessors(node_id)

    by_label = {p.label: p for p in ports}
    counts: Counter = Counter()
    bindings = []
    leftovers = []
    for pair in incoming:
        port = by_label.get(pair[1]) if pair[1] else None
        if port is not None:
            bindings.append((pair, port))
            counts[port.label] += 1
        else:
            leftovers.append(pair)

    open_ports = [
        p for p in ports if not p.ambient and not p.variadic and counts[p.label] == 0
    ]
    variadic = next((p for p in ports if p.variadic), None)
    ambiguous = len(leftovers) >= 2 and len(open_ports) >= 2
    unexpected = []
    for pair in leftovers:
        if open_ports:
            port = open_ports.pop(0)
        elif variadic is not None:
            port = variadic
        else:
            unexpected.append(pair)
            continue
        bindings.append((pair, port))
        counts[port.label] += 1

    missing = [
        p
        for p in ports
        if p.required
        and not p.ambient
        and counts[p.label] == 0
        and not (p.variadic and p.min_count >= 2)  # fan-in minimums belong to W5
    ]
    overfed = [
        p for p in ports if not p.variadic and counts[p.label] > 1
    ]
    return BindingResult(bindings, missing, unexpected, overfed, ambiguous)


def soft_check(graph: WorkflowGraph) -> list[Diagnostic]:
    """Run every structural rule; total over arbitrary constructed graphs."""
    out: list[Diagnostic] = []
    out.extend(_check_w1(graph))
    out.extend(_check_w2(graph))
    out.extend(_check_w3(graph))
    out.extend(_check_w4(graph))
    out.extend(_check_w5(graph))
    out.extend(_check_struct(graph))
    return sort_diagnostics(out)


def _check_w1(graph):
    roles = graph.interface_roles()
    out = []
    if not roles.problem_entries:
        out.append(
            Diagnostic(W1, ERROR, "missing entry interface node", subject=RESERVED_ENTRY)
        )
    if not roles.exits:
        out.append(
            Diagnostic(W1, ERROR, "missing exit interface node", subject=RESERVED_EXIT)
        )
    if len(roles.problem_entries) > 1:
        for nid in roles.problem_entries:
            out.append(Diagnostic(W1, ERROR, "multiple entry interface nodes", subject=nid))
    if len(roles.aux_entries) > 1:
        for nid in roles.aux_entries:
            out.append(Diagnostic(W1, ERROR, "multiple auxiliary entry interface nodes", subject=nid))
    if len(roles.exits) > 1:
        for nid in roles.exits:
            out.append(Diagnostic(W1, ERROR, "multiple exit interface nodes", subject=nid))
    return out


def _check_w2(graph):
    roles = graph.interface_roles()
    if not roles.entries or not roles.exits:
        return []  # W1 already failed; reachability is undefined
    forward = graph.reachable_from_entry()
    backward = graph.reaches_exit()
    out = []
    for nid in graph.node_ids():
        from_entry = nid in forward
        to_exit = nid in backward
        if from_entry and to_exit:
            continue
        if not from_entry and not to_exit:
            detail = "unreachable from entry and cannot reach exit"
        elif not from_entry:
            detail = "unreachable from entry"
        else:
            detail = "cannot reach exit"
        out.append(Diagnostic(W2, ERROR, f"node is {detail}", subject=nid))
    return out


def _check_w3(graph):
    roles = graph.interface_roles()
    out = []
    for nid in graph.node_ids():
        node = graph.node(nid)
        schema = graph.registry.get(node.kind)
        interface = schema is not None and schema.is_interface
        if nid in _RESERVED_IDS and not interface:
            out.append(
                Diagnostic(
                    W3,
                    ERROR,
                    f"reserved node {nid} must be classified as Interface, not {node.kind}",
                    subject=nid,
                )
            )
            continue
        if interface:
            continue
        if graph.in_degree(nid) == 0 or graph.out_degree(nid) == 0:
            out.append(
                Diagnostic(
                    W3,
                    ERROR,
                    f"node of kind {node.kind} plays an entry/exit role but is not an Interface",
                    subject=nid,
                )
            )
    for nid in roles.midstream + roles.isolated:
        out.append(
            Diagnostic(W3, ERROR, "interface node is neither entry nor exit", subject=nid)
        )
    return out


def _check_w4(graph):
    out = []
    for node in graph.nodes:
        schema = graph.registry.get(node.kind)
        if schema is None:
            if node.kind == UNCLASSIFIED:
                message = f"unclassified node {node.id!r} (no class assignment)"
            else:
                message = f"unknown node type {node.kind!r}"
            out.append(Diagnostic(W4, ERROR, message, subject=node.id))
            continue
        if schema.domain_restriction and schema.domain_restriction != graph.domain:
            out.append(
                Diagnostic(
                    W4,
                    ERROR,
                    f"kind {schema.kind} is restricted to {schema.domain_restriction} "
                    f"workflows but this graph is {graph.domain}",
                    subject=node.id,
                )
            )
        for attr in schema.required_attrs():
            if attr.key not in node.attributes:
                out.append(
                    Diagnostic(
                        W4,
                        ERROR,
                        f"missing required attribute {attr.key!r} for kind {schema.kind}",
                        subject=node.id,
                    )
                )
    return out


def _check_w5(graph):
    out = []
    for node in graph.nodes:
        schema = graph.registry.get(node.kind)
        if schema is None:
            continue
        for port in schema.input_ports:
            if port.variadic and port.min_count >= 2:
                indeg = graph.in_degree(node.id)
                if indeg < port.min_count:
                    out.append(
                        Diagnostic(
                            W5,
                            ERROR,
                            f"{schema.kind} node has {indeg} incoming connection"
                            f"{'s' if indeg != 1 else ''}; at least {port.min_count} required",
                            subject=node.id,
                        )
                    )
    return out


def _check_struct(graph):
    out = []
    for edge in graph.edges:
        if edge.source == edge.target:
            out.append(
                Diagnostic(STRUCT, ERROR, "self-loop edge", subject=f"{edge.source}->{edge.target}")
            )
    for (source, target, label), count in sorted(
        graph.edge_multiset().items(), key=lambda item: (item[0][0], item[0][1], item[0][2] or "")
    ):
        if count > 1:
            suffix = f" labeled {label!r}" if label else ""
            out.append(
                Diagnostic(
                    STRUCT,
                    ERROR,
                    f"duplicate edge{suffix} (x{count})",
                    subject=f"{source}->{target}",
                )
            )
    for nid in sorted(graph.cycle_nodes()):
        out.append(Diagnostic(STRUCT, ERROR, "node lies on a directed cycle", subject=nid))

    for nid in graph.node_ids():
        node = graph.node(nid)
        schema = graph.registry.get(node.kind)
        if schema is None:
            continue
        if schema.is_interface:
            if schema.interface_role == "entry" and graph.in_degree(nid) > 0:
                out.append(
                    Diagnostic(STRUCT, ERROR, "entry interface must not receive input", subject=nid)
                )
            if schema.interface_role == "exit" and graph.out_degree(nid) > 0:
                out.append(
                    Diagnostic(STRUCT, ERROR, "exit interface must not produce output", subject=nid)
                )
            continue
        result = bind_input_ports(graph, nid)
        for port in result.missing:
            out.append(
                Diagnostic(STRUCT, ERROR, f"missing required input {port.label!r}", subject=nid)
            )
        for source, label in result.unexpected:
            out.append(
                Diagnostic(
                    STRUCT,
                    ERROR,
                    f"unexpected input from {source} (no open port)",
                    subject=nid,
                )
            )
        for port in result.overfed:
            out.append(
                Diagnostic(
                    STRUCT, ERROR, f"port {port.label!r} bound more than once", subject=nid
                )
            )
        if result.ambiguous:
            out.append(
                Diagnostic(
                    STRUCT,
                    WARNING,
                    "ambiguous port binding resolved by edge order",
                    subject=nid,
                )
            )
        for (source, label), port in result.bindings:
            payload = type_of_output(graph, source)
            if payload is None:
                continue  # covered by the exit-produces-output rule
            if not port_accepts(port, payload):
                out.append(
                    Diagnostic(
                        STRUCT,
                        ERROR,
                        f"type mismatch: {source} emits {payload!r} but port "
                        f"{port.label!r} accepts {', '.join(port.accepts)}",
                        subject=nid,
                    )
                )

    out.extend(_check_prompts(graph))
    return out


def _check_prompts(graph):
    out = []
    used = set()
    for node in graph.nodes:
        schema = graph.registry.get(node.kind)
        if schema is None:
            continue
        for attr in schema.attribute_keys:
            if not attr.prompt_ref:
                continue
            value = node.attributes.get(attr.key)
            if value is None or not IDENT_RE.match(value):
                continue  # inline text, not a reference
            if value in graph.prompts:
                used.add(value)
            else:
                out.append(
                    Diagnostic(
                        STRUCT,
                        WARNING,
                        f"unresolved prompt reference {value!r} in attribute {attr.key!r}",
                        subject=node.id,
                    )
                )
    for name in sorted(graph.prompts):
        if name not in used:
            out.append(Diagnostic(STRUCT, WARNING, f"unused prompt entry {name!r}"))
    return out


def validate(target, registry=None, domain=None) -> Verdict:
    """Full verdict for source text or a graph value.

    Text goes through the hard check first; lowering and the soft check run
    only when the source is syntactically within the dialect. Diagnostics
    are reported hard-side first, then the structural findings.
    """
    if isinstance(target, WorkflowGraph):
        return make_verdict(soft_check(target))
    doc = parse_workflow(target)
    hard = list(doc.diagnostics)
    if any(d.is_error for d in hard):
        return make_verdict(sort_diagnostics(hard))
    graph, lowering = lower_to_graph(doc, registry=registry, domain=domain)
    soft = soft_check(graph)
    reported = {(d.rule, d.subject) for d in lowering}
    merged = lowering + [d for d in soft if (d.rule, d.subject) not in reported]
    return make_verdict(hard + sort_diagnostics(merged))


def render_diagnostics(diags) -> str:
    return "\n".join(d.render() for d in diags)
