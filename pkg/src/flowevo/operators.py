"""Constraint-preserving graph rewrite operators.

Six atomic rewrites drive workflow evolution: attribute substitution, node
addition on an edge, edge rewiring, linear-node deletion, subgraph
mutation against a motif library, and crossover at a shared interface
node. Every operator checks its local type preconditions, builds a new
graph value, and re-validates the product; a product that fails validation
is rejected wholesale, so no partially rewritten state is ever observable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .graph import Edge, Node, WorkflowGraph, type_of_output
from .registry import NodeTypeSchema, port_accepts
from .validator import Verdict, bind_input_ports, validate


class OperatorKind(enum.Enum):
    SUBSTITUTION = "substitution"
    ADDITION = "addition"
    REWIRING = "rewiring"
    DELETION = "deletion"
    SUBGRAPH_MUTATION = "subgraph_mutation"
    CROSSOVER = "crossover"


def default_operator_weights(crossover_rate: float = 0.10) -> dict:
    """Uniform weights over the five local operators; crossover gets its own rate."""
    share = (1.0 - crossover_rate) / 5.0
    weights = {kind: share for kind in OperatorKind}
    weights[OperatorKind.CROSSOVER] = crossover_rate
    return weights


class OperatorPreconditionError(Exception):
    """A rewrite's local precondition does not hold at the requested site."""


class RewriteRejectedError(Exception):
    """The rewritten product failed re-validation (closure guard)."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)


@dataclass(frozen=True)
class RewriteOutcome:
    """A successful rewrite: new graph value(s), all re-validated."""

    graphs: tuple[WorkflowGraph, ...]
    applied: OperatorKind
    description: str
    verdicts: tuple[Verdict, ...]

    def modification_record(self) -> str:
        return f"<modification>{self.description}</modification>"


def _guard(graphs, applied: OperatorKind, description: str) -> RewriteOutcome:
    verdicts = []
    for graph in graphs:
        verdict = validate(graph)
        if verdict.q != 1:
            raise RewriteRejectedError(
                f"{applied.value} product failed validation: "
                + "; ".join(d.render() for d in verdict.errors[:4]),
                diagnostics=verdict.diagnostics,
            )
        verdicts.append(verdict)
    return RewriteOutcome(tuple(graphs), applied, description, tuple(verdicts))


def _port_fed_by(graph: WorkflowGraph, target: str, source: str, label):
    """The schema port an existing edge (source, target, label) lands on."""
    for (src, lab), port in bind_input_ports(graph, target).bindings:
        if src == source and lab == label:
            return port
    return None


def _find_edge(graph: WorkflowGraph, source: str, target: str, label=...) -> Edge:
    candidates = [
        e
        for e in graph.edges
        if e.source == source and e.target == target and (label is ... or e.label == label)
    ]
    if not candidates:
        raise OperatorPreconditionError(f"no edge {source}->{target} in graph")
    candidates.sort(key=lambda e: (e.label is not None, e.label or ""))
    return candidates[0]


def _remove_one_edge(edges, victim: Edge):
    out = list(edges)
    out.remove(victim)
    return out


# -- node substitution ---------------------------------------------------------


def substitute_node(graph: WorkflowGraph, node_id: str, new_attributes: dict) -> RewriteOutcome:
    """Replace one node's attribute map; topology and kind stay fixed."""
    if node_id not in graph:
        raise OperatorPreconditionError(f"unknown node {node_id!r}")
    node = graph.node(node_id)
    schema = graph.registry.get(node.kind)
    if schema is not None:
        for attr in schema.required_attrs():
            if attr.key not in new_attributes:
                raise OperatorPreconditionError(
                    f"substitution on {node_id} drops required attribute {attr.key!r}"
                )
    new_node = replace(node, attributes=dict(new_attributes))
    nodes = tuple(new_node if n.id == node_id else n for n in graph.nodes)
    changed = {
        k: (node.attributes.get(k), new_attributes.get(k))
        for k in set(node.attributes) | set(new_attributes)
        if node.attributes.get(k) != new_attributes.get(k)
    }
    detail = ", ".join(f"{k}: {old!r} -> {new!r}" for k, (old, new) in sorted(changed.items()))
    description = f"substitute attributes of node {node_id}" + (f" ({detail})" if detail else " (unchanged)")
    return _guard([graph.with_changes(nodes=nodes)], OperatorKind.SUBSTITUTION, description)


# -- node addition --------------------------------------------------------------


def add_node(graph: WorkflowGraph, edge, new_node: Node) -> RewriteOutcome:
    """Insert ``new_node`` on an existing edge (v_a, v_b).

    The edge is replaced by (v_a, new) and (new, v_b); the second edge keeps
    the original label so the payload lands on the same port of v_b. Both
    boundaries must be type-compatible with the new node's schema.
    """
    source, target = edge[0], edge[1]
    label = edge[2] if len(edge) > 2 else ...
    victim = _find_edge(graph, source, target, label)
    if new_node.id in graph:
        raise OperatorPreconditionError(f"node id {new_node.id!r} already in graph")
    schema = graph.registry.get(new_node.kind)
    if schema is None:
        raise OperatorPreconditionError(f"unknown kind {new_node.kind!r}")
    if schema.is_interface:
        raise OperatorPreconditionError("cannot insert an Interface node")
    primary = schema.primary_input()
    upstream_type = type_of_output(graph, source)
    if primary is None or not port_accepts(primary, upstream_type):
        raise OperatorPreconditionError(
            f"boundary (v_a, v') mismatch: {source} emits {upstream_type!r}, "
            f"{new_node.kind} consumes {primary.label if primary else 'nothing'!r}"
        )
    out_type = schema.output_port.type if schema.output_port else None
    target_port = _port_fed_by(graph, target, source, victim.label)
    if target_port is not None and not port_accepts(target_port, out_type):
        raise OperatorPreconditionError(
            f"boundary (v', v_b) mismatch: {new_node.kind} emits {out_type!r}, "
            f"port {target_port.label!r} of {target} does not accept it"
        )
    edges = _remove_one_edge(graph.edges, victim)
    edges.append(Edge(source, new_node.id, None))
    edges.append(Edge(new_node.id, target, victim.label))
    nodes = graph.nodes + (new_node,)
    description = f"add node {new_node.id} ({new_node.kind}) on edge {source}->{target}"
    return _guard(
        [graph.with_changes(nodes=nodes, edges=tuple(edges))], OperatorKind.ADDITION, description
    )


# -- edge rewiring ----------------------------------------------------------------


def rewire_edge(graph: WorkflowGraph, existing, third: str, direction: str) -> RewriteOutcome:
    """Disconnect (v_a, v_b) and connect (v_a, v_c) or (v_c, v_b)."""
    source, target = existing[0], existing[1]
    label = existing[2] if len(existing) > 2 else ...
    victim = _find_edge(graph, source, target, label)
    if third not in graph:
        raise OperatorPreconditionError(f"unknown node {third!r}")
    if direction not in ("to_third", "from_third"):
        raise OperatorPreconditionError(f"bad direction {direction!r}")
    if direction == "to_third":
        new_edge = Edge(source, third, victim.label)
        payload = type_of_output(graph, source)
        schema = graph.registry.get(graph.node(third).kind)
        acceptable = schema is not None and any(
            port_accepts(p, payload) for p in schema.input_ports if not p.ambient
        )
        if schema is not None and schema.is_interface:
            acceptable = True  # guard decides whether the interface role survives
        if not acceptable:
            raise OperatorPreconditionError(
                f"type mismatch: {third} has no port accepting {payload!r}"
            )
    else:
        new_edge = Edge(third, target, victim.label)
        payload = type_of_output(graph, third)
        port = _port_fed_by(graph, target, source, victim.label)
        if port is not None and not port_accepts(port, payload):
            raise OperatorPreconditionError(
                f"type mismatch: {third} emits {payload!r}, port {port.label!r} "
                f"of {target} does not accept it"
            )
    if new_edge.source == new_edge.target:
        raise OperatorPreconditionError("rewiring would create a self-loop")
    edges = _remove_one_edge(graph.edges, victim)
    edges.append(new_edge)
    description = (
        f"rewire edge {source}->{target} to {new_edge.source}->{new_edge.target}"
    )
    return _guard([graph.with_changes(edges=tuple(edges))], OperatorKind.REWIRING, description)


# -- node deletion ------------------------------------------------------------------


def delete_node(graph: WorkflowGraph, node_id: str) -> RewriteOutcome:
    """Delete a linear (fan-in 1, fan-out 1) node and bridge its neighbors."""
    if node_id not in graph:
        raise OperatorPreconditionError(f"unknown node {node_id!r}")
    node = graph.node(node_id)
    schema = graph.registry.get(node.kind)
    if schema is not None and schema.is_interface:
        raise OperatorPreconditionError("cannot delete an Interface node")
    indeg, outdeg = graph.in_degree(node_id), graph.out_degree(node_id)
    if indeg != 1 or outdeg != 1:
        raise OperatorPreconditionError(
            f"node {node_id} is not linear (fan-in {indeg}, fan-out {outdeg})"
        )
    (pred, _pred_label) = graph.predecessors(node_id)[0]
    (succ, succ_label) = graph.successors(node_id)[0]
    if pred == succ:
        raise OperatorPreconditionError("deletion would create a self-loop")
    bridge_port = _port_fed_by(graph, succ, node_id, succ_label)
    upstream_type = type_of_output(graph, pred)
    if bridge_port is not None and not port_accepts(bridge_port, upstream_type):
        raise OperatorPreconditionError(
            f"bridging type mismatch: {pred} emits {upstream_type!r}, port "
            f"{bridge_port.label!r} of {succ} does not accept it"
        )
    nodes = tuple(n for n in graph.nodes if n.id != node_id)
    edges = [e for e in graph.edges if node_id not in (e.source, e.target)]
    edges.append(Edge(pred, succ, succ_label))
    description = f"delete node {node_id} ({node.kind}) and bridge {pred}->{succ}"
    return _guard(
        [graph.with_changes(nodes=nodes, edges=tuple(edges))], OperatorKind.DELETION, description
    )


# -- subgraph mutation -----------------------------------------------------------------


@dataclass(frozen=True)
class Fragment:
    """A replacement subgraph with declared input/output boundary nodes."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...] = ()
    prompts: dict = field(default_factory=dict)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    label: str = "fragment"


def _region_boundary(graph: WorkflowGraph, region: frozenset):
    incoming, outgoing = [], []
    for e in graph.edges:
        src_in, tgt_in = e.source in region, e.target in region
        if tgt_in and not src_in:
            incoming.append(e)
        elif src_in and not tgt_in:
            outgoing.append(e)
    return incoming, outgoing


def _region_connected(graph: WorkflowGraph, region: frozenset) -> bool:
    if not region:
        return False
    if len(region) == 1:
        return True
    neighbors = {nid: set() for nid in region}
    for e in graph.edges:
        if e.source in region and e.target in region:
            neighbors[e.source].add(e.target)
            neighbors[e.target].add(e.source)
    seen = set()
    stack = [next(iter(region))]
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        stack.extend(neighbors[current] - seen)
    return seen == region


def mutate_subgraph(graph: WorkflowGraph, region, replacement: Fragment) -> RewriteOutcome:
    """Replace a connected region with a boundary-compatible fragment.

    Each external edge into the region is re-attached to every declared
    fragment input node (and symmetrically for outputs), so a fragment with
    a wider boundary fans the surrounding dataflow out across its nodes.
    """
    region = frozenset(region)
    unknown = [nid for nid in region if nid not in graph]
    if unknown:
        raise OperatorPreconditionError(f"region references unknown nodes {unknown!r}")
    for nid in region:
        schema = graph.registry.get(graph.node(nid).kind)
        if schema is not None and schema.is_interface:
            raise OperatorPreconditionError("region must not contain Interface nodes")
    if not _region_connected(graph, region):
        raise OperatorPreconditionError("region is empty or not connected")
    if not replacement.inputs or not replacement.outputs:
        raise OperatorPreconditionError("fragment must declare input and output nodes")
    frag_ids = {n.id for n in replacement.nodes}
    if len(frag_ids) != len(replacement.nodes):
        raise OperatorPreconditionError("fragment contains duplicate node ids")
    for nid in replacement.inputs + replacement.outputs:
        if nid not in frag_ids:
            raise OperatorPreconditionError(f"fragment boundary node {nid!r} not in fragment")

    incoming, outgoing = _region_boundary(graph, region)
    frag_by_id = {n.id: n for n in replacement.nodes}
    mismatched = []
    for e in incoming:
        payload = type_of_output(graph, e.source)
        for fid in replacement.inputs:
            schema = graph.registry.get(frag_by_id[fid].kind)
            primary = schema.primary_input() if schema else None
            if primary is None or not port_accepts(primary, payload):
                mismatched.append(f"{e.source} ({payload}) -> {fid}")
    for e in outgoing:
        port = _port_fed_by(graph, e.target, e.source, e.label)
        for fid in replacement.outputs:
            schema = graph.registry.get(frag_by_id[fid].kind)
            out_type = schema.output_port.type if schema and schema.output_port else None
            if port is not None and not port_accepts(port, out_type):
                mismatched.append(f"{fid} ({out_type}) -> {e.target}")
    if mismatched:
        raise OperatorPreconditionError(
            "boundary signature mismatch: " + "; ".join(sorted(set(mismatched)))
        )

    kept_ids = set(graph.node_ids()) - region
    rename: dict[str, str] = {}
    for node in replacement.nodes:
        new_id = node.id
        counter = 2
        while new_id in kept_ids or new_id in rename.values():
            new_id = f"{node.id}_r{counter}"
            counter += 1
        rename[node.id] = new_id

    nodes = [n for n in graph.nodes if n.id not in region]
    nodes.extend(replace(n, id=rename[n.id]) for n in replacement.nodes)
    edges = [e for e in graph.edges if e.source not in region and e.target not in region]
    edges.extend(
        Edge(rename[e.source], rename[e.target], e.label) for e in replacement.edges
    )
    for e in incoming:
        for fid in replacement.inputs:
            edges.append(Edge(e.source, rename[fid], e.label))
    for e in outgoing:
        for fid in replacement.outputs:
            edges.append(Edge(rename[fid], e.target, e.label))
    prompts = graph.prompts.merged(replacement.prompts)
    description = (
        f"mutate subgraph {{{', '.join(sorted(region))}}} -> "
        f"{replacement.label} ({len(replacement.nodes)} nodes)"
    )
    return _guard(
        [graph.with_changes(nodes=tuple(nodes), edges=tuple(edges), prompts=prompts)],
        OperatorKind.SUBGRAPH_MUTATION,
        description,
    )


# -- crossover -------------------------------------------------------------------------


def _topo_depth(graph: WorkflowGraph) -> dict:
    depth = {nid: 0 for nid in graph.node_ids()}
    for nid in graph.topological_order():
        for succ, _ in graph.successors(nid):
            depth[succ] = max(depth[succ], depth[nid] + 1)
    return depth


def _dominates_downstream(graph: WorkflowGraph, node_id: str) -> bool:
    """Every edge into the strictly-downstream region originates at or inside it."""
    downstream = graph.downstream_of(node_id)
    allowed = downstream | {node_id}
    for e in graph.edges:
        if e.target in downstream and e.source not in allowed:
            return False
    return True


def default_crossover_point(g1: WorkflowGraph, g2: WorkflowGraph):
    """Deepest shared-kind node pair, kind priority ensemble, test, then name order."""
    kinds1 = {}
    kinds2 = {}
    for g, table in ((g1, kinds1), (g2, kinds2)):
        for node in g.nodes:
            schema = g.registry.get(node.kind)
            if schema is None or schema.is_interface:
                continue
            table.setdefault(g.registry.resolve_kind(node.kind) or node.kind, []).append(node.id)
    shared = set(kinds1) & set(kinds2)
    priority = [k for k in ("ScEnsembleOp", "TestOp") if k in shared]
    priority += sorted(shared - set(priority))
    depth1, depth2 = _topo_depth(g1), _topo_depth(g2)
    for kind in priority:
        candidates1 = sorted(kinds1[kind], key=lambda n: (-depth1[n], n))
        candidates2 = sorted(kinds2[kind], key=lambda n: (-depth2[n], n))
        for v1 in candidates1:
            if not _dominates_downstream(g1, v1):
                continue
            for v2 in candidates2:
                if _dominates_downstream(g2, v2):
                    return v1, v2
    return None


def _graft_downstream(own: WorkflowGraph, v_own: str, donor: WorkflowGraph, v_donor: str) -> WorkflowGraph:
    drop = own.downstream_of(v_own)
    imported = donor.downstream_of(v_donor)
    kept_ids = set(own.node_ids()) - drop
    rename = {}
    for nid in sorted(imported):
        new_id = nid
        counter = 2
        while new_id in kept_ids or new_id in rename.values():
            new_id = f"{nid}_x{counter}"
            counter += 1
        rename[nid] = new_id
    rename[v_donor] = v_own

    nodes = [n for n in own.nodes if n.id not in drop]
    nodes.extend(replace(n, id=rename[n.id]) for n in donor.nodes if n.id in imported)
    edges = [e for e in own.edges if e.source not in drop and e.target not in drop]
    for e in donor.edges:
        src_in = e.source in imported or e.source == v_donor
        if src_in and e.target in imported:
            edges.append(Edge(rename[e.source], rename[e.target], e.label))

    # carry over prompt texts referenced by migrated nodes
    extra = {}
    for n in donor.nodes:
        if n.id not in imported:
            continue
        schema = donor.registry.get(n.kind)
        if schema is None:
            continue
        for attr in schema.attribute_keys:
            value = n.attributes.get(attr.key)
            if attr.prompt_ref and value and value in donor.prompts:
                extra[value] = donor.prompts.get(value)
    prompts = own.prompts.merged(extra)
    return own.with_changes(nodes=tuple(nodes), edges=tuple(edges), prompts=prompts)


def crossover(g1: WorkflowGraph, g2: WorkflowGraph, selection_rule=None) -> RewriteOutcome:
    """Exchange the strictly-downstream subgraphs at a shared interface node.

    All-or-nothing: both children must re-validate or the whole operation is
    rejected. Imported node ids are suffixed only when they would collide.
    """
    if g1.domain != g2.domain:
        raise OperatorPreconditionError("crossover parents must share a domain")
    for i, parent in enumerate((g1, g2), start=1):
        if validate(parent).q != 1:
            raise OperatorPreconditionError(f"crossover parent {i} does not validate")
    rule = selection_rule or default_crossover_point
    point = rule(g1, g2)
    if point is None:
        raise OperatorPreconditionError("no crossover point: parents share no common interface node")
    v1, v2 = point
    child1 = _graft_downstream(g1, v1, g2, v2)
    child2 = _graft_downstream(g2, v2, g1, v1)
    description = f"crossover at {v1}/{v2}: exchanged downstream subgraphs"
    return _guard([child1, child2], OperatorKind.CROSSOVER, description)


# -- randomized application ---------------------------------------------------------

ANALYSIS_PHRASES = (
    "Calculate step by step",
    "Generate solution with edge cases",
    "Execute code for precise calculations",
    "Verify and validate results",
    "Explore alternative methods",
    "Refine and format final output",
    "Solve the math problem step by step",
    "Double-check arithmetic carefully",
)

BUILTIN_ROLE_PROMPTS = {
    "solution_generator": "Solve the given problem carefully and present the final answer clearly.",
    "careful_reasoner": "Reason through the problem step by step, checking each intermediate result.",
    "review_solution": "Review the given solution, correct any mistakes, and present the final answer.",
    "refine_solution": "Refine the given solution for clarity and correctness, then present the final answer.",
}

BUILTIN_INSTRUCTION_PROMPTS = {
    "direct_generator": "Generate a complete, correct Python function for the problem. Include necessary imports.",
    "robust_generator": "Generate a Python function that handles edge cases robustly and matches the required signature.",
    "concise_generator": "Generate a concise, readable Python function that solves the problem exactly as specified.",
}

_ID_PREFIX = {"CustomOp": "C", "ProgrammerOp": "P", "CustomCodeGenerateOp": "G"}


def _fresh_id(taken, prefix: str) -> str:
    counter = 1
    while f"{prefix}{counter}" in taken:
        counter += 1
    return f"{prefix}{counter}"


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


def _substitution_attributes(graph: WorkflowGraph, node: Node, schema: NodeTypeSchema, rng) -> dict:
    attrs = dict(node.attributes)
    spec = _pick(rng, list(schema.attribute_keys))
    current = attrs.get(spec.key)
    if spec.prompt_ref:
        pool = [k for k in sorted(graph.prompts) if k != current]
        value = _pick(rng, pool) if pool else f"{current or 'auto_role'}_alt"
    else:
        pool = [p for p in ANALYSIS_PHRASES if p != current]
        value = _pick(rng, pool)
    attrs[spec.key] = value
    return attrs


def _attributes_for(schema: NodeTypeSchema, graph: WorkflowGraph, rng) -> dict:
    attrs = {}
    for spec in schema.attribute_keys:
        if spec.prompt_ref:
            pool = sorted(graph.prompts)
            attrs[spec.key] = _pick(rng, pool) if pool else "auto_role"
        else:
            attrs[spec.key] = _pick(rng, list(ANALYSIS_PHRASES))
    return attrs


def _insertable_schemas(graph: WorkflowGraph):
    return [
        s
        for s in graph.registry.schemas()
        if s.insertable
        and not s.is_interface
        and s.domain_restriction in (None, graph.domain)
        and s.primary_input() is not None
        and s.output_port is not None
    ]


def _solver_specs(graph: WorkflowGraph, rng, count: int, taken: set):
    """Fresh solver nodes plus any prompt texts they introduce."""
    schemas = _insertable_schemas(graph)
    nodes, prompts = [], {}
    existing_keys = sorted(graph.prompts)
    for _ in range(count):
        schema = _pick(rng, schemas)
        node_id = _fresh_id(taken, _ID_PREFIX.get(schema.kind, "N"))
        taken.add(node_id)
        attrs = {}
        for spec in schema.attribute_keys:
            if spec.prompt_ref:
                builtin = BUILTIN_ROLE_PROMPTS if spec.key == "role" else BUILTIN_INSTRUCTION_PROMPTS
                pool = existing_keys + sorted(builtin)
                value = _pick(rng, pool)
                if value in builtin and value not in graph.prompts:
                    prompts[value] = builtin[value]
                attrs[spec.key] = value
            else:
                attrs[spec.key] = _pick(rng, list(ANALYSIS_PHRASES))
        nodes.append(Node(node_id, schema.kind, attrs, schema.display_name))
    return nodes, prompts


def motif_fragments(graph: WorkflowGraph, rng) -> list[Fragment]:
    """Built-in replacement motifs: solve chains, parallel branches,
    ensemble tails with optional refine, and a code-domain test tail."""
    taken = set(graph.node_ids())
    fragments = []

    chain, chain_prompts = _solver_specs(graph, rng, 2, set(taken))
    fragments.append(
        Fragment(
            nodes=tuple(chain),
            edges=(Edge(chain[0].id, chain[1].id),),
            prompts=chain_prompts,
            inputs=(chain[0].id,),
            outputs=(chain[1].id,),
            label="solve-chain",
        )
    )

    width = 2 + int(rng.integers(3))
    branches, branch_prompts = _solver_specs(graph, rng, width, set(taken))
    fragments.append(
        Fragment(
            nodes=tuple(branches),
            prompts=branch_prompts,
            inputs=tuple(n.id for n in branches),
            outputs=tuple(n.id for n in branches),
            label=f"parallel-{width}",
        )
    )

    ens_schema = graph.registry.get("ScEnsembleOp")
    if ens_schema is not None:
        width = 2 + int(rng.integers(4))
        pool = set(taken)
        solvers, solver_prompts = _solver_specs(graph, rng, width, pool)
        ens_id = "ENSEMBLE" if "ENSEMBLE" not in pool else _fresh_id(pool, "E")
        pool.add(ens_id)
        ens = Node(ens_id, "ScEnsembleOp", {}, ens_schema.display_name)
        edges = tuple(Edge(n.id, ens_id) for n in solvers)
        fragments.append(
            Fragment(
                nodes=tuple(solvers) + (ens,),
                edges=edges,
                prompts=solver_prompts,
                inputs=tuple(n.id for n in solvers),
                outputs=(ens_id,),
                label=f"ensemble-{width}",
            )
        )

        refine_id = "REFINE" if "REFINE" not in pool else _fresh_id(pool, "R")
        role = "refine_solution"
        refine_prompts = dict(solver_prompts)
        if role not in graph.prompts:
            refine_prompts[role] = BUILTIN_ROLE_PROMPTS[role]
        refine = Node(refine_id, "CustomOp", {"role": role}, "Custom")
        fragments.append(
            Fragment(
                nodes=tuple(solvers) + (ens, refine),
                edges=edges + (Edge(ens_id, refine_id),),
                prompts=refine_prompts,
                inputs=tuple(n.id for n in solvers),
                outputs=(refine_id,),
                label=f"ensemble-refine-{width}",
            )
        )

    if graph.domain == "code" and graph.registry.get("TestOp") is not None and ens_schema is not None:
        pool = set(taken)
        gens, gen_prompts = _solver_specs(graph, rng, 2, pool)
        ens_id = _fresh_id(pool, "E")
        pool.add(ens_id)
        test_id = _fresh_id(pool, "T") if "T" in pool else "T"
        ens = Node(ens_id, "ScEnsembleOp", {}, "ScEnsemble")
        test = Node(test_id, "TestOp", {}, "Test")
        fragments.append(
            Fragment(
                nodes=tuple(gens) + (ens, test),
                edges=tuple(Edge(n.id, ens_id) for n in gens) + (Edge(ens_id, test_id),),
                prompts=gen_prompts,
                inputs=tuple(n.id for n in gens),
                outputs=(test_id,),
                label="test-tail",
            )
        )
    return fragments


def _try_substitution(graph, rng, budget):
    sites = [
        n.id
        for n in graph.nodes
        if (s := graph.registry.get(n.kind)) is not None
        and not s.is_interface
        and s.attribute_keys
    ]
    sites.sort()
    for idx in rng.permutation(len(sites))[:budget]:
        node = graph.node(sites[int(idx)])
        schema = graph.registry.get(node.kind)
        try:
            return substitute_node(graph, node.id, _substitution_attributes(graph, node, schema, rng))
        except (OperatorPreconditionError, RewriteRejectedError):
            continue
    return None


def _try_addition(graph, rng, budget):
    schemas = _insertable_schemas(graph)
    sites = [(e, s) for e in graph.edges for s in schemas]
    for idx in rng.permutation(len(sites))[:budget]:
        victim, schema = sites[int(idx)]
        node_id = _fresh_id(set(graph.node_ids()), _ID_PREFIX.get(schema.kind, "N"))
        node = Node(node_id, schema.kind, _attributes_for(schema, graph, rng), schema.display_name)
        try:
            return add_node(graph, (victim.source, victim.target, victim.label), node)
        except (OperatorPreconditionError, RewriteRejectedError):
            continue
    return None


def _try_rewiring(graph, rng, budget):
    sites = []
    keys = graph.edge_multiset()
    for e in graph.edges:
        for third in graph.node_ids():
            if third in (e.source, e.target):
                continue
            if (e.source, third, e.label) not in keys:
                sites.append((e, third, "to_third"))
            if (third, e.target, e.label) not in keys:
                sites.append((e, third, "from_third"))
    for idx in rng.permutation(len(sites))[:budget]:
        victim, third, direction = sites[int(idx)]
        try:
            return rewire_edge(graph, (victim.source, victim.target, victim.label), third, direction)
        except (OperatorPreconditionError, RewriteRejectedError):
            continue
    return None


def _try_deletion(graph, rng, budget):
    sites = [
        n.id
        for n in graph.nodes
        if graph.in_degree(n.id) == 1
        and graph.out_degree(n.id) == 1
        and not (
            (s := graph.registry.get(n.kind)) is not None and s.is_interface
        )
    ]
    sites.sort()
    for idx in rng.permutation(len(sites))[:budget]:
        try:
            return delete_node(graph, sites[int(idx)])
        except (OperatorPreconditionError, RewriteRejectedError):
            continue
    return None


def donor_fragments(donor: WorkflowGraph, rng) -> list[Fragment]:
    """Replacement fragments lifted from another workflow's subgraphs.

    Two shapes are extracted: a single solver node, and the full branch set
    feeding one of the donor's ensembles. Prompt texts referenced by the
    lifted nodes travel with the fragment.
    """

    def prompts_for(nodes):
        out = {}
        for node in nodes:
            schema = donor.registry.get(node.kind)
            if schema is None:
                continue
            for attr in schema.attribute_keys:
                value = node.attributes.get(attr.key)
                if attr.prompt_ref and value and value in donor.prompts:
                    out[value] = donor.prompts.get(value)
        return out

    solvers = [
        n
        for n in donor.nodes
        if (s := donor.registry.get(n.kind)) is not None
        and not s.is_interface
        and s.insertable
    ]
    fragments = []
    if solvers:
        node = solvers[int(rng.integers(len(solvers)))]
        lifted = Node(node.id, node.kind, dict(node.attributes), node.display_label)
        fragments.append(
            Fragment(
                nodes=(lifted,),
                prompts=prompts_for([lifted]),
                inputs=(lifted.id,),
                outputs=(lifted.id,),
                label=f"donor-node-{node.id}",
            )
        )
    ensembles = sorted(
        n.id
        for n in donor.nodes
        if donor.registry.resolve_kind(n.kind) == "ScEnsembleOp"
    )
    for ens_id in ensembles:
        # parallel edges repeat a source; each branch node appears once
        branch_ids = list(dict.fromkeys(src for src, _ in donor.predecessors(ens_id)))
        branches = [donor.node(b) for b in branch_ids]
        if len(branches) < 2 or any(
            (s := donor.registry.get(b.kind)) is None or s.is_interface or not s.insertable
            for b in branches
        ):
            continue
        lifted = tuple(
            Node(b.id, b.kind, dict(b.attributes), b.display_label) for b in branches
        )
        fragments.append(
            Fragment(
                nodes=lifted,
                prompts=prompts_for(lifted),
                inputs=tuple(n.id for n in lifted),
                outputs=tuple(n.id for n in lifted),
                label=f"donor-branches-{ens_id}",
            )
        )
    return fragments


def _try_subgraph_mutation(graph, rng, budget, partner=None):
    sites = [
        n.id
        for n in graph.nodes
        if not ((s := graph.registry.get(n.kind)) is not None and s.is_interface)
    ]
    sites.sort()
    for idx in rng.permutation(len(sites))[:budget]:
        region = {sites[int(idx)]}
        fragments = motif_fragments(graph, rng)
        if partner is not None and partner.domain == graph.domain:
            fragments.extend(donor_fragments(partner, rng))
        for frag_idx in rng.permutation(len(fragments)):
            try:
                return mutate_subgraph(graph, region, fragments[int(frag_idx)])
            except (OperatorPreconditionError, RewriteRejectedError):
                continue
    return None


def _weighted_kind_order(weights: dict, rng) -> list[OperatorKind]:
    remaining = sorted(
        ((k, w) for k, w in weights.items() if w > 0), key=lambda kv: kv[0].value
    )
    order = []
    while remaining:
        total = sum(w for _, w in remaining)
        probs = [w / total for _, w in remaining]
        idx = int(rng.choice(len(remaining), p=probs))
        order.append(remaining.pop(idx)[0])
    return order


def apply_random(target, rng, weights=None, site_budget: int = 8) -> RewriteOutcome | None:
    """Apply one randomly chosen operator at a randomly chosen valid site.

    ``target`` is a graph or a (primary, partner) pair; crossover needs the
    partner. The operator kind is drawn by weight; kinds whose sites are all
    inapplicable (or rejected by the closure guard within the site budget)
    fall through to the next drawn kind. Returns None when no rewrite
    applies anywhere, which callers treat as a resample signal.
    """
    if isinstance(target, WorkflowGraph):
        primary, partner = target, None
    else:
        primary = target[0]
        partner = target[1] if len(target) > 1 else None
    weights = dict(weights or default_operator_weights())
    if partner is None:
        weights.pop(OperatorKind.CROSSOVER, None)

    for kind in _weighted_kind_order(weights, rng):
        if kind is OperatorKind.SUBSTITUTION:
            outcome = _try_substitution(primary, rng, site_budget)
        elif kind is OperatorKind.ADDITION:
            outcome = _try_addition(primary, rng, site_budget)
        elif kind is OperatorKind.REWIRING:
            outcome = _try_rewiring(primary, rng, site_budget)
        elif kind is OperatorKind.DELETION:
            outcome = _try_deletion(primary, rng, site_budget)
        elif kind is OperatorKind.SUBGRAPH_MUTATION:
            outcome = _try_subgraph_mutation(primary, rng, site_budget, partner)
        else:
            try:
                outcome = crossover(primary, partner)
            except (OperatorPreconditionError, RewriteRejectedError):
                outcome = None
        if outcome is not None:
            return outcome
    return None
