"""Typed workflow-graph data model and structural queries.

A graph value is immutable after construction: every rewrite in the system
produces a new graph. Construction is permissive (invalid structure is
representable; the validator is a separate pass) but rejects the few things
that would make a graph unusable as a value: duplicate node ids, dangling
edge endpoints, and malformed identifiers.
"""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, field
from types import MappingProxyType

from .registry import NodeTypeSchema, default_registry

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

RESERVED_ENTRY = "PROBLEM"
RESERVED_AUX_ENTRY = "ENTRY_POINT"
RESERVED_EXIT = "RETURN"


class GraphConstructionError(Exception):
    """Raised when a graph value cannot be built at all."""


class MissingInterfaceError(Exception):
    """Raised by reachability queries on graphs without entry/exit nodes."""


@dataclass(frozen=True)
class Node:
    """One typed, attributed workflow node."""

    id: str
    kind: str
    attributes: dict = field(default_factory=dict)
    display_label: str = ""

    def attr(self, key: str, default=None):
        return self.attributes.get(key, default)


@dataclass(frozen=True)
class Edge:
    """A directed, optionally labeled dependency.

    Blank labels carry no information and are normalized to None so that
    labelless edges compare equal however they were constructed.
    """

    source: str
    target: str
    label: str | None = None

    def __post_init__(self):
        if self.label is not None:
            stripped = self.label.strip()
            object.__setattr__(self, "label", stripped or None)

    def key(self) -> tuple:
        return (self.source, self.target, self.label)


class PromptTable:
    """Named prompt texts referenced by node attributes."""

    def __init__(self, entries=None):
        entries = dict(entries or {})
        for name in entries:
            if not IDENT_RE.match(name):
                raise GraphConstructionError(f"bad prompt name {name!r}")
        self._entries = entries

    @property
    def entries(self):
        return MappingProxyType(self._entries)

    def get(self, name: str, default=None):
        return self._entries.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PromptTable):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self) -> str:
        return f"PromptTable({sorted(self._entries)})"

    def merged(self, extra: dict) -> "PromptTable":
        merged = dict(extra)
        merged.update(self._entries)  # existing entries win
        return PromptTable(merged)


@dataclass(frozen=True)
class InterfaceRoles:
    """Entry/exit classification of a graph's interface nodes."""

    problem_entries: tuple[str, ...]
    aux_entries: tuple[str, ...]
    exits: tuple[str, ...]
    midstream: tuple[str, ...]
    isolated: tuple[str, ...]

    @property
    def entries(self) -> tuple[str, ...]:
        return self.problem_entries + self.aux_entries


class WorkflowGraph:
    """Immutable workflow graph with prebuilt adjacency indexes."""

    __slots__ = (
        "nodes",
        "edges",
        "prompts",
        "domain",
        "registry",
        "_by_id",
        "_out",
        "_in",
        "_roles",
    )

    def __init__(self, nodes, edges, prompts=None, domain="math", registry=None):
        nodes = tuple(nodes)
        edges = tuple(edges)
        by_id: dict[str, Node] = {}
        for node in nodes:
            if not IDENT_RE.match(node.id):
                raise GraphConstructionError(f"bad node id {node.id!r}")
            if node.id in by_id:
                raise GraphConstructionError(f"duplicate node id {node.id!r}")
            by_id[node.id] = node
        out: dict[str, list] = {nid: [] for nid in by_id}
        inc: dict[str, list] = {nid: [] for nid in by_id}
        for edge in edges:
            if edge.source not in by_id:
                raise GraphConstructionError(f"dangling endpoint {edge.source!r}")
            if edge.target not in by_id:
                raise GraphConstructionError(f"dangling endpoint {edge.target!r}")
            out[edge.source].append((edge.target, edge.label))
            inc[edge.target].append((edge.source, edge.label))
        self.nodes = nodes
        self.edges = edges
        self.prompts = prompts if prompts is not None else PromptTable()
        self.domain = domain
        self.registry = registry if registry is not None else default_registry()
        self._by_id = by_id
        self._out = {k: tuple(sorted(v, key=_pair_key)) for k, v in out.items()}
        self._in = {k: tuple(sorted(v, key=_pair_key)) for k, v in inc.items()}
        self._roles = None

    # -- basic queries ------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def node_ids(self) -> tuple[str, ...]:
        return tuple(self._by_id)

    def schema_of(self, node_id: str) -> NodeTypeSchema | None:
        return self.registry.get(self.node(node_id).kind)

    def predecessors(self, node_id: str) -> list[tuple[str, str | None]]:
        """Incoming (source id, edge label) pairs, sorted by source then label."""
        if node_id not in self._by_id:
            raise KeyError(f"unknown node id {node_id!r}")
        return list(self._in[node_id])

    def successors(self, node_id: str) -> list[tuple[str, str | None]]:
        """Outgoing (target id, edge label) pairs, sorted by target then label."""
        if node_id not in self._by_id:
            raise KeyError(f"unknown node id {node_id!r}")
        return list(self._out[node_id])

    def in_degree(self, node_id: str) -> int:
        return len(self._in[node_id])

    def out_degree(self, node_id: str) -> int:
        return len(self._out[node_id])

    def edge_multiset(self) -> Counter:
        return Counter(e.key() for e in self.edges)

    def has_edge(self, source: str, target: str, label=...) -> bool:
        for edge in self.edges:
            if edge.source == source and edge.target == target:
                if label is ... or edge.label == label:
                    return True
        return False

    # -- interface roles ----------------------------------------------------

    def interface_roles(self) -> InterfaceRoles:
        if self._roles is None:
            self._roles = self._classify_interfaces()
        return self._roles

    def _classify_interfaces(self) -> InterfaceRoles:
        problem, aux, exits, mid, isolated = [], [], [], [], []
        for nid, node in self._by_id.items():
            schema = self.registry.get(node.kind)
            if schema is None or not schema.is_interface:
                continue
            role = schema.interface_role
            if role == "entry":
                (aux if nid == RESERVED_AUX_ENTRY else problem).append(nid)
                continue
            if role == "exit":
                exits.append(nid)
                continue
            # auto role: classify by the degree convention
            indeg, outdeg = len(self._in[nid]), len(self._out[nid])
            if indeg == 0 and outdeg > 0:
                labels = {label for _, label in self._out[nid]}
                if nid == RESERVED_AUX_ENTRY or labels == {"entry_point"}:
                    aux.append(nid)
                else:
                    problem.append(nid)
            elif outdeg == 0 and indeg > 0:
                exits.append(nid)
            elif indeg == 0 and outdeg == 0:
                isolated.append(nid)
            else:
                mid.append(nid)
        return InterfaceRoles(
            tuple(sorted(problem)),
            tuple(sorted(aux)),
            tuple(sorted(exits)),
            tuple(sorted(mid)),
            tuple(sorted(isolated)),
        )

    def entry_node(self) -> str:
        roles = self.interface_roles()
        if not roles.problem_entries:
            raise MissingInterfaceError("graph has no entry interface node")
        return roles.problem_entries[0]

    def exit_node(self) -> str:
        roles = self.interface_roles()
        if not roles.exits:
            raise MissingInterfaceError("graph has no exit interface node")
        return roles.exits[0]

    # -- reachability -------------------------------------------------------

    def reachable_from_entry(self) -> frozenset[str]:
        """Forward closure from every entry interface node."""
        roles = self.interface_roles()
        if not roles.entries:
            raise MissingInterfaceError("graph has no entry interface node")
        return self._closure(roles.entries, self._out)

    def reaches_exit(self) -> frozenset[str]:
        """Backward closure from every exit interface node."""
        roles = self.interface_roles()
        if not roles.exits:
            raise MissingInterfaceError("graph has no exit interface node")
        return self._closure(roles.exits, self._in)

    @staticmethod
    def _closure(seeds, adjacency) -> frozenset[str]:
        seen = set(seeds)
        queue = deque(seeds)
        while queue:
            current = queue.popleft()
            for neighbor, _ in adjacency[current]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    queue.append(neighbor)
        return frozenset(seen)

    def downstream_of(self, node_id: str) -> frozenset[str]:
        """Nodes strictly reachable after ``node_id``."""
        closed = self._closure([node_id], self._out)
        return frozenset(closed - {node_id})

    # -- cycles and ordering -------------------------------------------------

    def cycle_nodes(self) -> frozenset[str]:
        """Nodes lying on at least one directed cycle (self-loops included)."""
        index_of: dict[str, int] = {}
        lowlink: dict[str, int] = {}
        on_stack: set[str] = set()
        stack: list[str] = []
        result: set[str] = set()
        counter = [0]

        def strongconnect(root: str) -> None:
            work = [(root, iter(self._out[root]))]
            index_of[root] = lowlink[root] = counter[0]
            counter[0] += 1
            stack.append(root)
            on_stack.add(root)
            while work:
                node, it = work[-1]
                advanced = False
                for neighbor, _ in it:
                    if neighbor not in index_of:
                        index_of[neighbor] = lowlink[neighbor] = counter[0]
                        counter[0] += 1
                        stack.append(neighbor)
                        on_stack.add(neighbor)
                        work.append((neighbor, iter(self._out[neighbor])))
                        advanced = True
                        break
                    if neighbor in on_stack:
                        lowlink[node] = min(lowlink[node], index_of[neighbor])
                if advanced:
                    continue
                work.pop()
                if work:
                    parent = work[-1][0]
                    lowlink[parent] = min(lowlink[parent], lowlink[node])
                if lowlink[node] == index_of[node]:
                    component = []
                    while True:
                        member = stack.pop()
                        on_stack.discard(member)
                        component.append(member)
                        if member == node:
                            break
                    if len(component) > 1:
                        result.update(component)

        for nid in self._by_id:
            if nid not in index_of:
                strongconnect(nid)
        for edge in self.edges:
            if edge.source == edge.target:
                result.add(edge.source)
        return frozenset(result)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm with id tie-breaking; raises on cycles."""
        indeg = {nid: len(self._in[nid]) for nid in self._by_id}
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order: list[str] = []
        import heapq

        heapq.heapify(ready)
        while ready:
            current = heapq.heappop(ready)
            order.append(current)
            for neighbor, _ in self._out[current]:
                indeg[neighbor] -= 1
                if indeg[neighbor] == 0:
                    heapq.heappush(ready, neighbor)
        if len(order) != len(self._by_id):
            raise GraphConstructionError("graph contains a cycle; no topological order")
        return order

    # -- equality and derivation ---------------------------------------------

    def structural_signature(self) -> tuple:
        nodes = tuple(
            sorted(
                (n.id, n.kind, tuple(sorted(n.attributes.items())), effective_display(self, n))
                for n in self.nodes
            )
        )
        edges = tuple(sorted(self.edge_multiset().items(), key=_edge_key))
        prompts = tuple(sorted(self.prompts.entries.items()))
        return (self.domain, nodes, edges, prompts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorkflowGraph):
            return NotImplemented
        return self.structural_signature() == other.structural_signature()

    def __repr__(self) -> str:
        return f"WorkflowGraph({len(self.nodes)} nodes, {len(self.edges)} edges, domain={self.domain})"

    def with_changes(self, nodes=None, edges=None, prompts=None, domain=None) -> "WorkflowGraph":
        return WorkflowGraph(
            nodes=self.nodes if nodes is None else nodes,
            edges=self.edges if edges is None else edges,
            prompts=self.prompts if prompts is None else prompts,
            domain=self.domain if domain is None else domain,
            registry=self.registry,
        )


def _pair_key(pair):
    other, label = pair
    return (other, label is not None, label or "")


def _edge_key(item):
    (source, target, label), _count = item
    return (source, target, label is not None, label or "")


_INTERFACE_DISPLAY_DEFAULTS = {
    RESERVED_ENTRY: "Problem",
    RESERVED_EXIT: "Return response & cost",
    RESERVED_AUX_ENTRY: "entry_point",
}


def effective_display(graph: WorkflowGraph, node: Node) -> str:
    """The display text a node renders with.

    Surrounding whitespace is presentational and does not survive parsing,
    so it is not structural either; blank labels take the kind default.
    """
    display = node.display_label.strip()
    if display:
        return display
    schema = graph.registry.get(node.kind)
    if schema is not None and schema.is_interface:
        return _INTERFACE_DISPLAY_DEFAULTS.get(node.id, node.id)
    if schema is not None and schema.display_name:
        return schema.display_name
    return node.kind[:-2] if node.kind.endswith("Op") else node.kind


def build_graph(nodes, edges, prompts=None, domain="math", registry=None) -> WorkflowGraph:
    """Construct a graph value; never silently drops elements.

    Malformed structure (cycles, missing interfaces, bad fan-in) is allowed
    here; only duplicate ids, dangling endpoints, and malformed identifiers
    are construction errors.
    """
    return WorkflowGraph(nodes, edges, prompts=prompts, domain=domain, registry=registry)


def type_of_output(graph: WorkflowGraph, node_id: str) -> str | None:
    """Semantic payload type a node emits; None for exit interfaces."""
    node = graph.node(node_id)
    schema = graph.registry.get(node.kind)
    if schema is None:
        return "any"
    if schema.is_interface:
        roles = graph.interface_roles()
        if node_id in roles.aux_entries:
            return "entry_point"
        if node_id in roles.problem_entries:
            return "problem"
        if node_id in roles.exits:
            return None
        return "any"
    return schema.output_port.type if schema.output_port else None


def type_of_input(graph: WorkflowGraph, node_id: str, label: str):
    """Schema port for ``label`` on the node's kind; raises on unknown ports."""
    node = graph.node(node_id)
    schema = graph.registry.get(node.kind)
    if schema is None:
        raise KeyError(f"node {node_id!r} has unregistered kind {node.kind!r}")
    for port in schema.input_ports:
        if port.label == label:
            return port
    raise KeyError(f"kind {schema.kind!r} has no input port {label!r}")
