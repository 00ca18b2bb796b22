from __future__ import annotations

import random

import pytest

from flowevo import (
    Edge,
    GraphConstructionError,
    MissingInterfaceError,
    Node,
    PromptTable,
    build_graph,
    type_of_input,
    type_of_output,
)


def minimal_graph():
    return build_graph(
        [Node("PROBLEM", "Interface"), Node("RETURN", "Interface")],
        [Edge("PROBLEM", "RETURN")],
    )


def test_minimal_graph_builds():
    graph = minimal_graph()
    assert len(graph.nodes) == 2
    assert len(graph.edges) == 1


def test_gsm8k_census(gsm8k):
    kinds = {}
    for node in gsm8k.nodes:
        kinds[node.kind] = kinds.get(node.kind, 0) + 1
    assert kinds == {"Interface": 2, "CustomOp": 1, "ProgrammerOp": 6, "ScEnsembleOp": 1}
    assert len(gsm8k.edges) == 14


def test_duplicate_node_id_rejected():
    with pytest.raises(GraphConstructionError, match="duplicate node id 'A'"):
        build_graph([Node("A", "CustomOp"), Node("A", "CustomOp")], [])


def test_dangling_endpoint_rejected():
    with pytest.raises(GraphConstructionError, match="dangling endpoint 'X'"):
        build_graph([Node("A", "CustomOp")], [Edge("A", "X")])


def test_bad_node_id_rejected():
    with pytest.raises(GraphConstructionError, match="bad node id"):
        build_graph([Node("9lives", "CustomOp")], [])


def test_bad_prompt_name_rejected():
    with pytest.raises(GraphConstructionError, match="bad prompt name"):
        PromptTable({"not valid": "text"})


def test_predecessors_of_ensemble(gsm8k):
    preds = gsm8k.predecessors("ENSEMBLE")
    assert [p for p, _ in preds] == ["C", "P1", "P2", "P3", "P4", "P5"]


def test_predecessors_of_entry_empty(gsm8k):
    assert gsm8k.predecessors("PROBLEM") == []


def test_predecessors_chain():
    graph = build_graph(
        [Node("A", "Interface"), Node("B", "CustomOp", {"role": "x"}), Node("C", "Interface")],
        [Edge("A", "B", "input"), Edge("B", "C")],
    )
    assert graph.predecessors("C") == [("B", None)]


def test_unknown_id_raises(gsm8k):
    with pytest.raises(KeyError):
        gsm8k.predecessors("NOPE")


def test_successors_predecessors_consistent(gsm8k, math_graph, humaneval, mbpp):
    for graph in (gsm8k, math_graph, humaneval, mbpp):
        for node_id in graph.node_ids():
            for target, label in graph.successors(node_id):
                assert (node_id, label) in graph.predecessors(target)
            for source, label in graph.predecessors(node_id):
                assert (node_id, label) in graph.successors(source)


def test_reachability_minimal():
    graph = minimal_graph()
    assert graph.reachable_from_entry() == {"PROBLEM", "RETURN"}
    assert graph.reaches_exit() == {"PROBLEM", "RETURN"}


def test_reachability_gsm8k_full(gsm8k):
    # hand-traced closure over the 14 published edges: every node is on
    # an entry-to-exit path
    everything = set(gsm8k.node_ids())
    assert gsm8k.reachable_from_entry() == everything
    assert gsm8k.reaches_exit() == everything


def test_isolated_node_absent_from_closures():
    graph = build_graph(
        [
            Node("PROBLEM", "Interface"),
            Node("RETURN", "Interface"),
            Node("Z", "CustomOp", {"role": "x"}),
        ],
        [Edge("PROBLEM", "RETURN")],
    )
    assert "Z" not in graph.reachable_from_entry()
    assert "Z" not in graph.reaches_exit()


def test_missing_interface_raises():
    graph = build_graph([Node("A", "CustomOp", {"role": "x"})], [])
    with pytest.raises(MissingInterfaceError):
        graph.reachable_from_entry()
    with pytest.raises(MissingInterfaceError):
        graph.reaches_exit()


def test_type_of_input_ensemble(gsm8k):
    port = type_of_input(gsm8k, "ENSEMBLE", "solution")
    assert port.type == "solution"
    assert port.min_count == 2


def test_type_of_input_unknown_port(gsm8k):
    with pytest.raises(KeyError, match="no input port"):
        type_of_input(gsm8k, "ENSEMBLE", "nonsense")


def test_type_of_output_entry(gsm8k):
    assert type_of_output(gsm8k, "PROBLEM") == "problem"


def test_type_of_output_aux_entry(humaneval):
    assert type_of_output(humaneval, "ENTRY_POINT") == "entry_point"


def test_testop_entry_point_port(humaneval):
    port = type_of_input(humaneval, "T", "entry_point")
    assert port.type == "entry_point"
    assert port.ambient


def test_equality_under_reordering(gsm8k):
    rng = random.Random(11)
    nodes = list(gsm8k.nodes)
    edges = list(gsm8k.edges)
    rng.shuffle(nodes)
    rng.shuffle(edges)
    shuffled = build_graph(nodes, edges, prompts=gsm8k.prompts, domain=gsm8k.domain)
    assert shuffled == gsm8k
    assert shuffled.structural_signature() == gsm8k.structural_signature()


def test_interface_roles(humaneval):
    roles = humaneval.interface_roles()
    assert roles.problem_entries == ("PROBLEM",)
    assert roles.aux_entries == ("ENTRY_POINT",)
    assert roles.exits == ("RETURN",)


def test_downstream_of(gsm8k):
    assert gsm8k.downstream_of("ENSEMBLE") == {"P6", "RETURN"}


def test_topological_order_raises_on_cycle():
    graph = build_graph(
        [Node("A", "CustomOp", {"role": "x"}), Node("B", "CustomOp", {"role": "y"})],
        [Edge("A", "B"), Edge("B", "A")],
    )
    with pytest.raises(GraphConstructionError, match="cycle"):
        graph.topological_order()
    assert graph.cycle_nodes() == {"A", "B"}


def test_reachability_matches_w2_verdict(corpus_graphs):
    # cross-module consistency on the published corpus: full forward
    # reachability coincides with the absence of W2 findings
    from flowevo.validator import soft_check

    for graph in corpus_graphs.values():
        w2 = [d for d in soft_check(graph) if d.rule == "W2"]
        fully_reachable = graph.reachable_from_entry() == set(graph.node_ids())
        assert fully_reachable and not w2


def test_forward_break_reports_w2(gsm8k):
    from flowevo.validator import soft_check

    edges = tuple(e for e in gsm8k.edges if not (e.source == "PROBLEM" and e.target == "C"))
    broken = gsm8k.with_changes(edges=edges)
    assert broken.reachable_from_entry() != set(broken.node_ids())
    assert any(d.rule == "W2" and d.subject == "C" for d in soft_check(broken))
