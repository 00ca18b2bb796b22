from __future__ import annotations

import numpy as np
import pytest

from flowevo import Edge, Node, build_graph, validate
from flowevo.operators import (
    Fragment,
    OperatorKind,
    OperatorPreconditionError,
    RewriteRejectedError,
    add_node,
    apply_random,
    crossover,
    default_operator_weights,
    delete_node,
    mutate_subgraph,
    rewire_edge,
    substitute_node,
)


def two_node_minimal():
    return build_graph(
        [Node("PROBLEM", "Interface"), Node("RETURN", "Interface")],
        [Edge("PROBLEM", "RETURN")],
    )


# -- substitution -------------------------------------------------------------


def test_substitution_locality(gsm8k):
    outcome = substitute_node(gsm8k, "C", {"role": "simple_solver_2"})
    product = outcome.graphs[0]
    assert outcome.applied is OperatorKind.SUBSTITUTION
    assert product.node("C").attributes == {"role": "simple_solver_2"}
    changed = [
        n.id for n in product.nodes if n.attributes != gsm8k.node(n.id).attributes
    ]
    assert changed == ["C"]
    assert product.edge_multiset() == gsm8k.edge_multiset()
    assert product.prompts == gsm8k.prompts
    assert outcome.verdicts[0].q == 1


def test_identity_substitution(gsm8k):
    outcome = substitute_node(gsm8k, "C", dict(gsm8k.node("C").attributes))
    assert outcome.graphs[0] == gsm8k


def test_substitution_drops_required_attr(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="required attribute 'role'"):
        substitute_node(gsm8k, "C", {"notrole": "x"})


def test_substitution_unknown_node(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="unknown node"):
        substitute_node(gsm8k, "NOPE", {})


# -- addition -----------------------------------------------------------------


def test_add_refine_recreates_published_shape(gsm8k):
    # deleting P6 bridges ENSEMBLE->RETURN; inserting a Custom refine node
    # there reproduces the ensemble -> refine -> exit tail
    bridged = delete_node(gsm8k, "P6").graphs[0]
    assert bridged.has_edge("ENSEMBLE", "RETURN")
    refine = Node("REFINE", "CustomOp", {"role": "refine_solution"}, "Custom")
    outcome = add_node(bridged, ("ENSEMBLE", "RETURN"), refine)
    product = outcome.graphs[0]
    assert product.has_edge("ENSEMBLE", "REFINE")
    assert product.has_edge("REFINE", "RETURN")
    assert not product.has_edge("ENSEMBLE", "RETURN")
    assert len(product.nodes) == len(bridged.nodes) + 1
    assert len(product.edges) == len(bridged.edges) + 1


def test_add_on_missing_edge(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="no edge"):
        add_node(gsm8k, ("P1", "RETURN"), Node("X", "CustomOp", {"role": "x"}))


def test_add_ensemble_rejected_by_guard(gsm8k):
    # an inserted ensemble would sit at fan-in 1, violating the fan-in rule
    with pytest.raises(RewriteRejectedError) as exc_info:
        add_node(gsm8k, ("ENSEMBLE", "P6"), Node("E2", "ScEnsembleOp"))
    assert any(d.rule == "W5" for d in exc_info.value.diagnostics)


def test_add_interface_forbidden(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="Interface"):
        add_node(gsm8k, ("ENSEMBLE", "P6"), Node("I2", "Interface"))


def test_add_duplicate_id(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="already in graph"):
        add_node(gsm8k, ("ENSEMBLE", "P6"), Node("P1", "CustomOp", {"role": "x"}))


def test_add_type_mismatch_boundary(gsm8k):
    # TestOp consumes solutions only; the PROBLEM -> C edge carries a problem
    with pytest.raises(OperatorPreconditionError, match="boundary"):
        add_node(
            gsm8k.with_changes(domain="code"),
            ("PROBLEM", "C"),
            Node("T1", "TestOp"),
        )


def test_add_then_delete_is_identity(math_graph):
    inserted = add_node(
        math_graph, ("ENSEMBLE", "REFINE"), Node("MID", "CustomOp", {"role": "refine_solution"})
    ).graphs[0]
    restored = delete_node(inserted, "MID").graphs[0]
    assert restored == math_graph


# -- rewiring ------------------------------------------------------------------


def test_rewire_ensemble_input_away(gsm8k):
    # moving one of six ensemble inputs keeps fan-in at five
    outcome = rewire_edge(gsm8k, ("P5", "ENSEMBLE"), "P6", "to_third")
    product = outcome.graphs[0]
    assert product.in_degree("ENSEMBLE") == 5
    assert product.has_edge("P5", "P6")
    assert outcome.verdicts[0].q == 1


def test_rewire_only_exit_edge_rejected():
    graph = build_graph(
        [
            Node("PROBLEM", "Interface"),
            Node("A", "CustomOp", {"role": "x"}),
            Node("B", "CustomOp", {"role": "y"}),
            Node("RETURN", "Interface"),
        ],
        [
            Edge("PROBLEM", "A", "input"),
            Edge("PROBLEM", "B", "input"),
            Edge("B", "A"),
            Edge("A", "RETURN"),
        ],
    )
    with pytest.raises(RewriteRejectedError) as exc_info:
        rewire_edge(graph, ("A", "RETURN"), "B", "to_third")
    rules = {d.rule for d in exc_info.value.diagnostics if d.is_error}
    assert rules & {"W1", "W2"}


def test_rewire_self_loop_blocked(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="self-loop"):
        rewire_edge(gsm8k, ("P5", "ENSEMBLE"), "P5", "to_third")


def test_rewire_type_mismatch(gsm8k):
    # PROBLEM cannot feed the ensemble's solution port
    with pytest.raises((OperatorPreconditionError, RewriteRejectedError)):
        rewire_edge(gsm8k, ("C", "ENSEMBLE"), "PROBLEM", "from_third")


# -- deletion ------------------------------------------------------------------


def test_delete_refine_restores_bridge(math_graph):
    outcome = delete_node(math_graph, "REFINE")
    product = outcome.graphs[0]
    assert product.has_edge("ENSEMBLE", "RETURN")
    assert "REFINE" not in product.node_ids()
    assert len(product.nodes) == len(math_graph.nodes) - 1
    assert len(product.edges) == len(math_graph.edges) - 1


def test_delete_ensemble_not_linear(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="not linear"):
        delete_node(gsm8k, "ENSEMBLE")


def test_delete_interface_forbidden(gsm8k):
    with pytest.raises(OperatorPreconditionError, match="Interface"):
        delete_node(gsm8k, "PROBLEM")


def test_delete_then_add_is_identity(math_graph):
    bridged = delete_node(math_graph, "REFINE").graphs[0]
    refine = math_graph.node("REFINE")
    restored = add_node(
        bridged,
        ("ENSEMBLE", "RETURN"),
        Node(refine.id, refine.kind, dict(refine.attributes), refine.display_label),
    ).graphs[0]
    assert restored == math_graph


# -- subgraph mutation ------------------------------------------------------------


def test_mutate_single_branch_to_chain(gsm8k):
    fragment = Fragment(
        nodes=(
            Node("S1", "CustomOp", {"role": "simple_solver_1"}, "Custom"),
            Node("S2", "CustomOp", {"role": "simple_solver_1"}, "Custom"),
        ),
        edges=(Edge("S1", "S2"),),
        inputs=("S1",),
        outputs=("S2",),
        label="chain",
    )
    outcome = mutate_subgraph(gsm8k, {"C"}, fragment)
    product = outcome.graphs[0]
    assert len(product.nodes) == 11
    assert product.has_edge("PROBLEM", "S1")
    assert product.has_edge("S2", "ENSEMBLE")
    assert validate(product).q == 1


def test_mutate_identity(gsm8k):
    node = gsm8k.node("C")
    fragment = Fragment(
        nodes=(Node(node.id, node.kind, dict(node.attributes), node.display_label),),
        inputs=("C",),
        outputs=("C",),
    )
    outcome = mutate_subgraph(gsm8k, {"C"}, fragment)
    assert outcome.graphs[0] == gsm8k


def test_mutate_boundary_mismatch(gsm8k):
    # an ensemble output port needs solutions; an Interface-less fragment
    # whose output node feeds nothing acceptable must be refused
    fragment = Fragment(
        nodes=(Node("T1", "TestOp"),),
        inputs=("T1",),
        outputs=("T1",),
    )
    with pytest.raises((OperatorPreconditionError, RewriteRejectedError)):
        mutate_subgraph(gsm8k.with_changes(domain="code"), {"P1"}, fragment)


def test_mutate_widening_branch(gsm8k):
    fragment = Fragment(
        nodes=(
            Node("S1", "CustomOp", {"role": "simple_solver_1"}, "Custom"),
            Node("S2", "CustomOp", {"role": "simple_solver_1"}, "Custom"),
        ),
        inputs=("S1", "S2"),
        outputs=("S1", "S2"),
        label="parallel",
    )
    product = mutate_subgraph(gsm8k, {"C"}, fragment).graphs[0]
    assert product.in_degree("ENSEMBLE") == 7  # widened by one branch
    assert validate(product).q == 1


def test_mutate_region_must_be_connected(gsm8k):
    fragment = Fragment(
        nodes=(Node("S1", "CustomOp", {"role": "simple_solver_1"}),),
        inputs=("S1",),
        outputs=("S1",),
    )
    with pytest.raises(OperatorPreconditionError, match="not connected"):
        mutate_subgraph(gsm8k, {"P1", "P2"}, fragment)


def test_mutate_region_never_contains_interface(gsm8k):
    fragment = Fragment(
        nodes=(Node("S1", "CustomOp", {"role": "simple_solver_1"}),),
        inputs=("S1",),
        outputs=("S1",),
    )
    with pytest.raises(OperatorPreconditionError, match="Interface"):
        mutate_subgraph(gsm8k, {"PROBLEM"}, fragment)


# -- crossover -----------------------------------------------------------------


def test_crossover_exchanges_tails(gsm8k, math_graph):
    outcome = crossover(math_graph, gsm8k)
    math_child, gsm8k_child = outcome.graphs
    # the math child inherits the P6 tail; the gsm8k child the REFINE tail
    assert "P6" in math_child.node_ids() and "REFINE" not in math_child.node_ids()
    assert "REFINE" in gsm8k_child.node_ids() and "P6" not in gsm8k_child.node_ids()
    assert validate(math_child).q == 1 and validate(gsm8k_child).q == 1


def test_self_crossover_identity(gsm8k):
    outcome = crossover(gsm8k, gsm8k)
    assert outcome.graphs[0] == gsm8k
    assert outcome.graphs[1] == gsm8k


def test_crossover_no_common_point():
    with pytest.raises(OperatorPreconditionError, match="no crossover point"):
        crossover(two_node_minimal(), two_node_minimal())


def test_crossover_domain_mismatch(gsm8k, humaneval):
    with pytest.raises(OperatorPreconditionError, match="domain"):
        crossover(gsm8k, humaneval)


def test_crossover_requires_valid_parents(gsm8k):
    broken = gsm8k.with_changes(edges=tuple(e for e in gsm8k.edges if e.source != "P6"))
    with pytest.raises(OperatorPreconditionError, match="does not validate"):
        crossover(broken, gsm8k)


def test_crossover_prompts_follow_migrated_nodes(gsm8k, math_graph):
    outcome = crossover(gsm8k, math_graph)
    gsm8k_child = outcome.graphs[0]
    # REFINE migrated in; its role prompt must resolve in the child's table
    assert "refine_solution" in gsm8k_child.prompts


# -- randomized application ---------------------------------------------------------


def test_apply_random_deterministic(gsm8k, math_graph):
    first = apply_random((gsm8k, math_graph), np.random.default_rng(42))
    second = apply_random((gsm8k, math_graph), np.random.default_rng(42))
    assert first is not None and second is not None
    assert first.applied == second.applied
    assert first.description == second.description
    assert [g.structural_signature() for g in first.graphs] == [
        g.structural_signature() for g in second.graphs
    ]


def test_apply_random_deletion_only_no_site():
    outcome = apply_random(
        two_node_minimal(), np.random.default_rng(1), {OperatorKind.DELETION: 1.0}
    )
    assert outcome is None


def test_apply_random_substitution_always_applies(corpus_graphs):
    for graph in corpus_graphs.values():
        outcome = apply_random(
            graph, np.random.default_rng(7), {OperatorKind.SUBSTITUTION: 1.0}
        )
        assert outcome is not None
        assert outcome.applied is OperatorKind.SUBSTITUTION


def test_apply_random_inputs_untouched(gsm8k):
    before = gsm8k.structural_signature()
    for seed in range(10):
        apply_random(gsm8k, np.random.default_rng(seed))
    assert gsm8k.structural_signature() == before


def test_default_weights_shape():
    weights = default_operator_weights()
    assert weights[OperatorKind.CROSSOVER] == pytest.approx(0.10)
    assert sum(weights.values()) == pytest.approx(1.0)
    others = {k: v for k, v in weights.items() if k is not OperatorKind.CROSSOVER}
    assert all(v == pytest.approx(0.18) for v in others.values())


def test_modification_record_wrapper(gsm8k):
    outcome = substitute_node(gsm8k, "C", {"role": "simple_solver_2"})
    record = outcome.modification_record()
    assert record.startswith("<modification>") and record.endswith("</modification>")


def test_apply_random_seed42_golden(gsm8k, math_graph):
    # frozen after the first derivation: seed 42 with default weights picks
    # a subgraph mutation replacing P5 with an ensemble motif
    import hashlib

    from flowevo import serialize_workflow

    outcome = apply_random(
        (gsm8k, math_graph), np.random.default_rng(42), default_operator_weights(0.10)
    )
    assert outcome.applied is OperatorKind.SUBGRAPH_MUTATION
    assert outcome.description == "mutate subgraph {P5} -> ensemble-4 (5 nodes)"
    child = outcome.graphs[0]
    assert (len(child.nodes), len(child.edges)) == (14, 21)
    digest = hashlib.sha256(serialize_workflow(child).encode()).hexdigest()
    assert digest == "69d3b31967fbdf467af211fdc64cfa7e6a1ddf6dbd67363b04d6576766cbf326"


def test_crossover_renames_only_on_collision():
    from flowevo import build_graph

    def ensemble_graph(branch_ids, tail_id):
        nodes = [Node("PROBLEM", "Interface")]
        edges = []
        for bid in branch_ids:
            nodes.append(Node(bid, "CustomOp", {"role": "solution_generator"}))
            edges.append(Edge("PROBLEM", bid, "input"))
            edges.append(Edge(bid, "E"))
        nodes.append(Node("E", "ScEnsembleOp"))
        nodes.append(Node(tail_id, "CustomOp", {"role": "refine_solution"}))
        nodes.append(Node("RETURN", "Interface"))
        edges.append(Edge("E", tail_id))
        edges.append(Edge(tail_id, "RETURN"))
        from flowevo import PromptTable

        prompts = PromptTable(
            {"solution_generator": "Solve it.", "refine_solution": "Refine it."}
        )
        return build_graph(nodes, edges, prompts=prompts)

    # g_b's tail node reuses an id that sits upstream in g_a, forcing a rename
    g_a = ensemble_graph(("A1", "A2"), "TAIL_A")
    g_b = ensemble_graph(("B1", "B2"), "A1")
    outcome = crossover(g_a, g_b)
    child_a, child_b = outcome.graphs
    assert "A1_x2" in child_a.node_ids()  # donor tail renamed away from upstream A1
    assert "A1" in child_a.node_ids()  # the original branch node survives
    assert "TAIL_A" in child_b.node_ids()  # no collision in the other child
    assert validate(child_a).q == 1 and validate(child_b).q == 1


def test_donor_fragments_lift_partner_subgraphs(gsm8k, math_graph):
    from flowevo.operators import donor_fragments

    rng = np.random.default_rng(3)
    fragments = donor_fragments(math_graph, rng)
    labels = {f.label for f in fragments}
    assert any(l.startswith("donor-node-") for l in labels)
    assert "donor-branches-ENSEMBLE" in labels
    branch_frag = next(f for f in fragments if f.label == "donor-branches-ENSEMBLE")
    assert len(branch_frag.nodes) == 6  # the MATH ensemble's feeders
    # lifted roles carry their prompt texts
    assert "alternative_solver" in branch_frag.prompts

    # the fragment can replace gsm8k's Custom branch and still validate
    outcome = mutate_subgraph(gsm8k, {"C"}, branch_frag)
    product = outcome.graphs[0]
    assert validate(product).q == 1
    assert product.in_degree("ENSEMBLE") == 11  # 5 programmers + 6 lifted branches


def test_donor_fragments_dedupe_parallel_branch_edges(gsm8k):
    from flowevo.operators import donor_fragments

    # a second, differently-labeled edge from C into the ensemble is valid
    # and must not duplicate C inside the lifted branch fragment
    doubled = gsm8k.with_changes(edges=gsm8k.edges + (Edge("C", "ENSEMBLE", "solution"),))
    assert validate(doubled).q == 1
    fragments = donor_fragments(doubled, np.random.default_rng(0))
    branch = next(f for f in fragments if f.label == "donor-branches-ENSEMBLE")
    ids = [n.id for n in branch.nodes]
    assert len(ids) == len(set(ids))


def test_mutate_rejects_duplicate_fragment_ids(gsm8k):
    fragment = Fragment(
        nodes=(
            Node("S1", "CustomOp", {"role": "simple_solver_1"}),
            Node("S1", "CustomOp", {"role": "simple_solver_1"}),
        ),
        inputs=("S1",),
        outputs=("S1",),
    )
    with pytest.raises(OperatorPreconditionError, match="duplicate node ids"):
        mutate_subgraph(gsm8k, {"C"}, fragment)
