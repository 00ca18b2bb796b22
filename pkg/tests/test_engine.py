from __future__ import annotations

import math

import numpy as np
import pytest

from flowevo import serialize_workflow, validate
from flowevo.engine import (
    Candidate,
    EvolutionConfig,
    EvolutionError,
    HistoryEntry,
    JudgeScore,
    OperatorProposer,
    Proposal,
    StructuralJudge,
    SyntheticTaskEvaluator,
    generate_candidates,
    graph_features,
    history_to_jsonl,
    judge_select,
    load_history,
    optimize_workflow,
    run_evolution,
    save_history,
)
from flowevo.sampling import mixed_probabilities


def entry_for(graph, score=0.5):
    return HistoryEntry(workflow=graph, source=serialize_workflow(graph), score=score, round=0)


class FaultInjectingProposer:
    """Emits broken sources for the first ``failures`` tries, then a valid one."""

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0
        self.seen_prev_attempts = []

    def propose(self, request, rng):
        self.calls += 1
        self.seen_prev_attempts.append(request.prev_attempt)
        if self.calls <= self.failures:
            return Proposal("flowchart TD\nbroken [[\n", f"<modification>try {self.calls}</modification>")
        return Proposal(request.parents[0].source, "<modification>parent verbatim</modification>")


def checker_for(cfg):
    return lambda text: validate(text, domain=cfg.domain)


def test_optimize_succeeds_on_third_try(gsm8k):
    cfg = EvolutionConfig(num_tries=3)
    proposer = FaultInjectingProposer(failures=2)
    result = optimize_workflow([entry_for(gsm8k)], cfg, proposer, checker_for(cfg), np.random.default_rng(0))
    assert result.ok
    assert len(result.attempts) == 3
    assert [a[1].q for a in result.attempts] == [0, 0, 1]
    # the failed attempts' diagnostics are fed back to the proposer
    assert proposer.seen_prev_attempts[0] is None
    assert proposer.seen_prev_attempts[1] is not None
    assert proposer.seen_prev_attempts[1].errors


def test_optimize_exhaustion(gsm8k):
    cfg = EvolutionConfig(num_tries=2)
    result = optimize_workflow(
        [entry_for(gsm8k)], cfg, FaultInjectingProposer(failures=5), checker_for(cfg), np.random.default_rng(0)
    )
    assert not result.ok
    assert len(result.attempts) == 2
    assert all(a[1].q == 0 for a in result.attempts)


def test_operator_proposer_valid_by_construction(gsm8k, math_graph):
    cfg = EvolutionConfig()
    proposer = OperatorProposer(cfg.weights(), cfg.site_budget)
    result = optimize_workflow(
        [entry_for(gsm8k), entry_for(math_graph)], cfg, proposer, checker_for(cfg), np.random.default_rng(1)
    )
    assert result.ok and len(result.attempts) == 1


def test_generate_candidates_distinct(gsm8k, math_graph):
    cfg = EvolutionConfig(candidate_pool=4)
    proposer = OperatorProposer(cfg.weights(), cfg.site_budget)
    candidates = generate_candidates(
        [entry_for(gsm8k), entry_for(math_graph)],
        cfg,
        proposer,
        checker_for(cfg),
        np.random.SeedSequence(7),
    )
    assert len(candidates) == 4
    assert all(validate(c.graph).q == 1 for c in candidates)
    texts = [c.text for c in candidates]
    assert len(set(texts)) == len(texts)


def test_generate_candidates_single_slot(gsm8k):
    cfg = EvolutionConfig(candidate_pool=1)
    proposer = OperatorProposer(cfg.weights(), cfg.site_budget)
    candidates = generate_candidates(
        [entry_for(gsm8k)], cfg, proposer, checker_for(cfg), np.random.SeedSequence(3)
    )
    assert len(candidates) == 1


def test_generate_candidates_all_faulty(gsm8k):
    cfg = EvolutionConfig(candidate_pool=3, num_tries=2)
    candidates = generate_candidates(
        [entry_for(gsm8k)], cfg, FaultInjectingProposer(failures=10**9), checker_for(cfg), np.random.SeedSequence(0)
    )
    assert candidates == []


def test_judge_single_candidate(gsm8k):
    candidate = Candidate(gsm8k, serialize_workflow(gsm8k), "<modification>x</modification>")
    best, scores = judge_select([candidate], [entry_for(gsm8k)], [], StructuralJudge())
    assert best == 0
    assert 5 <= scores[0].total <= 50


def test_judge_fuller_ensemble_wins(gsm8k):
    # drop P5's ensemble feed and P5 itself to stay valid
    trimmed_edges = tuple(e for e in gsm8k.edges if "P5" not in (e.source, e.target))
    trimmed_nodes = tuple(n for n in gsm8k.nodes if n.id != "P5")
    near = gsm8k.with_changes(nodes=trimmed_nodes, edges=trimmed_edges)
    # reduce further to exactly the minimum fan-in of 2
    for victim in ("P2", "P3", "P4"):
        near = near.with_changes(
            nodes=tuple(n for n in near.nodes if n.id != victim),
            edges=tuple(e for e in near.edges if victim not in (e.source, e.target)),
        )
    assert validate(near).q == 1

    judge = StructuralJudge()
    parents = [entry_for(gsm8k)]
    full_candidate = Candidate(gsm8k, serialize_workflow(gsm8k), "<modification>full</modification>")
    near_candidate = Candidate(near, serialize_workflow(near), "<modification>near</modification>")
    scores = judge.score_candidates([full_candidate, near_candidate], parents, [])
    assert (
        scores[0].dims["workflow_coherence"] > scores[1].dims["workflow_coherence"]
    )


def test_judge_tie_breaks_to_first(gsm8k):
    candidate = Candidate(gsm8k, serialize_workflow(gsm8k), "<modification>same</modification>")
    best, _ = judge_select([candidate, candidate], [entry_for(gsm8k)], [], StructuralJudge())
    assert best == 0


def test_judge_score_range_enforced():
    with pytest.raises(ValueError):
        JudgeScore({name: 0 for name in (
            "workflow_coherence", "innovation", "complexity_balance",
            "prompt_quality", "modification_rationale",
        )})


def test_synthetic_evaluator_features(gsm8k, seed_minimal):
    features = graph_features(gsm8k)
    assert features == {
        "has_ensemble": True,
        "branch_count": 6,
        "refine_tail": True,
        "depth": 4,
    }
    minimal = graph_features(seed_minimal)
    assert minimal["has_ensemble"] is False
    assert minimal["depth"] == 2


def test_synthetic_evaluator_scores(gsm8k, seed_minimal):
    evaluator = SyntheticTaskEvaluator("math_ensemble_refine")
    assert 0.0 <= evaluator.evaluate(seed_minimal) <= 1.0
    assert evaluator.evaluate(gsm8k) > evaluator.evaluate(seed_minimal)
    # deterministic
    assert evaluator.evaluate(gsm8k) == evaluator.evaluate(gsm8k)


def test_run_evolution_zero_rounds(seed_minimal):
    cfg = EvolutionConfig(max_rounds=0, seed=1)
    result = run_evolution(
        [seed_minimal], cfg, OperatorProposer(cfg.weights()), StructuralJudge(), SyntheticTaskEvaluator()
    )
    assert len(result.history) == 1
    assert result.history[0].round == 0
    assert result.history[0].modification == "seed"


def test_run_evolution_demo_improves(seed_minimal):
    cfg = EvolutionConfig(max_rounds=20, candidate_pool=4, seed=3)
    result = run_evolution(
        [seed_minimal],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator("math_ensemble_refine"),
    )
    scores = [e.score for e in result.history]
    assert len(result.history) <= 21
    running = []
    best = 0.0
    for s in scores:
        best = max(best, s)
        running.append(best)
    assert running == sorted(running)
    assert max(scores) > scores[0]
    # every inserted entry validates and carries lineage
    for entry in result.history[1:]:
        assert validate(entry.workflow).q == 1
        assert entry.parents
        assert entry.modification


def test_run_evolution_replay_byte_identical(seed_minimal):
    cfg = EvolutionConfig(max_rounds=8, seed=11)
    args = (
        [seed_minimal],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator("math_ensemble_refine"),
    )
    first = run_evolution(*args)
    second = run_evolution(*args)
    assert history_to_jsonl(first.history) == history_to_jsonl(second.history)


def test_run_evolution_rejects_invalid_seed(gsm8k):
    broken = gsm8k.with_changes(edges=tuple(e for e in gsm8k.edges if e.source != "P6"))
    cfg = EvolutionConfig(max_rounds=1)
    with pytest.raises(EvolutionError, match="seed workflow does not validate"):
        run_evolution([broken], cfg, OperatorProposer(), StructuralJudge(), SyntheticTaskEvaluator())


def test_history_round_trip(tmp_path, seed_minimal):
    cfg = EvolutionConfig(max_rounds=4, seed=5)
    result = run_evolution(
        [seed_minimal],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator("math_ensemble_refine"),
    )
    path = tmp_path / "history.jsonl"
    save_history(result.history, path)
    loaded = load_history(path, domain="math")
    assert len(loaded) == len(result.history)
    for original, restored in zip(result.history, loaded):
        assert restored.workflow == original.workflow
        assert restored.score == original.score
        assert restored.parents == original.parents


def test_constant_evaluator_uniform_sampling(gsm8k):
    # with equal scores, the softmax term is uniform, so the mix is uniform
    history = [entry_for(gsm8k, score=0.5) for _ in range(4)]
    probs = mixed_probabilities([e.score for e in history], 0.3, 5.0)
    assert np.allclose(probs, [0.25] * 4, atol=1e-12)
    rng = np.random.default_rng(9)
    draws = rng.choice(4, size=10000, p=probs)
    for i in range(4):
        observed = (draws == i).mean()
        sigma = math.sqrt(0.25 * 0.75 / 10000)
        assert abs(observed - 0.25) < 3 * sigma + 1e-9


def test_config_validation():
    with pytest.raises(ValueError, match="lambda"):
        EvolutionConfig(lambda_=1.5)
    with pytest.raises(ValueError, match="candidate_pool"):
        EvolutionConfig(candidate_pool=0)
    with pytest.raises(ValueError, match="sum to 1"):
        EvolutionConfig(operator_weights={"substitution": 0.5})


def test_history_entry_score_bounds(gsm8k):
    with pytest.raises(ValueError, match="score"):
        HistoryEntry(workflow=gsm8k, source="", score=1.5, round=0)


def test_history_grows_one_per_successful_round(seed_minimal):
    cfg = EvolutionConfig(max_rounds=10, seed=2)
    result = run_evolution(
        [seed_minimal],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator("math_ensemble_refine"),
    )
    ok_rounds = [r for r in result.rounds if r.status == "ok"]
    assert len(result.history) == 1 + len(ok_rounds)
    rounds_seen = [e.round for e in result.history]
    assert rounds_seen == sorted(rounds_seen)


def test_candidate_slots_are_order_independent(gsm8k, math_graph):
    # each candidate slot depends only on its own split rng stream, so
    # evaluating a slot in isolation reproduces the batch result
    cfg = EvolutionConfig(candidate_pool=4)
    proposer = OperatorProposer(cfg.weights(), cfg.site_budget)
    checker = checker_for(cfg)
    parents = [entry_for(gsm8k), entry_for(math_graph)]
    seq = np.random.SeedSequence(21)
    batch = generate_candidates(parents, cfg, proposer, checker, seq)
    streams = np.random.SeedSequence(21).spawn(cfg.candidate_pool * 2)
    for i in (2, 0, 3, 1):
        solo = optimize_workflow(parents, cfg, proposer, checker, np.random.default_rng(streams[i]))
        assert solo.ok
        if batch[i].text != solo.text:
            # slot was resampled by the duplicate rule; recompute that path
            retry = optimize_workflow(
                parents, cfg, proposer, checker, np.random.default_rng(streams[cfg.candidate_pool + i])
            )
            assert retry.ok and batch[i].text == retry.text


def test_demo_trajectory_golden(seed_minimal):
    # frozen after the first derivation: the seed-3 demo run's exact score
    # trajectory; any drift means run semantics changed
    cfg = EvolutionConfig(max_rounds=20, candidate_pool=4, seed=3)
    result = run_evolution(
        [seed_minimal],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator("math_ensemble_refine"),
    )
    assert [e.score for e in result.history] == [
        0.175, 0.675, 0.225, 0.325, 0.725, 0.675, 0.775, 0.275, 0.775, 0.725,
        0.725, 0.875, 0.675, 0.725, 0.675, 0.775, 0.575, 0.85, 0.725, 0.45,
        0.275,
    ]


def test_code_domain_evolution(humaneval):
    # the code scenario exercises test/codegen kinds and code-only motifs
    cfg = EvolutionConfig(
        max_rounds=10, candidate_pool=4, seed=5, domain="code", scenario="code_test_tail"
    )
    result = run_evolution(
        [humaneval],
        cfg,
        OperatorProposer(cfg.weights(), cfg.site_budget),
        StructuralJudge(),
        SyntheticTaskEvaluator(cfg.scenario),
    )
    assert len(result.history) == 11
    for entry in result.history:
        assert validate(entry.workflow).q == 1
        assert entry.workflow.domain == "code"
