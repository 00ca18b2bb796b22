"""Subprocess adapters for external proposer/judge/evaluator processes.

Protocol: the adapter starts the external command once and exchanges one
JSON object per call over its standard streams, newline-delimited. Request
objects carry a ``kind`` field (``propose`` / ``judge`` / ``evaluate``);
each response is a single JSON object on one line. Adapters declare
``concurrent_safe = False``, so the engine never calls them in parallel.
"""

from __future__ import annotations

import json
import subprocess

from .engine import JudgeScore, Proposal, ProposalRequest


class AdapterError(Exception):
    pass


class _JsonLineProcess:
    def __init__(self, command):
        self.command = list(command)
        self._process = None

    def _ensure(self):
        if self._process is None or self._process.poll() is not None:
            self._process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._process

    def call(self, request: dict) -> dict:
        process = self._ensure()
        try:
            process.stdin.write(json.dumps(request, ensure_ascii=False) + "\n")
            process.stdin.flush()
            line = process.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(f"adapter {self.command[0]!r} pipe failure: {exc}") from exc
        if not line:
            raise AdapterError(f"adapter {self.command[0]!r} closed its stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"adapter returned invalid JSON: {line[:200]!r}") from exc

    def close(self):
        if self._process is not None and self._process.poll() is None:
            self._process.stdin.close()
            self._process.wait(timeout=5)
        self._process = None


class SubprocessProposer:
    """External proposer: receives parents plus previous-attempt errors."""

    concurrent_safe = False

    def __init__(self, command):
        self._process = _JsonLineProcess(command)

    def propose(self, request: ProposalRequest, rng) -> Proposal:
        payload = {
            "kind": "propose",
            "domain": request.domain,
            "seed": int(rng.integers(2**31 - 1)),
            "parents": [
                {"source": p.source, "score": p.score, "modification": p.modification}
                for p in request.parents
            ],
            "prev_attempt": None
            if request.prev_attempt is None
            else {
                "text": request.prev_attempt.text,
                "errors": [d.render() for d in request.prev_attempt.errors],
            },
        }
        response = self._process.call(payload)
        if "text" not in response:
            raise AdapterError("proposer response lacks 'text'")
        return Proposal(response["text"], response.get("modification", ""))

    def close(self):
        self._process.close()


class SubprocessJudge:
    """External judge: returns the five rubric dimensions per candidate."""

    concurrent_safe = False

    def __init__(self, command):
        self._process = _JsonLineProcess(command)

    def score_candidates(self, candidates, parents, history) -> list[JudgeScore]:
        payload = {
            "kind": "judge",
            "candidates": [
                {"source": c.text, "modification": c.modification} for c in candidates
            ],
            "parents": [
                {"source": p.source, "score": p.score} for p in parents
            ],
            "history": [
                {"round": h.round, "score": h.score} for h in history
            ],
        }
        response = self._process.call(payload)
        scores = response.get("scores")
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise AdapterError("judge response must score every candidate")
        return [JudgeScore({k: int(v) for k, v in dims.items()}) for dims in scores]

    def close(self):
        self._process.close()


class SubprocessEvaluator:
    """External evaluator: maps a workflow source to a score in [0, 1]."""

    concurrent_safe = False

    def __init__(self, command):
        self._process = _JsonLineProcess(command)

    def evaluate(self, graph) -> float:
        from .mermaid import serialize_workflow

        response = self._process.call({"kind": "evaluate", "source": serialize_workflow(graph)})
        score = response.get("score")
        if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
            raise AdapterError(f"evaluator score out of range: {score!r}")
        return float(score)

    def close(self):
        self._process.close()
