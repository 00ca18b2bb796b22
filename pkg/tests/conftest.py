from __future__ import annotations

from pathlib import Path

import pytest

from flowevo import lower_to_graph, parse_workflow

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"

CORPUS_NAMES = (
    "gsm8k_round16",
    "math_round16",
    "humaneval_round5",
    "mbpp_round8",
)


def corpus_path(name: str) -> Path:
    return CORPUS_DIR / f"{name}.mmd"


def load_corpus_graph(name: str):
    doc = parse_workflow(corpus_path(name).read_text(encoding="utf-8"))
    graph, lowering = lower_to_graph(doc)
    assert not lowering, f"lowering diagnostics on corpus {name}: {lowering}"
    return graph


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def gsm8k():
    return load_corpus_graph("gsm8k_round16")


@pytest.fixture(scope="session")
def math_graph():
    return load_corpus_graph("math_round16")


@pytest.fixture(scope="session")
def humaneval():
    return load_corpus_graph("humaneval_round5")


@pytest.fixture(scope="session")
def mbpp():
    return load_corpus_graph("mbpp_round8")


@pytest.fixture(scope="session")
def seed_minimal():
    return load_corpus_graph("seed_math_minimal")


@pytest.fixture(scope="session")
def corpus_graphs(gsm8k, math_graph, humaneval, mbpp):
    return {
        "gsm8k_round16": gsm8k,
        "math_round16": math_graph,
        "humaneval_round5": humaneval,
        "mbpp_round8": mbpp,
    }
