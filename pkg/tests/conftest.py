# tests/conftest.py
# Thiqa - Shared test fixtures

import sys
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pytest

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from lattice.config import SILENCE_WORD
from lattice.core import Arc, Lattice, Node, build_lattice, parse_lattice
from lattice.hwcn import Hwcn, build_hwcn, label_arcs
from lattice.posterior import forward_backward
from lattice.simgen import RecognizerProfile, SimConfig

FIXTURES = Path(__file__).parent / "fixtures"
SIT_REFERENCE = ["I", "will", "sit", "there"]


@pytest.fixture
def sit_text() -> str:
    return (FIXTURES / "sit_there.lat").read_text(encoding="utf-8")


@pytest.fixture
def sit_lattice(sit_text):
    return parse_lattice(sit_text)


@pytest.fixture
def sit_annotated(sit_lattice):
    return forward_backward(sit_lattice)


@pytest.fixture
def sit_hwcn(sit_annotated) -> Hwcn:
    return build_hwcn(sit_annotated, tolerance_frames=10)


@pytest.fixture
def sit_labeled(sit_hwcn) -> Hwcn:
    return label_arcs(sit_hwcn, SIT_REFERENCE)


def sixteenths(h: Hwcn, seed: int) -> Hwcn:
    """Random confidences on a 1/16 grid, so float sums compare exactly."""
    rng = np.random.default_rng(seed)
    return h.with_confidences({a.id: int(rng.integers(0, 17)) / 16.0 for a in h.arcs})


RANDOM_VOCABULARY = ["a", "b", "c", "d"]


def random_lattice(seed: int, max_nodes: int = 12, silence: bool = True) -> Lattice:
    """
    Small random DAG with one source (node 0) and one sink (the last node).

    Every node after the source gets an incoming arc from an earlier node and
    every node before the sink an outgoing arc to a later one; up to two extra
    arcs follow. Scores are rounded to six decimals so the text format keeps
    them exactly.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_nodes + 1))
    times = np.cumsum(rng.integers(1, 9, size=n)) - 1
    nodes = [Node(i, int(t)) for i, t in enumerate(times)]
    words = RANDOM_VOCABULARY + ([SILENCE_WORD] if silence else [])

    pairs: List[Tuple[int, int]] = []
    for j in range(1, n):
        pairs.append((int(rng.integers(0, j)), j))
    for i in range(n - 1):
        pairs.append((i, int(rng.integers(i + 1, n))))
    for _ in range(int(rng.integers(0, 3))):
        i = int(rng.integers(0, n - 1))
        pairs.append((i, int(rng.integers(i + 1, n))))

    arcs = [
        Arc(
            k, i, j, words[int(rng.integers(0, len(words)))],
            round(float(rng.uniform(-30.0, -1.0)), 6),
            round(float(np.log(rng.uniform(0.05, 1.0))), 6),
        )
        for k, (i, j) in enumerate(pairs)
    ]
    return build_lattice(f"rand{seed}", nodes, arcs)


def random_hwcn(seed: int, tolerance_frames: int = 3, silence: bool = True) -> Hwcn:
    """HWCN of `random_lattice(seed)` with confidences on the 1/16 grid."""
    h = build_hwcn(forward_backward(random_lattice(seed, silence=silence)), tolerance_frames)
    return sixteenths(h, seed)


def lattice_paths(lattice) -> List[Tuple[Arc, ...]]:
    """Every source-to-sink path as a tuple of arcs."""
    out = []
    stack = [(lattice.source_node_id, ())]
    while stack:
        node, path = stack.pop()
        if node == lattice.sink_node_id:
            out.append(path)
            continue
        for arc in lattice.outgoing[node]:
            stack.append((arc.end_node, path + (arc,)))
    return out


def tiny_config(seed: int = 3, utterances: int = 30, profiles: List[RecognizerProfile] = None) -> SimConfig:
    if profiles is None:
        profiles = [
            RecognizerProfile("good", 0.10, 0.03, 0.03, 3, 2, 2.5, 0.4),
            RecognizerProfile("poor", 0.25, 0.05, 0.05, 4, 3, 1.5, 0.6),
        ]
    return SimConfig(
        seed=seed,
        vocabulary_size=40,
        utterance_count=utterances,
        min_words=2,
        max_words=5,
        profiles=profiles,
    )


def noise_free_profile(name: str = "clean") -> RecognizerProfile:
    return RecognizerProfile(name, 0.0, 0.0, 0.0, 3, 0, 2.0, 0.5)


@pytest.fixture
def tiny_corpus():
    from lattice.simgen import generate_corpus

    return generate_corpus(tiny_config())


@pytest.fixture
def tiny_hwcns(tiny_corpus) -> Dict[str, Dict[str, Hwcn]]:
    """Labeled HWCNs per recognizer."""
    from evaluation.stages import build_hwcns

    return {
        rec.profile.name: build_hwcns(rec.lattices, tiny_corpus.references)
        for rec in tiny_corpus.recognizers
    }
