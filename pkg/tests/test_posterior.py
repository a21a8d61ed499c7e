# tests/test_posterior.py
# Thiqa - Forward-backward tests against brute-force path enumeration

import math

import numpy as np
import pytest
from scipy.special import logsumexp

from lattice.core import Arc, Node, build_lattice
from lattice.errors import ContractError, NonFiniteScoreError
from lattice.posterior import forward_backward, node_priors

from conftest import lattice_paths, random_lattice


def _brute_posteriors(lattice, scale):
    paths = lattice_paths(lattice)
    scores = [sum(scale * a.acoustic_logp + a.trans_logp for a in p) for p in paths]
    total = logsumexp(scores)
    posts = {}
    for arc in lattice.arcs:
        through = [s for s, p in zip(scores, paths) if arc in p]
        posts[arc.id] = logsumexp(through) - total
    return posts


@pytest.mark.parametrize("scale", [1.0 / 12.0, 0.5, 1.0])
def test_sit_matches_enumeration(sit_lattice, scale):
    annotated = forward_backward(sit_lattice, scale)
    expected = _brute_posteriors(sit_lattice, scale)
    for arc_id, value in expected.items():
        assert annotated.arc_log_posterior[arc_id] == pytest.approx(value, abs=1e-9)


def test_posteriors_per_time_cut_sum_to_one(sit_annotated):
    lattice = sit_annotated.lattice
    times = lattice.node_times
    # every path crosses frame 20 exactly once
    crossing = [
        a.id for a in lattice.arcs if times[a.start_node] <= 20 < times[a.end_node]
    ]
    mass = sum(math.exp(sit_annotated.arc_log_posterior[i]) for i in crossing)
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_posteriors_never_exceed_one(sit_annotated):
    assert all(v <= 0.0 for v in sit_annotated.arc_log_posterior.values())


def test_long_chain_does_not_underflow():
    n = 400
    nodes = [Node(i, 10 * i) for i in range(n + 1)]
    arcs = []
    for i in range(n):
        arcs.append(Arc(2 * i, i, i + 1, "a", -900.0, -0.1))
        arcs.append(Arc(2 * i + 1, i, i + 1, "b", -912.0, -0.1))
    annotated = forward_backward(build_lattice("long", nodes, arcs), acoustic_scale=1.0)
    post_a = annotated.arc_log_posterior[0]
    assert np.isfinite(post_a)
    assert post_a == pytest.approx(-np.log1p(np.exp(-12.0)), abs=1e-9)


def test_node_priors_on_sit_there(sit_lattice):
    priors = node_priors(sit_lattice)
    assert priors[0] == 0.0
    assert priors[1] == pytest.approx(-0.916291)
    assert priors[3] == pytest.approx(-0.916291 - 0.105361)
    assert priors[7] == pytest.approx(
        logsumexp([-0.916291 - 0.105361 - 0.510826, -1.386294 - 0.356675])
    )


def test_non_finite_score_rejected():
    nodes = [Node(0, 0), Node(1, 10)]
    lattice = build_lattice("u", nodes, [Arc(0, 0, 1, "a", float("-inf"), -0.1)])
    with pytest.raises(NonFiniteScoreError):
        forward_backward(lattice)


def test_scale_must_be_positive(sit_lattice):
    with pytest.raises(ContractError):
        forward_backward(sit_lattice, acoustic_scale=0.0)


def _two_arcs(trans, acoustic=(-5.0, -5.0)):
    nodes = [Node(0, 0), Node(1, 10)]
    arcs = [
        Arc(0, 0, 1, "a", acoustic[0], math.log(trans[0])),
        Arc(1, 0, 1, "b", acoustic[1], math.log(trans[1])),
    ]
    return build_lattice("u", nodes, arcs)


def test_parallel_arcs_split_by_transition():
    annotated = forward_backward(_two_arcs((0.7, 0.3)))
    assert math.exp(annotated.arc_log_posterior[0]) == pytest.approx(0.7, abs=1e-12)
    assert math.exp(annotated.arc_log_posterior[1]) == pytest.approx(0.3, abs=1e-12)


def test_chain_prior_multiplies():
    nodes = [Node(0, 0), Node(1, 10), Node(2, 20)]
    arcs = [Arc(0, 0, 1, "a", -1.0, math.log(0.5)), Arc(1, 1, 2, "b", -1.0, math.log(0.5))]
    priors = node_priors(build_lattice("u", nodes, arcs))
    assert math.exp(priors[2]) == pytest.approx(0.25, abs=1e-12)


def test_diamond_prior_sums_branches():
    nodes = [Node(0, 0), Node(1, 10), Node(2, 12), Node(3, 20)]
    arcs = [
        Arc(0, 0, 1, "a", -1.0, math.log(0.6)),
        Arc(1, 0, 2, "b", -1.0, math.log(0.4)),
        Arc(2, 1, 3, "c", -1.0, 0.0),
        Arc(3, 2, 3, "d", -1.0, 0.0),
    ]
    priors = node_priors(build_lattice("u", nodes, arcs))
    assert math.exp(priors[3]) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("chunk", range(5))
def test_random_lattices_match_enumeration(chunk):
    for seed in range(100 * chunk, 100 * (chunk + 1)):
        lattice = random_lattice(seed)
        annotated = forward_backward(lattice, 0.5)
        for arc_id, value in _brute_posteriors(lattice, 0.5).items():
            assert annotated.arc_log_posterior[arc_id] == pytest.approx(value, abs=1e-9), seed


@pytest.mark.parametrize("chunk", range(5))
def test_random_lattice_cuts_sum_to_one(chunk):
    for seed in range(100 * chunk, 100 * (chunk + 1)):
        annotated = forward_backward(random_lattice(seed))
        lattice = annotated.lattice
        times = lattice.node_times
        for t in sorted(set(times.values()))[:-1]:
            crossing = [a.id for a in lattice.arcs if times[a.start_node] <= t < times[a.end_node]]
            mass = math.exp(logsumexp([annotated.arc_log_posterior[i] for i in crossing]))
            assert mass == pytest.approx(1.0, abs=1e-9), (seed, t)


@pytest.mark.parametrize("k", [0.5, 1.0 / 12.0, 3.0])
def test_acoustic_scale_moves_into_scores(k):
    for seed in range(20):
        lattice = random_lattice(seed)
        scaled = build_lattice(
            lattice.utterance_id,
            lattice.nodes,
            [
                Arc(a.id, a.start_node, a.end_node, a.word, a.acoustic_logp * k, a.trans_logp)
                for a in lattice.arcs
            ],
        )
        expected = forward_backward(lattice, k).arc_log_posterior
        got = forward_backward(scaled, 1.0).arc_log_posterior
        for arc_id, value in expected.items():
            assert got[arc_id] == pytest.approx(value, abs=1e-12)
