# tests/test_core.py
# Thiqa - Lattice model, text format and alignment tests

import itertools

import numpy as np
import pytest

from lattice.core import (
    Arc,
    Node,
    align,
    build_lattice,
    edit_distance_table,
    format_references,
    parse_lattice,
    read_references,
    serialize_lattice,
    topological_order,
)
from lattice.errors import LatticeSyntaxError, LatticeValidationError

from conftest import random_lattice


def _simple(arcs, nodes=None):
    nodes = nodes or [Node(0, 0), Node(1, 10), Node(2, 20)]
    return build_lattice("u1", nodes, arcs)


class TestParse:
    def test_sit_shape(self, sit_lattice):
        assert sit_lattice.utterance_id == "sit_there"
        assert sit_lattice.frame_ms == 10
        assert len(sit_lattice.nodes) == 10
        assert len(sit_lattice.arcs) == 13
        assert sit_lattice.source_node_id == 0
        assert sit_lattice.sink_node_id == 9
        assert sit_lattice.arc_by_id[4].pronunciation == "w_ih_l"
        assert sit_lattice.arc_by_id[7].pronunciation is None

    def test_serialize_is_canonical(self, sit_text, sit_lattice):
        assert serialize_lattice(sit_lattice) == sit_text

    def test_arc_order_does_not_matter(self, sit_lattice):
        shuffled = build_lattice(
            "sit_there", reversed(sit_lattice.nodes), reversed(sit_lattice.arcs), frame_ms=10
        )
        assert shuffled == sit_lattice

    def test_crlf_rejected(self, sit_text):
        with pytest.raises(LatticeSyntaxError):
            parse_lattice(sit_text.replace("\n", "\r\n"))

    def test_trailing_content_rejected(self, sit_text):
        with pytest.raises(LatticeSyntaxError):
            parse_lattice(sit_text + "extra\n")

    def test_missing_field_reports_line(self, sit_text):
        broken = sit_text.replace("J 3 S=0 E=6 W=aisle a=-48.000000 ", "J 3 S=0 E=6 W=aisle ")
        with pytest.raises(LatticeSyntaxError) as info:
            parse_lattice(broken)
        assert info.value.line == 16

    def test_unknown_field_rejected(self, sit_text):
        broken = sit_text.replace("p=ay\n", "p=ay x=1\n", 1)
        with pytest.raises(LatticeSyntaxError):
            parse_lattice(broken)

    @pytest.mark.parametrize("header", ["UTT sit_there", "UTT sit_there FRAME_MS ten", "sit_there FRAME_MS 10"])
    def test_bad_header(self, sit_text, header):
        with pytest.raises(LatticeSyntaxError):
            parse_lattice(sit_text.replace("UTT sit_there FRAME_MS 10", header))


class TestValidation:
    def test_two_sources(self):
        nodes = [Node(0, 0), Node(1, 0), Node(2, 10)]
        arcs = [Arc(0, 0, 2, "a", -1.0, -0.1), Arc(1, 1, 2, "b", -1.0, -0.1)]
        with pytest.raises(LatticeValidationError) as info:
            build_lattice("u1", nodes, arcs)
        assert info.value.invariant == "multiple sources"

    def test_zero_duration(self):
        nodes = [Node(0, 0), Node(1, 0)]
        with pytest.raises(LatticeValidationError) as info:
            build_lattice("u1", nodes, [Arc(0, 0, 1, "a", -1.0, -0.1)])
        assert info.value.invariant == "non-positive arc duration"

    def test_positive_transitional_score(self):
        with pytest.raises(LatticeValidationError):
            _simple([Arc(0, 0, 1, "a", -1.0, 0.5), Arc(1, 1, 2, "b", -1.0, -0.1)])

    def test_dangling_node(self):
        with pytest.raises(LatticeValidationError):
            _simple([Arc(0, 0, 1, "a", -1.0, -0.1), Arc(1, 1, 7, "b", -1.0, -0.1)])

    def test_duplicate_arc_id(self):
        with pytest.raises(LatticeValidationError):
            _simple([Arc(0, 0, 1, "a", -1.0, -0.1), Arc(0, 1, 2, "b", -1.0, -0.1)])

    def test_topological_order_follows_time(self, sit_lattice):
        order = topological_order(sit_lattice)
        assert order == [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]


class TestReferences:
    def test_read_and_format(self):
        text = "b\tx y\na\tz\n"
        refs = read_references(text)
        assert refs == {"b": ["x", "y"], "a": ["z"]}
        assert format_references(refs) == "a\tz\nb\tx y\n"

    def test_duplicate_id(self):
        with pytest.raises(LatticeSyntaxError):
            read_references("a\tx\na\ty\n")


def _brute_distance(hyp, ref):
    if not hyp:
        return len(ref)
    if not ref:
        return len(hyp)
    cost = 0 if hyp[-1] == ref[-1] else 1
    return min(
        _brute_distance(hyp[:-1], ref[:-1]) + cost,
        _brute_distance(hyp[:-1], ref) + 1,
        _brute_distance(hyp, ref[:-1]) + 1,
    )


class TestAlign:
    def test_identical(self):
        alignment = align(["a", "b"], ["a", "b"])
        assert [op.kind for op in alignment.ops] == ["match", "match"]
        assert alignment.distance == 0

    def test_substitution_preferred_over_delete_insert(self):
        alignment = align(["a", "x", "c"], ["a", "b", "c"])
        assert [op.kind for op in alignment.ops] == ["match", "substitute", "match"]

    def test_extra_hypothesis_word_is_delete(self):
        alignment = align(["a", "b", "c"], ["a", "c"])
        assert alignment.count("delete") == 1
        assert alignment.count("insert") == 0

    def test_missing_reference_word_is_insert(self):
        alignment = align(["a"], ["a", "b"])
        assert [op.kind for op in alignment.ops] == ["match", "insert"]
        assert alignment.ops[1].ref_index == 1

    def test_empty_sides(self):
        assert align([], ["a", "b"]).count("insert") == 2
        assert align(["a"], []).count("delete") == 1
        assert align([], []).ops == ()

    def test_distance_matches_recursive_oracle(self):
        words = ["a", "b", "c"]
        for n_h, n_r in itertools.product(range(4), range(4)):
            for hyp in itertools.islice(itertools.product(words, repeat=n_h), 9):
                for ref in itertools.islice(itertools.product(words, repeat=n_r), 9):
                    expected = _brute_distance(list(hyp), list(ref))
                    assert edit_distance_table(hyp, ref)[-1, -1] == expected
                    assert align(hyp, ref).distance == expected

    def test_distance_is_symmetric(self):
        rng = np.random.default_rng(17)
        words = ["a", "b", "c", "d"]
        for _ in range(300):
            hyp = [words[i] for i in rng.integers(0, 4, size=int(rng.integers(0, 8)))]
            ref = [words[i] for i in rng.integers(0, 4, size=int(rng.integers(0, 8)))]
            assert align(hyp, ref).distance == align(ref, hyp).distance

    def test_sentence_example(self):
        alignment = align(["I", "will", "sit", "there"], ["I", "will", "sit", "here"])
        assert alignment.count("match") == 3
        assert alignment.count("substitute") == 1
        assert alignment.distance == 1


@pytest.mark.parametrize("chunk", range(4))
def test_random_lattices_survive_the_text_format(chunk):
    for seed in range(250 * chunk, 250 * (chunk + 1)):
        lattice = random_lattice(seed)
        text = serialize_lattice(lattice)
        assert parse_lattice(text) == lattice, seed
        assert serialize_lattice(parse_lattice(text)) == text
