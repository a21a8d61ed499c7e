# lattice/core.py
# Thiqa - Lattice data model, text format, validation and word alignment

import heapq
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lattice.config import FRAME_MS, SILENCE_WORD
from lattice.errors import CycleError, LatticeSyntaxError, LatticeValidationError


@dataclass(frozen=True)
class Node:
    id: int
    time: int  # frames


@dataclass(frozen=True)
class Arc:
    id: int
    start_node: int
    end_node: int
    word: str
    acoustic_logp: float  # log p(X|e)
    trans_logp: float     # log P(e|v), <= 0
    pronunciation: Optional[str] = None

    @property
    def is_silence(self) -> bool:
        return self.word == SILENCE_WORD


@dataclass(frozen=True)
class Lattice:
    """
    Timed word-hypothesis DAG.

    Nodes and arcs are kept sorted by id, so two lattices describing the same
    graph compare equal regardless of the order they were built in.
    """
    utterance_id: str
    frame_ms: int
    nodes: Tuple[Node, ...]
    arcs: Tuple[Arc, ...]
    source_node_id: int
    sink_node_id: int

    @cached_property
    def node_times(self) -> Dict[int, int]:
        return {n.id: n.time for n in self.nodes}

    @cached_property
    def arc_by_id(self) -> Dict[int, Arc]:
        return {a.id: a for a in self.arcs}

    @cached_property
    def incoming(self) -> Dict[int, List[Arc]]:
        table: Dict[int, List[Arc]] = {n.id: [] for n in self.nodes}
        for arc in self.arcs:
            table[arc.end_node].append(arc)
        return table

    @cached_property
    def outgoing(self) -> Dict[int, List[Arc]]:
        table: Dict[int, List[Arc]] = {n.id: [] for n in self.nodes}
        for arc in self.arcs:
            table[arc.start_node].append(arc)
        return table


@dataclass(frozen=True)
class AlignOp:
    kind: str  # match | substitute | delete | insert
    hyp_index: Optional[int]
    ref_index: Optional[int]


@dataclass(frozen=True)
class Alignment:
    """
    Edit script turning the hypothesis into the reference.

    `delete` drops a hypothesis word (a WER insertion); `insert` adds a
    reference word the hypothesis lacks (a WER deletion).
    """
    ops: Tuple[AlignOp, ...] = field(default_factory=tuple)

    @property
    def distance(self) -> int:
        return sum(1 for op in self.ops if op.kind != "match")

    def count(self, kind: str) -> int:
        return sum(1 for op in self.ops if op.kind == kind)


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------

def build_lattice(
    utterance_id: str,
    nodes: Iterable[Node],
    arcs: Iterable[Arc],
    frame_ms: int = FRAME_MS,
) -> Lattice:
    """Validate the graph and return it as a canonical Lattice."""
    nodes = tuple(sorted(nodes, key=lambda n: n.id))
    arcs = tuple(sorted(arcs, key=lambda a: a.id))

    if frame_ms <= 0:
        raise LatticeValidationError("non-positive frame size", f"frame_ms={frame_ms}")
    if not utterance_id or any(c.isspace() for c in utterance_id):
        raise LatticeValidationError("bad utterance id", repr(utterance_id))
    if not nodes:
        raise LatticeValidationError("empty lattice", "no nodes")
    if not arcs:
        raise LatticeValidationError("empty lattice", "no arcs")

    times: Dict[int, int] = {}
    for node in nodes:
        if node.id in times:
            raise LatticeValidationError("duplicate node id", str(node.id))
        if node.time < 0:
            raise LatticeValidationError("negative node time", f"node {node.id} t={node.time}")
        times[node.id] = node.time

    seen_arcs = set()
    has_in = set()
    has_out = set()
    for arc in arcs:
        if arc.id in seen_arcs:
            raise LatticeValidationError("duplicate arc id", str(arc.id))
        seen_arcs.add(arc.id)
        for end in (arc.start_node, arc.end_node):
            if end not in times:
                raise LatticeValidationError(
                    "dangling node reference", f"arc {arc.id} references node {end}"
                )
        if not arc.word or any(c.isspace() for c in arc.word):
            raise LatticeValidationError("bad word token", f"arc {arc.id} word={arc.word!r}")
        if arc.trans_logp > 0:
            raise LatticeValidationError(
                "positive transitional score", f"arc {arc.id} l={arc.trans_logp}"
            )
        if times[arc.end_node] <= times[arc.start_node]:
            raise LatticeValidationError(
                "non-positive arc duration",
                f"arc {arc.id} {times[arc.start_node]}->{times[arc.end_node]}",
            )
        has_out.add(arc.start_node)
        has_in.add(arc.end_node)

    sources = [n.id for n in nodes if n.id not in has_in]
    sinks = [n.id for n in nodes if n.id not in has_out]
    if len(sources) != 1:
        raise LatticeValidationError("multiple sources", f"nodes without incoming arcs: {sources}")
    if len(sinks) != 1:
        raise LatticeValidationError("multiple sinks", f"nodes without outgoing arcs: {sinks}")

    lattice = Lattice(
        utterance_id=utterance_id,
        frame_ms=frame_ms,
        nodes=nodes,
        arcs=arcs,
        source_node_id=sources[0],
        sink_node_id=sinks[0],
    )
    # Positive durations already rule out cycles; this guards hand-built inputs.
    topological_order(lattice)
    return lattice


def topological_order(lattice) -> List[int]:
    """
    Kahn's algorithm with (time, id) ordering among ready nodes.

    Works on anything exposing `nodes` (with id/time) and `arcs` (with
    start_node/end_node), so HWCNs share it.
    """
    indegree = {n.id: 0 for n in lattice.nodes}
    successors: Dict[int, List[int]] = {n.id: [] for n in lattice.nodes}
    for arc in lattice.arcs:
        indegree[arc.end_node] += 1
        successors[arc.start_node].append(arc.end_node)
    time_of = {n.id: n.time for n in lattice.nodes}

    ready = [(time_of[nid], nid) for nid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, nid = heapq.heappop(ready)
        order.append(nid)
        for nxt in successors[nid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, (time_of[nxt], nxt))

    if len(order) != len(indegree):
        stuck = sorted(nid for nid, deg in indegree.items() if deg > 0)
        raise CycleError(f"nodes on a cycle or behind one: {stuck[:10]}")
    return order


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^UTT (\S+) FRAME_MS (\d+)$")
_COUNTS_RE = re.compile(r"^N (\d+) A (\d+)$")
_NODE_RE = re.compile(r"^I (-?\d+) t=(-?\d+)$")


def format_score(value: float) -> str:
    return f"{value:.6f}"


def parse_fields(tokens: Sequence[str], line_no: int) -> Dict[str, str]:
    """Split `key=value` tokens; keys must be unique."""
    fields: Dict[str, str] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key or value == "":
            raise LatticeSyntaxError(f"expected key=value, got {token!r}", line_no)
        if key in fields:
            raise LatticeSyntaxError(f"repeated field {key!r}", line_no)
        fields[key] = value
    return fields


def parse_int(value: str, what: str, line_no: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise LatticeSyntaxError(f"{what} must be an integer, got {value!r}", line_no)


def parse_float(value: str, what: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise LatticeSyntaxError(f"{what} must be a number, got {value!r}", line_no)


def read_header(lines: List[str]) -> Tuple[str, int, int, int]:
    """Parse the UTT and N/A lines shared by lattice and HWCN files."""
    if len(lines) < 2:
        raise LatticeSyntaxError("missing header", len(lines) + 1)
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise LatticeSyntaxError("expected 'UTT <id> FRAME_MS <int>'", 1)
    utterance_id, frame_ms = m.group(1), int(m.group(2))
    m = _COUNTS_RE.match(lines[1])
    if not m:
        raise LatticeSyntaxError("expected 'N <nodes> A <arcs>'", 2)
    return utterance_id, frame_ms, int(m.group(1)), int(m.group(2))


def read_nodes(lines: List[str], start: int, count: int) -> List[Node]:
    nodes = []
    for offset in range(count):
        line_no = start + offset + 1
        if start + offset >= len(lines):
            raise LatticeSyntaxError(f"expected {count} node lines", line_no)
        m = _NODE_RE.match(lines[start + offset])
        if not m:
            raise LatticeSyntaxError("expected 'I <id> t=<frames>'", line_no)
        nodes.append(Node(id=int(m.group(1)), time=int(m.group(2))))
    return nodes


def split_lines(text: str) -> List[str]:
    if "\r" in text:
        raise LatticeSyntaxError("CR line endings are not allowed", text[: text.index("\r")].count("\n") + 1)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def parse_arc_line(line: str, line_no: int) -> Tuple[Arc, Dict[str, str]]:
    """Parse one `J ...` line; returns the arc and any fields beyond the lattice ones."""
    tokens = line.split(" ")
    if len(tokens) < 2 or tokens[0] != "J":
        raise LatticeSyntaxError("expected 'J <id> S= E= W= a= l= [p=]'", line_no)
    arc_id = parse_int(tokens[1], "arc id", line_no)
    fields = parse_fields(tokens[2:], line_no)
    for key in ("S", "E", "W", "a", "l"):
        if key not in fields:
            raise LatticeSyntaxError(f"arc {arc_id} lacks field {key}=", line_no)
    arc = Arc(
        id=arc_id,
        start_node=parse_int(fields.pop("S"), "S", line_no),
        end_node=parse_int(fields.pop("E"), "E", line_no),
        word=fields.pop("W"),
        acoustic_logp=parse_float(fields.pop("a"), "a", line_no),
        trans_logp=parse_float(fields.pop("l"), "l", line_no),
        pronunciation=fields.pop("p", None),
    )
    return arc, fields


def format_arc_fields(arc) -> str:
    """Lattice arc fields shared by lattice and HWCN lines."""
    parts = [
        f"J {arc.id}",
        f"S={arc.start_node}",
        f"E={arc.end_node}",
        f"W={arc.word}",
        f"a={format_score(arc.acoustic_logp)}",
        f"l={format_score(arc.trans_logp)}",
    ]
    if arc.pronunciation:
        parts.append(f"p={arc.pronunciation}")
    return " ".join(parts)


def parse_lattice(text: str) -> Lattice:
    """Parse lattice text; raises LatticeSyntaxError / LatticeValidationError."""
    lines = split_lines(text)
    utterance_id, frame_ms, n_nodes, n_arcs = read_header(lines)
    nodes = read_nodes(lines, 2, n_nodes)
    arcs = []
    first_arc = 2 + n_nodes
    for offset in range(n_arcs):
        line_no = first_arc + offset + 1
        if first_arc + offset >= len(lines):
            raise LatticeSyntaxError(f"expected {n_arcs} arc lines", line_no)
        arc, extra = parse_arc_line(lines[first_arc + offset], line_no)
        if extra:
            raise LatticeSyntaxError(f"unknown arc fields {sorted(extra)}", line_no)
        arcs.append(arc)
    if len(lines) > first_arc + n_arcs:
        raise LatticeSyntaxError("trailing content after arcs", first_arc + n_arcs + 1)
    return build_lattice(utterance_id, nodes, arcs, frame_ms=frame_ms)


def serialize_lattice(lattice: Lattice) -> str:
    """Canonical text: sorted ids, six fractional digits, LF endings."""
    lines = [
        f"UTT {lattice.utterance_id} FRAME_MS {lattice.frame_ms}",
        f"N {len(lattice.nodes)} A {len(lattice.arcs)}",
    ]
    lines.extend(f"I {n.id} t={n.time}" for n in sorted(lattice.nodes, key=lambda n: n.id))
    lines.extend(format_arc_fields(a) for a in sorted(lattice.arcs, key=lambda a: a.id))
    return "\n".join(lines) + "\n"


def read_references(text: str) -> Dict[str, List[str]]:
    """Reference transcripts: `<utterance_id>\\t<space-separated words>` per line."""
    refs: Dict[str, List[str]] = {}
    for line_no, line in enumerate(split_lines(text), 1):
        if not line.strip():
            continue
        utt, sep, words = line.partition("\t")
        if not sep:
            raise LatticeSyntaxError("expected '<utterance_id>\\t<words>'", line_no)
        if utt in refs:
            raise LatticeSyntaxError(f"duplicate utterance id {utt!r}", line_no)
        refs[utt] = words.split()
    return refs


def format_references(refs: Dict[str, List[str]]) -> str:
    return "".join(f"{utt}\t{' '.join(refs[utt])}\n" for utt in sorted(refs))


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def edit_distance_table(hyp: Sequence[str], ref: Sequence[str]) -> np.ndarray:
    n_h, n_r = len(hyp), len(ref)
    table = np.zeros((n_h + 1, n_r + 1), dtype=np.int64)
    table[:, 0] = np.arange(n_h + 1)
    table[0, :] = np.arange(n_r + 1)
    for i in range(1, n_h + 1):
        for j in range(1, n_r + 1):
            cost = 0 if hyp[i - 1] == ref[j - 1] else 1
            table[i, j] = min(
                table[i - 1, j - 1] + cost,
                table[i - 1, j] + 1,
                table[i, j - 1] + 1,
            )
    return table


def align(hyp: Sequence[str], ref: Sequence[str]) -> Alignment:
    """
    Unit-cost Levenshtein alignment.

    Backtracking starts from the end of both sequences and prefers
    match > substitute > delete > insert at every step.
    """
    table = edit_distance_table(hyp, ref)
    i, j = len(hyp), len(ref)
    ops: List[AlignOp] = []
    while i > 0 or j > 0:
        here = table[i, j]
        if i > 0 and j > 0 and hyp[i - 1] == ref[j - 1] and here == table[i - 1, j - 1]:
            ops.append(AlignOp("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and hyp[i - 1] != ref[j - 1] and here == table[i - 1, j - 1] + 1:
            ops.append(AlignOp("substitute", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and here == table[i - 1, j] + 1:
            ops.append(AlignOp("delete", i - 1, None))
            i -= 1
        else:
            ops.append(AlignOp("insert", None, j - 1))
            j -= 1
    ops.reverse()
    return Alignment(ops=tuple(ops))
