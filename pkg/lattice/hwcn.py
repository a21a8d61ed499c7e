# lattice/hwcn.py
# Thiqa - Heterogeneous Word Confusion Network construction, labeling and text format

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from lattice.config import SEGMENTATION_CAP, SILENCE_WORD, TOLERANCE_FRAMES
from lattice.core import (
    Arc,
    Lattice,
    Node,
    align,
    build_lattice,
    format_arc_fields,
    format_score,
    parse_arc_line,
    parse_float,
    parse_int,
    read_header,
    read_nodes,
    split_lines,
    topological_order,
)
from lattice.errors import (
    ConstructionError,
    ContractError,
    CycleError,
    EnumerationError,
    LatticeSyntaxError,
    LatticeValidationError,
)
from lattice.posterior import PosteriorAnnotatedLattice

logger = logging.getLogger(__name__)

POSTERIOR_SLACK = 1e-9


@dataclass(frozen=True)
class HwcnArc:
    id: int
    start_node: int
    end_node: int
    word: str
    merged_log_posterior: float
    merged_acoustic_logp: float
    merged_trans_logp: float
    source_arc_ids: Tuple[int, ...]
    origin_start_nodes: Tuple[int, ...]  # pre-merge start node of each source arc
    pronunciation: Optional[str] = None
    label: Optional[int] = None
    confidence: Optional[float] = None

    # Lattice-compatible names, so core helpers work on both arc types
    @property
    def acoustic_logp(self) -> float:
        return self.merged_acoustic_logp

    @property
    def trans_logp(self) -> float:
        return self.merged_trans_logp

    @property
    def is_silence(self) -> bool:
        return self.word == SILENCE_WORD


@dataclass(frozen=True)
class Hwcn:
    utterance_id: str
    frame_ms: int
    nodes: Tuple[Node, ...]
    arcs: Tuple[HwcnArc, ...]
    source_node_id: int
    sink_node_id: int
    onebest_arc_ids: Tuple[int, ...] = ()

    @cached_property
    def node_times(self) -> Dict[int, int]:
        return {n.id: n.time for n in self.nodes}

    @cached_property
    def arc_by_id(self) -> Dict[int, HwcnArc]:
        return {a.id: a for a in self.arcs}

    @cached_property
    def incoming(self) -> Dict[int, List[HwcnArc]]:
        table: Dict[int, List[HwcnArc]] = {n.id: [] for n in self.nodes}
        for arc in self.arcs:
            table[arc.end_node].append(arc)
        return table

    @cached_property
    def outgoing(self) -> Dict[int, List[HwcnArc]]:
        table: Dict[int, List[HwcnArc]] = {n.id: [] for n in self.nodes}
        for arc in self.arcs:
            table[arc.start_node].append(arc)
        return table

    @cached_property
    def competitors(self) -> Dict[Tuple[int, int], List[HwcnArc]]:
        """Arcs grouped by (start_node, end_node)."""
        table: Dict[Tuple[int, int], List[HwcnArc]] = defaultdict(list)
        for arc in self.arcs:
            table[(arc.start_node, arc.end_node)].append(arc)
        return dict(table)

    def arc_frames(self, arc: HwcnArc) -> int:
        return self.node_times[arc.end_node] - self.node_times[arc.start_node]

    @property
    def onebest_arcs(self) -> List[HwcnArc]:
        return [self.arc_by_id[i] for i in self.onebest_arc_ids]

    @property
    def onebest_words(self) -> List[str]:
        return [a.word for a in self.onebest_arcs if not a.is_silence]

    @property
    def is_labeled(self) -> bool:
        return all(a.label is not None for a in self.arcs)

    @property
    def is_scored(self) -> bool:
        return all(a.confidence is not None for a in self.arcs)

    def with_labels(self, labels: Dict[int, int]) -> "Hwcn":
        return replace(self, arcs=tuple(replace(a, label=labels[a.id]) for a in self.arcs))

    def with_confidences(self, confidences: Dict[int, float]) -> "Hwcn":
        return replace(
            self, arcs=tuple(replace(a, confidence=float(confidences[a.id])) for a in self.arcs)
        )


@dataclass(frozen=True)
class Slot:
    start_node: int
    end_node: int
    start_frame: int
    end_frame: int
    arc_ids: Tuple[int, ...]


@dataclass(frozen=True)
class SegmentationView:
    slots: Tuple[Slot, ...] = field(default_factory=tuple)

    @property
    def spans(self) -> List[Tuple[int, int]]:
        return [(s.start_frame, s.end_frame) for s in self.slots]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_hwcn(h: Hwcn) -> Hwcn:
    """Check the HWCN invariants; returns h unchanged when they hold."""
    times = h.node_times
    if len(times) != len(h.nodes):
        raise LatticeValidationError("duplicate node id", h.utterance_id)
    seen = set()
    keys = set()
    has_in, has_out = set(), set()
    for arc in h.arcs:
        if arc.id in seen:
            raise LatticeValidationError("duplicate arc id", str(arc.id))
        seen.add(arc.id)
        if arc.start_node not in times or arc.end_node not in times:
            raise LatticeValidationError("dangling node reference", f"arc {arc.id}")
        if times[arc.end_node] <= times[arc.start_node]:
            raise LatticeValidationError("non-positive arc duration", f"arc {arc.id}")
        key = (arc.start_node, arc.end_node, arc.word)
        if key in keys:
            raise LatticeValidationError("unmerged competing arcs", f"{key}")
        keys.add(key)
        if not arc.source_arc_ids:
            raise LatticeValidationError("empty provenance", f"arc {arc.id}")
        if arc.merged_log_posterior > POSTERIOR_SLACK:
            raise LatticeValidationError(
                "posterior above one", f"arc {arc.id} P={arc.merged_log_posterior}"
            )
        if arc.label not in (None, 0, 1):
            raise LatticeValidationError("label not in {0,1}", f"arc {arc.id}")
        if arc.confidence is not None and not 0.0 <= arc.confidence <= 1.0:
            raise LatticeValidationError("confidence outside [0,1]", f"arc {arc.id}")
        has_out.add(arc.start_node)
        has_in.add(arc.end_node)

    sources = [n.id for n in h.nodes if n.id not in has_in]
    sinks = [n.id for n in h.nodes if n.id not in has_out]
    if sources != [h.source_node_id]:
        raise LatticeValidationError("multiple sources", f"{sources}")
    if sinks != [h.sink_node_id]:
        raise LatticeValidationError("multiple sinks", f"{sinks}")
    topological_order(h)

    node = h.source_node_id
    for arc_id in h.onebest_arc_ids:
        arc = h.arc_by_id.get(arc_id)
        if arc is None or arc.start_node != node:
            raise LatticeValidationError("broken 1-best path", f"arc {arc_id}")
        node = arc.end_node
    if h.onebest_arc_ids and node != h.sink_node_id:
        raise LatticeValidationError("broken 1-best path", "does not reach the sink")
    return h


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def cluster_nodes(lattice: Lattice, tolerance_frames: int) -> Dict[int, int]:
    """
    Map every lattice node to its cluster leader.

    Leader clustering over (time, id)-sorted nodes, then any cluster holding
    both endpoints of an arc is split at the later endpoint until none do.
    """
    ordered = sorted(lattice.nodes, key=lambda n: (n.time, n.id))
    clusters: List[List[Node]] = []
    for node in ordered:
        if clusters and node.time <= clusters[-1][0].time + tolerance_frames:
            clusters[-1].append(node)
        else:
            clusters.append([node])

    position = {n.id: i for i, n in enumerate(ordered)}
    final: List[List[Node]] = []
    pending = list(reversed(clusters))
    while pending:
        cluster = pending.pop()
        members = {n.id for n in cluster}
        cut = None
        for node in cluster:
            for arc in lattice.incoming[node.id]:
                if arc.start_node in members:
                    if cut is None or position[node.id] < position[cut]:
                        cut = node.id
        if cut is None:
            final.append(cluster)
            continue
        index = next(i for i, n in enumerate(cluster) if n.id == cut)
        # Push the tail first so the head is processed next.
        pending.append(cluster[index:])
        pending.append(cluster[:index])

    leader_of = {}
    for cluster in final:
        for node in cluster:
            leader_of[node.id] = cluster[0].id
    return leader_of


def merge_competing_arcs(
    arcs: Sequence[HwcnArc],
    node_log_priors: Dict[int, float],
) -> HwcnArc:
    """
    Merge arcs sharing (start_node, end_node, word).

    Posterior is the sum of posteriors, acoustic score is the mean likelihood
    over the n input arcs, transitional score weights each input arc by the
    prior of its pre-merge start node relative to the sum over all input arcs.
    An input that is itself a merge counts once, with the prior mass of its
    distinct origins.
    """
    if not arcs:
        raise ContractError("merge_competing_arcs needs at least one arc")
    arcs = sorted(arcs, key=lambda a: min(a.source_arc_ids))
    head = arcs[0]
    for arc in arcs[1:]:
        if (arc.start_node, arc.end_node, arc.word) != (head.start_node, head.end_node, head.word):
            raise ContractError(
                f"cannot merge arc {arc.id} ({arc.start_node}->{arc.end_node} {arc.word!r}) "
                f"into arc {head.id} ({head.start_node}->{head.end_node} {head.word!r})"
            )
    if len(arcs) == 1:
        return head

    missing = [v for a in arcs for v in a.origin_start_nodes if v not in node_log_priors]
    if missing:
        raise ContractError(f"no node prior for pre-merge start nodes {sorted(set(missing))}")

    posterior = float(logsumexp([a.merged_log_posterior for a in arcs]))

    acoustic = float(logsumexp([a.merged_acoustic_logp for a in arcs]) - np.log(len(arcs)))

    origin_prior = np.array([
        logsumexp([node_log_priors[v] for v in sorted(set(a.origin_start_nodes))]) for a in arcs
    ])
    trans_logp = np.array([a.merged_trans_logp for a in arcs])
    trans = float(logsumexp(trans_logp + origin_prior) - logsumexp(origin_prior))

    source_ids = tuple(sorted(i for a in arcs for i in a.source_arc_ids))
    origin_by_source = {}
    for a in arcs:
        origin_by_source.update(zip(a.source_arc_ids, a.origin_start_nodes))

    return HwcnArc(
        id=source_ids[0],
        start_node=head.start_node,
        end_node=head.end_node,
        word=head.word,
        merged_log_posterior=min(posterior, 0.0),
        merged_acoustic_logp=acoustic,
        merged_trans_logp=min(trans, 0.0),
        source_arc_ids=source_ids,
        origin_start_nodes=tuple(origin_by_source[i] for i in source_ids),
        pronunciation=head.pronunciation,
    )


def build_hwcn(
    annotated: PosteriorAnnotatedLattice,
    tolerance_frames: int = TOLERANCE_FRAMES,
) -> Hwcn:
    """Merge similar-time nodes, then competing same-word arcs, then find the MAP path."""
    from lattice.decoder import map_onebest

    if tolerance_frames < 0:
        raise ContractError(f"tolerance_frames must be >= 0, got {tolerance_frames}")
    lattice = annotated.lattice
    leader_of = cluster_nodes(lattice, tolerance_frames)

    times = lattice.node_times
    nodes = tuple(
        sorted((Node(id=v, time=times[v]) for v in set(leader_of.values())), key=lambda n: n.id)
    )

    groups: Dict[Tuple[int, int, str], List[HwcnArc]] = defaultdict(list)
    for arc in lattice.arcs:
        start, end = leader_of[arc.start_node], leader_of[arc.end_node]
        if start == end:
            raise ConstructionError(
                f"{lattice.utterance_id}: arc {arc.id} collapsed into node {start}"
            )
        groups[(start, end, arc.word)].append(
            HwcnArc(
                id=arc.id,
                start_node=start,
                end_node=end,
                word=arc.word,
                merged_log_posterior=annotated.arc_log_posterior[arc.id],
                merged_acoustic_logp=arc.acoustic_logp,
                merged_trans_logp=arc.trans_logp,
                source_arc_ids=(arc.id,),
                origin_start_nodes=(arc.start_node,),
                pronunciation=arc.pronunciation,
            )
        )

    merged = [merge_competing_arcs(g, annotated.node_log_prior) for g in groups.values()]
    h = Hwcn(
        utterance_id=lattice.utterance_id,
        frame_ms=lattice.frame_ms,
        nodes=nodes,
        arcs=tuple(sorted(merged, key=lambda a: a.id)),
        source_node_id=leader_of[lattice.source_node_id],
        sink_node_id=leader_of[lattice.sink_node_id],
    )
    try:
        validate_hwcn(h)
    except CycleError as exc:
        raise ConstructionError(f"{lattice.utterance_id}: merged graph is cyclic ({exc})")

    best = map_onebest(h, annotated.acoustic_scale)
    h = replace(h, onebest_arc_ids=best.arc_ids)
    logger.debug(
        "%s: %d->%d nodes, %d->%d arcs, 1-best '%s'",
        lattice.utterance_id, len(lattice.nodes), len(h.nodes),
        len(lattice.arcs), len(h.arcs), " ".join(best.words),
    )
    return h


def hwcn_as_lattice(h: Hwcn) -> Lattice:
    """View an HWCN as a plain lattice over its merged scores."""
    arcs = [
        Arc(
            id=a.id,
            start_node=a.start_node,
            end_node=a.end_node,
            word=a.word,
            acoustic_logp=a.merged_acoustic_logp,
            trans_logp=a.merged_trans_logp,
            pronunciation=a.pronunciation,
        )
        for a in h.arcs
    ]
    return build_lattice(h.utterance_id, h.nodes, arcs, frame_ms=h.frame_ms)


# ---------------------------------------------------------------------------
# Labels and segmentations
# ---------------------------------------------------------------------------

def label_arcs(h: Hwcn, reference: Sequence[str]) -> Hwcn:
    """
    Training labels from the 1-best/reference alignment.

    Each 1-best word aligned to a reference word (match or substitution) lends
    that reference word to its slot: arcs sharing its start and end node get 1
    iff they carry it. Everything else is 0, as is everything when the
    alignment has no match at all.
    """
    if not h.onebest_arc_ids:
        raise ContractError(f"{h.utterance_id}: HWCN has no 1-best path")
    labels = {a.id: 0 for a in h.arcs}
    spoken = [a for a in h.onebest_arcs if not a.is_silence]
    alignment = align([a.word for a in spoken], list(reference))

    if alignment.count("match") == 0:
        return h.with_labels(labels)

    for op in alignment.ops:
        if op.kind not in ("match", "substitute"):
            continue
        anchor = spoken[op.hyp_index]
        ref_word = reference[op.ref_index]
        for arc in h.competitors[(anchor.start_node, anchor.end_node)]:
            if not arc.is_silence:
                labels[arc.id] = int(arc.word == ref_word)
    return h.with_labels(labels)


def _node_chains(h: Hwcn, cap: int) -> List[List[int]]:
    successors: Dict[int, List[int]] = {
        v: sorted({a.end_node for a in arcs}, key=lambda n: (h.node_times[n], n))
        for v, arcs in h.outgoing.items()
    }
    chains: List[List[int]] = []
    stack = [[h.source_node_id]]
    while stack:
        chain = stack.pop()
        last = chain[-1]
        if last == h.sink_node_id:
            chains.append(chain)
            if len(chains) > cap:
                raise EnumerationError(
                    f"{h.utterance_id}: more than {cap} segmentations"
                )
            continue
        for nxt in reversed(successors[last]):
            stack.append(chain + [nxt])
    return chains


def enumerate_segmentations(h: Hwcn, cap: int = SEGMENTATION_CAP) -> List[SegmentationView]:
    """One view per source-to-sink node chain (the WCNs an HWCN overlays)."""
    views = []
    times = h.node_times
    for chain in _node_chains(h, cap):
        slots = []
        for start, end in zip(chain, chain[1:]):
            ids = tuple(a.id for a in h.competitors[(start, end)])
            slots.append(Slot(start, end, times[start], times[end], ids))
        views.append(SegmentationView(slots=tuple(slots)))
    return views


def hwcn_paths(h: Hwcn, cap: int = SEGMENTATION_CAP) -> List[Tuple[int, ...]]:
    """All source-to-sink arc paths, as arc-id tuples in DFS order."""
    paths: List[Tuple[int, ...]] = []
    stack: List[Tuple[int, Tuple[int, ...]]] = [(h.source_node_id, ())]
    while stack:
        node, path = stack.pop()
        if node == h.sink_node_id:
            paths.append(path)
            if len(paths) > cap:
                raise EnumerationError(f"{h.utterance_id}: more than {cap} paths")
            continue
        for arc in reversed(h.outgoing[node]):
            stack.append((arc.end_node, path + (arc.id,)))
    return paths


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _ids(values: Iterable[int]) -> str:
    return ",".join(str(v) for v in values)


def _parse_ids(value: str, what: str, line_no: int) -> Tuple[int, ...]:
    return tuple(parse_int(v, what, line_no) for v in value.split(","))


def format_confidence(value: float) -> str:
    return f"{value:.9f}"


def serialize_hwcn(h: Hwcn) -> str:
    lines = [
        f"UTT {h.utterance_id} FRAME_MS {h.frame_ms}",
        f"N {len(h.nodes)} A {len(h.arcs)}",
    ]
    lines.extend(f"I {n.id} t={n.time}" for n in sorted(h.nodes, key=lambda n: n.id))
    for arc in sorted(h.arcs, key=lambda a: a.id):
        parts = [
            format_arc_fields(arc),
            f"P={format_score(arc.merged_log_posterior)}",
            f"src={_ids(arc.source_arc_ids)}",
            f"o={_ids(arc.origin_start_nodes)}",
        ]
        if arc.label is not None:
            parts.append(f"L={arc.label}")
        if arc.confidence is not None:
            parts.append(f"C={format_confidence(arc.confidence)}")
        lines.append(" ".join(parts))
    lines.append(f"BEST {_ids(h.onebest_arc_ids) or '-'}")
    return "\n".join(lines) + "\n"


def parse_hwcn(text: str) -> Hwcn:
    lines = split_lines(text)
    utterance_id, frame_ms, n_nodes, n_arcs = read_header(lines)
    nodes = read_nodes(lines, 2, n_nodes)
    first_arc = 2 + n_nodes
    arcs = []
    for offset in range(n_arcs):
        line_no = first_arc + offset + 1
        if first_arc + offset >= len(lines):
            raise LatticeSyntaxError(f"expected {n_arcs} arc lines", line_no)
        base, extra = parse_arc_line(lines[first_arc + offset], line_no)
        for key in ("P", "src", "o"):
            if key not in extra:
                raise LatticeSyntaxError(f"HWCN arc {base.id} lacks field {key}=", line_no)
        source_ids = _parse_ids(extra.pop("src"), "src", line_no)
        origins = _parse_ids(extra.pop("o"), "o", line_no)
        if len(source_ids) != len(origins):
            raise LatticeSyntaxError("src= and o= differ in length", line_no)
        label = extra.pop("L", None)
        confidence = extra.pop("C", None)
        arc = HwcnArc(
            id=base.id,
            start_node=base.start_node,
            end_node=base.end_node,
            word=base.word,
            merged_log_posterior=parse_float(extra.pop("P"), "P", line_no),
            merged_acoustic_logp=base.acoustic_logp,
            merged_trans_logp=base.trans_logp,
            source_arc_ids=source_ids,
            origin_start_nodes=origins,
            pronunciation=base.pronunciation,
            label=None if label is None else parse_int(label, "L", line_no),
            confidence=None if confidence is None else parse_float(confidence, "C", line_no),
        )
        if extra:
            raise LatticeSyntaxError(f"unknown arc fields {sorted(extra)}", line_no)
        arcs.append(arc)

    best_no = first_arc + n_arcs
    if best_no >= len(lines) or not lines[best_no].startswith("BEST "):
        raise LatticeSyntaxError("expected 'BEST <arc ids>'", best_no + 1)
    best_field = lines[best_no][len("BEST "):]
    onebest = () if best_field == "-" else _parse_ids(best_field, "BEST", best_no + 1)
    if len(lines) > best_no + 1:
        raise LatticeSyntaxError("trailing content after BEST", best_no + 2)

    nodes = tuple(sorted(nodes, key=lambda n: n.id))
    ids = {n.id for n in nodes}
    has_in = {a.end_node for a in arcs}
    has_out = {a.start_node for a in arcs}
    sources = sorted(ids - has_in)
    sinks = sorted(ids - has_out)
    if len(sources) != 1:
        raise LatticeValidationError("multiple sources", f"{sources}")
    if len(sinks) != 1:
        raise LatticeValidationError("multiple sinks", f"{sinks}")
    h = Hwcn(
        utterance_id=utterance_id,
        frame_ms=frame_ms,
        nodes=nodes,
        arcs=tuple(sorted(arcs, key=lambda a: a.id)),
        source_node_id=sources[0],
        sink_node_id=sinks[0],
        onebest_arc_ids=onebest,
    )
    return validate_hwcn(h)
