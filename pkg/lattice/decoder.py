# lattice/decoder.py
# Thiqa - Maximum mean confidence decoding and MAP 1-best over an HWCN

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Optional, Sequence, Tuple

import numpy as np

from lattice.config import ACOUSTIC_SCALE
from lattice.core import topological_order
from lattice.errors import ContractError, LatticeSyntaxError

if TYPE_CHECKING:
    from lattice.hwcn import Hwcn, HwcnArc

logger = logging.getLogger(__name__)

_UNREACHABLE = 1 << 40  # arc count of an impossible state
TIE_TOLERANCE = 1e-12   # sums closer than this are equal


@dataclass(frozen=True)
class DecodeResult:
    utterance_id: str
    words: Tuple[str, ...]
    arc_ids: Tuple[int, ...]
    mean_confidence: Optional[float]
    word_confidences: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_slots(self) -> int:
        return len(self.words)

    @property
    def estimated_wer(self) -> Optional[float]:
        if self.mean_confidence is None:
            return None
        return 1.0 - self.mean_confidence


class _PathSearch:
    """
    Best source-to-sink path under (weight, count) arc scores.

    Backward DP over states (node, k) where k is the number of counted arcs
    still to come. For each state it keeps the best weight sum and, among
    suffixes reaching it, the fewest arcs. The caller picks the admissible k
    values at the source; reconstruction walks forward through tight arcs,
    extending the lexicographically smallest word sequence.
    """

    def __init__(self, h: "Hwcn", weight: Dict[int, float], counted: Dict[int, bool], max_count: int):
        self.h = h
        self.weight = weight
        self.counted = counted
        self.size = max_count + 1
        self.order = topological_order(h)
        self.best: Dict[int, np.ndarray] = {}
        self.arcs: Dict[int, np.ndarray] = {}
        self._backward()

    def _suffix(self, arc: "HwcnArc") -> Tuple[np.ndarray, np.ndarray]:
        best = np.full(self.size, -np.inf)
        arcs = np.full(self.size, _UNREACHABLE, dtype=np.int64)
        tail_best, tail_arcs = self.best[arc.end_node], self.arcs[arc.end_node]
        if self.counted[arc.id]:
            best[1:] = tail_best[:-1] + self.weight[arc.id]
            arcs[1:] = tail_arcs[:-1] + 1
        else:
            best[:] = tail_best + self.weight[arc.id]
            arcs[:] = tail_arcs + 1
        reachable = np.isfinite(best)
        arcs[~reachable] = _UNREACHABLE
        return best, arcs

    def _backward(self) -> None:
        sink = self.h.sink_node_id
        for nid in reversed(self.order):
            best = np.full(self.size, -np.inf)
            arcs = np.full(self.size, _UNREACHABLE, dtype=np.int64)
            if nid == sink:
                best[0] = 0.0
                arcs[0] = 0
            for arc in self.h.outgoing[nid]:
                cand_best, cand_arcs = self._suffix(arc)
                with np.errstate(invalid="ignore"):
                    better = cand_best > best + TIE_TOLERANCE
                    equal = (np.abs(cand_best - best) <= TIE_TOLERANCE) & np.isfinite(cand_best)
                arcs = np.where(better, cand_arcs, np.where(equal, np.minimum(arcs, cand_arcs), arcs))
                best = np.where(better, cand_best, best)
            self.best[nid] = best
            self.arcs[nid] = arcs

    def _tight(self, arc: "HwcnArc", k: int) -> Optional[int]:
        """Remaining count after `arc` if it lies on an optimal suffix from (start, k)."""
        step = 1 if self.counted[arc.id] else 0
        rest = k - step
        if rest < 0:
            return None
        tail = self.best[arc.end_node][rest]
        if not np.isfinite(tail):
            return None
        if abs(self.weight[arc.id] + tail - self.best[arc.start_node][k]) > TIE_TOLERANCE:
            return None
        if self.arcs[arc.end_node][rest] + 1 != self.arcs[arc.start_node][k]:
            return None
        return rest

    def reconstruct(self, start_counts: Sequence[int]) -> Tuple[int, ...]:
        sink = self.h.sink_node_id
        # state -> smallest arc-id prefix reaching it with the current word prefix
        frontier: Dict[Tuple[int, int], Tuple[int, ...]] = {
            (self.h.source_node_id, k): () for k in start_counts
        }
        while True:
            frontier = self._close_silence(frontier)
            finished = [path for (nid, k), path in frontier.items() if nid == sink and k == 0]
            if finished:
                return min(finished)

            moves: Dict[str, Dict[Tuple[int, int], Tuple[int, ...]]] = {}
            for (nid, k), path in frontier.items():
                for arc in self.h.outgoing[nid]:
                    if arc.is_silence:
                        continue
                    rest = self._tight(arc, k)
                    if rest is None:
                        continue
                    state = (arc.end_node, rest)
                    candidate = path + (arc.id,)
                    bucket = moves.setdefault(arc.word, {})
                    if state not in bucket or candidate < bucket[state]:
                        bucket[state] = candidate
            if not moves:
                raise ContractError(f"{self.h.utterance_id}: no tight continuation during decoding")
            frontier = moves[min(moves)]

    def _close_silence(self, frontier):
        closed = dict(frontier)
        pending = list(frontier)
        while pending:
            nid, k = pending.pop()
            path = closed[(nid, k)]
            for arc in self.h.outgoing[nid]:
                if not arc.is_silence:
                    continue
                rest = self._tight(arc, k)
                if rest is None:
                    continue
                state = (arc.end_node, rest)
                candidate = path + (arc.id,)
                if state not in closed or candidate < closed[state]:
                    closed[state] = candidate
                    pending.append(state)
        return closed


def _longest_word_count(h: "Hwcn") -> int:
    depth = {h.source_node_id: 0}
    for nid in topological_order(h):
        for arc in h.outgoing[nid]:
            step = 0 if arc.is_silence else 1
            depth[arc.end_node] = max(depth.get(arc.end_node, 0), depth[nid] + step)
    return depth[h.sink_node_id]


def _result(h: "Hwcn", arc_ids: Sequence[int]) -> DecodeResult:
    spoken = [h.arc_by_id[i] for i in arc_ids if not h.arc_by_id[i].is_silence]
    words = tuple(a.word for a in spoken)
    if h.is_scored:
        confidences = tuple(float(a.confidence) for a in spoken)
        mean = sum(confidences) / len(confidences) if confidences else 0.0
    else:
        confidences, mean = (), None
    return DecodeResult(
        utterance_id=h.utterance_id,
        words=words,
        arc_ids=tuple(arc_ids),
        mean_confidence=mean,
        word_confidences=confidences,
    )


def decode_max_mean(h: "Hwcn") -> DecodeResult:
    """
    Path with the highest mean word confidence (lowest estimated WER).

    Exact: the DP keeps the best confidence sum per remaining word count, so
    every achievable path length is compared by its true mean. Silence arcs
    are traversable but add nothing to the sum or the count. Ties go to the
    fewest arcs, then the lexicographically smallest word sequence.
    """
    unscored = [a.id for a in h.arcs if a.confidence is None]
    if unscored:
        raise ContractError(f"{h.utterance_id}: arcs without confidence {unscored[:10]}")

    counted = {a.id: not a.is_silence for a in h.arcs}
    weight = {a.id: (float(a.confidence) if counted[a.id] else 0.0) for a in h.arcs}
    search = _PathSearch(h, weight, counted, _longest_word_count(h))

    at_source = search.best[h.source_node_id]
    means = {}
    for k in range(search.size):
        if np.isfinite(at_source[k]):
            means[k] = at_source[k] / k if k else 0.0
    top = max(means.values())
    tied = [k for k, m in means.items() if m >= top - TIE_TOLERANCE]
    fewest = min(search.arcs[h.source_node_id][k] for k in tied)
    chosen = [k for k in tied if search.arcs[h.source_node_id][k] == fewest]

    result = _result(h, search.reconstruct(chosen))
    logger.debug("%s: max-mean path '%s' mean %.6f", h.utterance_id, " ".join(result.words), result.mean_confidence)
    return result


def map_onebest(h: "Hwcn", acoustic_scale: float = ACOUSTIC_SCALE) -> DecodeResult:
    """Max-sum Viterbi over acoustic_scale * acoustic + transitional scores."""
    if not acoustic_scale > 0:
        raise ContractError(f"acoustic_scale must be positive, got {acoustic_scale}")
    counted = {a.id: False for a in h.arcs}
    weight = {a.id: acoustic_scale * a.merged_acoustic_logp + a.merged_trans_logp for a in h.arcs}
    search = _PathSearch(h, weight, counted, 0)
    return _result(h, search.reconstruct([0]))


# ---------------------------------------------------------------------------
# Decode output lines
# ---------------------------------------------------------------------------

def format_decode_line(result: DecodeResult) -> str:
    """`<utt>\\t<words>\\t<mean>\\t<per-word confidences>`; `-` marks an absent value."""
    mean = "-" if result.mean_confidence is None else f"{result.mean_confidence:.6f}"
    confs = " ".join(f"{c:.6f}" for c in result.word_confidences) or "-"
    return f"{result.utterance_id}\t{' '.join(result.words)}\t{mean}\t{confs}"


def parse_decode_line(line: str, line_no: int = 0) -> DecodeResult:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (3, 4):
        raise LatticeSyntaxError("expected '<utterance_id>\\t<words>\\t<mean>[\\t<confidences>]'", line_no or None)
    utt, words, mean = parts[:3]
    confs = parts[3] if len(parts) == 4 else "-"
    try:
        mean_value = None if mean == "-" else float(mean)
        word_confidences = () if confs in ("-", "") else tuple(float(c) for c in confs.split())
    except ValueError:
        raise LatticeSyntaxError(f"bad confidence value in {mean!r} / {confs!r}", line_no or None)
    words = tuple(words.split())
    if word_confidences and len(word_confidences) != len(words):
        raise LatticeSyntaxError(
            f"{len(word_confidences)} confidences for {len(words)} words", line_no or None
        )
    return DecodeResult(
        utterance_id=utt,
        words=words,
        arc_ids=(),
        mean_confidence=mean_value,
        word_confidences=word_confidences,
    )


def read_decode_file(text: str) -> Dict[str, DecodeResult]:
    results: Dict[str, DecodeResult] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        result = parse_decode_line(line, line_no)
        if result.utterance_id in results:
            raise LatticeSyntaxError(f"duplicate utterance id {result.utterance_id!r}", line_no)
        results[result.utterance_id] = result
    return results
