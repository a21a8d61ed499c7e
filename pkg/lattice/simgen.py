# lattice/simgen.py
# Thiqa - Seeded synthetic recognizer corpus generator
#
# Every utterance is a chain of slots. Each slot has a designated winner arc
# (what the recognizer's MAP path outputs) and confusable alternatives.
# Correct arcs draw their acoustic quality from N(+sep/2, 1), wrong arcs from
# N(-sep/2, 1); the language model then forces the designated winner, which is
# how substitutions, deletions and insertions enter the MAP path.

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from lattice.config import ACOUSTIC_SCALE, DEFAULT_SEED, FRAME_MS, SILENCE_WORD, SIMCONFIG_FORMAT
from lattice.core import Arc, Lattice, Node, build_lattice
from lattice.errors import ConfigError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "eval")

_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]

QUALITY_SCALE = 6.0      # acoustic log-likelihood units per unit of quality
FRAME_PENALTY = 0.5      # log-likelihood lost per frame
MIN_SLOT_FRAMES = 15
MAX_SLOT_FRAMES = 40
SHADOW_RATE = 0.3        # alternatives ending off the slot boundary
DUPLICATE_RATE = 0.2     # alternatives repeated under another LM context
SPAN_RATE = 0.1          # wrong words spanning two slots


@dataclass
class RecognizerProfile:
    name: str
    substitution_rate: float = 0.10
    deletion_rate: float = 0.03
    insertion_rate: float = 0.03
    confusion_pool_size: int = 4
    time_jitter_frames: int = 3
    acoustic_separation: float = 2.0
    lm_noise: float = 0.5

    def validate(self) -> None:
        for attr in ("substitution_rate", "deletion_rate", "insertion_rate"):
            value = getattr(self, attr)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{self.name}: {attr} must be in [0, 1), got {value}")
        if self.substitution_rate + self.deletion_rate >= 1.0:
            raise ConfigError(f"{self.name}: substitution_rate + deletion_rate must stay below 1")
        if self.confusion_pool_size < 1:
            raise ConfigError(f"{self.name}: confusion_pool_size must be >= 1")
        if not 0 <= self.time_jitter_frames < MIN_SLOT_FRAMES:
            raise ConfigError(
                f"{self.name}: time_jitter_frames must be in [0, {MIN_SLOT_FRAMES}), "
                f"got {self.time_jitter_frames}"
            )
        if self.acoustic_separation < 0:
            raise ConfigError(f"{self.name}: acoustic_separation must be >= 0")
        if self.lm_noise < 0:
            raise ConfigError(f"{self.name}: lm_noise must be >= 0")

    @property
    def correct_prior(self) -> float:
        """Share of output words that are correct."""
        return (1.0 - self.substitution_rate - self.deletion_rate) / (
            1.0 - self.deletion_rate + self.insertion_rate
        )


@dataclass
class SimConfig:
    seed: int = DEFAULT_SEED
    vocabulary_size: int = 200
    utterance_count: int = 500
    min_words: int = 3
    max_words: int = 10
    acoustic_scale: float = ACOUSTIC_SCALE
    frame_ms: int = FRAME_MS
    profiles: List[RecognizerProfile] = field(default_factory=list)

    def validate(self) -> None:
        if self.vocabulary_size < 2:
            raise ConfigError("vocabulary_size must be >= 2")
        if self.vocabulary_size > len(_SYLLABLES) ** 3:
            raise ConfigError(f"vocabulary_size must be <= {len(_SYLLABLES) ** 3}")
        if self.utterance_count < 1:
            raise ConfigError("utterance_count must be >= 1")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        if not self.acoustic_scale > 0:
            raise ConfigError("acoustic_scale must be positive")
        if not self.profiles:
            raise ConfigError("at least one recognizer profile is required")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ConfigError(f"recognizer names must be unique: {names}")
        for profile in self.profiles:
            profile.validate()


@dataclass
class RecognizerCorpus:
    profile: RecognizerProfile
    lattices: Dict[str, Lattice]
    oracle: Dict[str, float]            # expected share of correct output words
    correct_fraction: Dict[str, float]  # realized share of correct output words
    hypotheses: Dict[str, List[str]] = field(default_factory=dict)  # words of the designed MAP path


@dataclass
class SimCorpus:
    config: SimConfig
    references: Dict[str, List[str]]
    recognizers: List[RecognizerCorpus]

    @property
    def utterance_ids(self) -> List[str]:
        return sorted(self.references)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def default_profiles() -> List[RecognizerProfile]:
    """Five recognizers of different quality and different confidence signal."""
    return [
        RecognizerProfile("rec0", 0.08, 0.02, 0.02, 4, 2, 2.5, 0.4),
        RecognizerProfile("rec1", 0.12, 0.03, 0.03, 5, 3, 2.0, 0.5),
        RecognizerProfile("rec2", 0.16, 0.04, 0.03, 4, 4, 2.0, 0.6),
        RecognizerProfile("rec3", 0.10, 0.05, 0.05, 6, 2, 1.5, 0.5),
        RecognizerProfile("rec4", 0.20, 0.03, 0.04, 3, 5, 2.5, 0.7),
    ]


_PROFILE_FIELDS = {
    "name": str,
    "substitution_rate": float,
    "deletion_rate": float,
    "insertion_rate": float,
    "confusion_pool_size": int,
    "time_jitter_frames": int,
    "acoustic_separation": float,
    "lm_noise": float,
}

_TOP_FIELDS = {
    "seed": int,
    "vocabulary_size": int,
    "utterance_count": int,
    "min_words": int,
    "max_words": int,
    "acoustic_scale": float,
    "frame_ms": int,
}


def parse_sim_config(text: str) -> SimConfig:
    """
    Flat `key = value` config; `#` starts a comment.

    Recognizers are `recognizer.<index>.<field>`; indices need not be
    contiguous but order follows them. Without any recognizer keys the
    default profiles are used.
    """
    cfg = SimConfig()
    profiles: Dict[int, Dict[str, object]] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {line_no}: expected key = value")
        if key == "format":
            if value != SIMCONFIG_FORMAT:
                raise ConfigError(f"line {line_no}: unsupported format {value!r}")
            continue
        try:
            if key in _TOP_FIELDS:
                setattr(cfg, key, _TOP_FIELDS[key](value))
                continue
            parts = key.split(".")
            if len(parts) == 3 and parts[0] == "recognizer" and parts[2] in _PROFILE_FIELDS:
                index = int(parts[1])
                profiles.setdefault(index, {})[parts[2]] = _PROFILE_FIELDS[parts[2]](value)
                continue
        except ValueError:
            raise ConfigError(f"line {line_no}: bad value for {key}: {value!r}")
        raise ConfigError(f"line {line_no}: unknown key {key!r}")

    if profiles:
        cfg.profiles = [
            RecognizerProfile(**{"name": f"rec{i}", **profiles[i]}) for i in sorted(profiles)
        ]
    else:
        cfg.profiles = default_profiles()
    cfg.validate()
    return cfg


def load_sim_config(path) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read sim config {path}: {exc}")
    return parse_sim_config(text)


def format_sim_config(cfg: SimConfig) -> str:
    lines = [f"format = {SIMCONFIG_FORMAT}"]
    lines.extend(f"{key} = {getattr(cfg, key)}" for key in _TOP_FIELDS)
    for i, profile in enumerate(cfg.profiles):
        lines.extend(
            f"recognizer.{i}.{name} = {getattr(profile, name)}" for name in _PROFILE_FIELDS
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Hashing helpers
# ---------------------------------------------------------------------------

def _hash_int(*parts) -> int:
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def split_of(utterance_id: str) -> str:
    """Stable train/dev/eval assignment, 60/20/20 by id hash."""
    bucket = _hash_int("split", utterance_id) % 100
    if bucket < 60:
        return "train"
    if bucket < 80:
        return "dev"
    return "eval"


def make_vocabulary(size: int, seed: int) -> List[Tuple[str, str]]:
    """Distinct pseudo-words with syllable pronunciations, e.g. ('kalo', 'ka_lo')."""
    rng = np.random.default_rng([seed, 7])
    words: Dict[str, str] = {}
    while len(words) < size:
        n = int(rng.integers(1, 4))
        syllables = [_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), size=n)]
        word = "".join(syllables)
        if word not in words:
            words[word] = "_".join(syllables)
    return sorted(words.items())


def confusion_pool(word_index: int, vocabulary_size: int, pool_size: int, seed: int) -> List[int]:
    """Fixed confusable neighbours of a word: the same wrong words recur."""
    size = min(pool_size, vocabulary_size - 1)
    rng = np.random.default_rng([seed, 11, word_index])
    others = [i for i in range(vocabulary_size) if i != word_index]
    return [others[int(i)] for i in rng.choice(len(others), size=size, replace=False)]


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class _Slot:
    truth: Optional[int]            # vocabulary index, None when the truth is silence
    winner: Optional[int]           # vocabulary index, None for a silence winner
    alternatives: List[Optional[int]]
    frames: int


@dataclass
class _Draft:
    """Arc under construction; score fields are filled before the lattice is built."""
    start: int
    end: int
    word: Optional[int]
    correct: bool
    frames: int
    slots: Tuple[int, ...]
    is_winner: bool = False
    copy_of: Optional["_Draft"] = None  # same word and segment under another LM context
    acoustic: float = 0.0
    trans: float = 0.0
    quality: float = 0.0


class _UtteranceBuilder:
    def __init__(self, cfg: SimConfig, profile: RecognizerProfile, vocab, rng: np.random.Generator):
        self.cfg = cfg
        self.profile = profile
        self.vocab = vocab
        self.rng = rng

    def _pool(self, index: int) -> List[int]:
        return confusion_pool(index, len(self.vocab), self.profile.confusion_pool_size, self.cfg.seed)

    def _slots(self, reference: Sequence[int]) -> List[_Slot]:
        p, rng = self.profile, self.rng
        slots = []
        for ref in reference:
            u = rng.random()
            pool = self._pool(ref)
            n_alt = int(rng.integers(1, len(pool) + 1))
            picks = [pool[int(i)] for i in rng.choice(len(pool), size=n_alt, replace=False)]
            if u < p.substitution_rate:
                winner = picks[0]
                alternatives = [ref] + picks[1:]
            elif u < p.substitution_rate + p.deletion_rate:
                winner = None
                alternatives = [ref] + picks[1:]
            else:
                winner = ref
                alternatives = picks
            slots.append(_Slot(ref, winner, alternatives, self._frames()))

            if rng.random() < p.insertion_rate:
                inserted = picks[int(rng.integers(0, len(picks)))]
                slots.append(_Slot(None, inserted, [None], self._frames()))
        return slots

    def _frames(self) -> int:
        return int(self.rng.integers(MIN_SLOT_FRAMES, MAX_SLOT_FRAMES + 1))

    def _quality(self, correct: bool) -> float:
        half = self.profile.acoustic_separation / 2.0
        return float(self.rng.normal(half if correct else -half, 1.0))

    def _score(self, draft: _Draft) -> None:
        draft.quality = self._quality(draft.correct)
        draft.acoustic = -FRAME_PENALTY * draft.frames + QUALITY_SCALE * draft.quality
        base = math.log(float(self.rng.uniform(0.05, 0.9)))
        draft.trans = min(0.0, base + self.profile.lm_noise * float(self.rng.normal()))

    def build(self, utterance_id: str, reference: Sequence[int]):
        slots = self._slots(reference)
        boundaries = [0]
        for slot in slots:
            boundaries.append(boundaries[-1] + slot.frames)
        next_node = len(boundaries)
        node_times = {i: t for i, t in enumerate(boundaries)}
        anchor: Dict[int, int] = {}  # shadow node -> the boundary it jitters off
        drafts: List[_Draft] = []

        for i, slot in enumerate(slots):
            frames = slot.frames
            drafts.append(_Draft(i, i + 1, slot.winner, slot.winner == slot.truth, frames, (i,), is_winner=True))
            nxt = slots[i + 1] if i + 1 < len(slots) else None
            for alt in slot.alternatives:
                correct = alt == slot.truth
                original = _Draft(i, i + 1, alt, correct, frames, (i,))
                drafts.append(original)
                if alt is not None and self.rng.random() < DUPLICATE_RATE:
                    copy = _Draft(i, i + 1, alt, correct, frames, (i,), copy_of=original)
                    drafts.append(copy)

                jitter = self.profile.time_jitter_frames
                follow = [w for w in nxt.alternatives if w is not None] if nxt else []
                if jitter and follow and alt is not None and self.rng.random() < SHADOW_RATE:
                    shift = int(self.rng.integers(1, jitter + 1))
                    shadow = next_node
                    next_node += 1
                    node_times[shadow] = boundaries[i + 1] + shift
                    anchor[shadow] = i + 1
                    drafts.append(_Draft(i, shadow, alt, correct, frames + shift, (i,)))
                    word = follow[int(self.rng.integers(0, len(follow)))]
                    drafts.append(
                        _Draft(shadow, i + 2, word, word == nxt.truth, nxt.frames - shift, (i + 1,))
                    )

            if nxt is not None and nxt.truth is not None and slot.truth is not None \
                    and self.rng.random() < SPAN_RATE:
                word = self._pool(slot.truth)[0]
                drafts.append(_Draft(i, i + 2, word, False, frames + nxt.frames, (i, i + 1)))

        for draft in drafts:
            self._score(draft)
        for draft in drafts:
            if draft.copy_of is not None:
                # the acoustic model sees the same audio for both copies
                draft.acoustic, draft.quality = draft.copy_of.acoustic, draft.copy_of.quality
        self._force_winners(drafts, anchor)

        nodes = [Node(id=n, time=t) for n, t in node_times.items()]
        arcs = []
        for arc_id, draft in enumerate(drafts):
            if draft.word is None:
                word, pron = SILENCE_WORD, None
            else:
                word, pron = self.vocab[draft.word]
            arcs.append(Arc(
                id=arc_id,
                start_node=draft.start,
                end_node=draft.end,
                word=word,
                acoustic_logp=round(draft.acoustic, 6),
                trans_logp=round(draft.trans, 6),
                pronunciation=pron,
            ))
        lattice = build_lattice(utterance_id, nodes, arcs, frame_ms=self.cfg.frame_ms)
        return lattice, [d for d in drafts if d.is_winner]

    def _force_winners(self, drafts: List[_Draft], anchor: Dict[int, int]) -> None:
        """
        Push every competitor below the winners it competes with (LM-driven choice).

        Drafts that end up as one HWCN arc (same word between the same slot
        boundaries, with shadow nodes folded onto their boundary) are bounded
        as a group: a merged arc scores at most the best acoustic of the group
        plus the best transitional score, so both together stay below the
        winners' total.
        """
        scale = self.cfg.acoustic_scale
        total = lambda d: scale * d.acoustic + d.trans
        winners = {d.slots[0]: d for d in drafts if d.is_winner}

        groups: Dict[Tuple[int, int, Optional[int]], List[_Draft]] = {}
        for draft in drafts:
            if draft.is_winner:
                continue
            key = (anchor.get(draft.start, draft.start), anchor.get(draft.end, draft.end), draft.word)
            groups.setdefault(key, []).append(draft)

        for members in groups.values():
            bound = sum(total(winners[s]) for s in members[0].slots)
            margin = float(self.rng.uniform(0.1, 1.0))
            ceiling = bound - margin - scale * max(d.acoustic for d in members)
            for draft in members:
                draft.trans = min(draft.trans, ceiling)

    def oracle_probability(self, winners: List[_Draft]) -> Tuple[float, float]:
        """Expected and realized share of correct words on the MAP path."""
        spoken = [w for w in winners if w.word is not None]
        if not spoken:
            return 0.0, 0.0
        prior = self.profile.correct_prior
        if prior >= 1.0:
            probs = [1.0] * len(spoken)
        elif prior <= 0.0:
            probs = [0.0] * len(spoken)
        else:
            # log N(q; +sep/2, 1) - log N(q; -sep/2, 1) = sep * q
            log_odds = [
                self.profile.acoustic_separation * w.quality + math.log(prior / (1.0 - prior))
                for w in spoken
            ]
            probs = expit(np.asarray(log_odds)).tolist()
        realized = sum(1.0 for w in spoken if w.correct) / len(spoken)
        return float(np.mean(probs)), realized


def generate_corpus(cfg: SimConfig) -> SimCorpus:
    """References plus one lattice set per recognizer profile; fully determined by cfg.seed."""
    cfg.validate()
    vocab = make_vocabulary(cfg.vocabulary_size, cfg.seed)
    ref_rng = np.random.default_rng([cfg.seed, 1])

    references: Dict[str, List[str]] = {}
    reference_ids: Dict[str, List[int]] = {}
    width = max(5, len(str(cfg.utterance_count)))
    for u in range(cfg.utterance_count):
        utt = f"utt{u:0{width}d}"
        n = int(ref_rng.integers(cfg.min_words, cfg.max_words + 1))
        ids = [int(i) for i in ref_rng.integers(0, len(vocab), size=n)]
        reference_ids[utt] = ids
        references[utt] = [vocab[i][0] for i in ids]

    recognizers = []
    for r, profile in enumerate(cfg.profiles):
        lattices, oracle, realized, hypotheses = {}, {}, {}, {}
        for u, utt in enumerate(sorted(references)):
            rng = np.random.default_rng([cfg.seed, 2, r, u])
            builder = _UtteranceBuilder(cfg, profile, vocab, rng)
            lattice, winners = builder.build(utt, reference_ids[utt])
            lattices[utt] = lattice
            oracle[utt], realized[utt] = builder.oracle_probability(winners)
            hypotheses[utt] = [vocab[w.word][0] for w in winners if w.word is not None]
        recognizers.append(RecognizerCorpus(profile, lattices, oracle, realized, hypotheses))
        logger.info(
            "%s: %d lattices, mean oracle word accuracy %.3f",
            profile.name, len(lattices), float(np.mean(list(oracle.values()))),
        )
    return SimCorpus(config=cfg, references=references, recognizers=recognizers)
