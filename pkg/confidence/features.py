# confidence/features.py
# Thiqa - Per-arc confidence features

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np

from lattice.config import EMBEDDING_DIM, FEATURE_DIM, SCALAR_FEATURES
from lattice.hwcn import Hwcn, HwcnArc

SCALAR_NAMES = [
    "is_silence",
    "phone_count",
    "trans_logp",
    "acoustic_logp",
    "log_posterior",
    "frame_count",
    "on_onebest",
]


@dataclass(frozen=True)
class ArcFeatures:
    arc_id: int
    word_embedding: np.ndarray  # EMBEDDING_DIM values in [-1, 1]
    is_silence: int
    phone_count: int
    trans_logp: float
    acoustic_logp: float
    log_posterior: float
    frame_count: int
    on_onebest: int

    @property
    def scalars(self) -> np.ndarray:
        return np.array(
            [
                self.is_silence,
                self.phone_count,
                self.trans_logp,
                self.acoustic_logp,
                self.log_posterior,
                self.frame_count,
                self.on_onebest,
            ],
            dtype=np.float64,
        )

    def vector(self) -> np.ndarray:
        return np.concatenate([self.word_embedding, self.scalars])


@lru_cache(maxsize=65536)
def _embedding(word: str) -> bytes:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    return rng.uniform(-1.0, 1.0, size=EMBEDDING_DIM).tobytes()


def word_embedding(word: str) -> np.ndarray:
    """Hashed stand-in for a pretrained embedding: same word, same vector, everywhere."""
    return np.frombuffer(_embedding(word), dtype=np.float64).copy()


def phone_count(arc: HwcnArc) -> int:
    if arc.is_silence:
        return 0
    if arc.pronunciation:
        return len(arc.pronunciation.split("_"))
    return len(arc.word)


def extract_features(h: Hwcn) -> List[ArcFeatures]:
    """Features for every arc, in arc-id order."""
    onebest = set(h.onebest_arc_ids)
    return [
        ArcFeatures(
            arc_id=arc.id,
            word_embedding=word_embedding(arc.word),
            is_silence=int(arc.is_silence),
            phone_count=phone_count(arc),
            trans_logp=arc.merged_trans_logp,
            acoustic_logp=arc.merged_acoustic_logp,
            log_posterior=arc.merged_log_posterior,
            frame_count=h.arc_frames(arc),
            on_onebest=int(arc.id in onebest),
        )
        for arc in h.arcs
    ]


@dataclass
class Standardizer:
    """Z-score for the scalar features, fit on the training corpus."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls) -> "Standardizer":
        return cls(mean=np.zeros(SCALAR_FEATURES), std=np.ones(SCALAR_FEATURES))

    @classmethod
    def fit(cls, corpus: Sequence[Hwcn]) -> "Standardizer":
        rows = [f.scalars for h in corpus for f in extract_features(h)]
        if not rows:
            return cls.identity()
        table = np.vstack(rows)
        std = table.std(axis=0)
        std[std == 0] = 1.0
        return cls(mean=table.mean(axis=0), std=std)

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        out = matrix.copy()
        out[:, EMBEDDING_DIM:] = (out[:, EMBEDDING_DIM:] - self.mean) / self.std
        return out


def feature_matrix(h: Hwcn, standardizer: Optional[Standardizer] = None) -> np.ndarray:
    """(n_arcs, FEATURE_DIM) matrix, rows in arc-id order."""
    feats = extract_features(h)
    if not feats:
        return np.zeros((0, FEATURE_DIM))
    matrix = np.vstack([f.vector() for f in feats])
    return standardizer.apply(matrix) if standardizer is not None else matrix
