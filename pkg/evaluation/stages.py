# evaluation/stages.py
# Thiqa - Per-utterance pipeline stages and the worker pool that runs them

import logging
import os
from functools import partial
from multiprocessing import Pool
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from confidence.model import ConfidenceModel, score_arcs
from lattice.config import ACOUSTIC_SCALE, TOLERANCE_FRAMES
from lattice.core import Lattice
from lattice.decoder import DecodeResult, decode_max_mean, map_onebest
from lattice.errors import ContractError
from lattice.hwcn import Hwcn, build_hwcn, label_arcs
from lattice.posterior import forward_backward

logger = logging.getLogger(__name__)

DECODE_MODES = ["map", "maxmean"]


def worker_count(requested: int = 0) -> int:
    return requested if requested > 0 else (os.cpu_count() or 1)


def parallel_map(func: Callable, items: Sequence, workers: int = 1, **kwargs) -> List:
    """Map over items with a process pool; results keep the input order."""
    task = partial(func, **kwargs) if kwargs else func
    if workers <= 1 or len(items) <= 1:
        return [task(item) for item in items]
    with Pool(processes=min(workers, len(items))) as pool:
        return pool.map(task, items, chunksize=max(1, len(items) // (4 * workers)))


# ---------------------------------------------------------------------------
# Single-utterance steps (top level so the pool can pickle them)
# ---------------------------------------------------------------------------

def lattice_to_hwcn(
    item: Tuple[Lattice, Optional[Sequence[str]]],
    tolerance_frames: int = TOLERANCE_FRAMES,
    acoustic_scale: float = ACOUSTIC_SCALE,
) -> Hwcn:
    """Posteriors, merge, and labels when a reference is given."""
    lattice, reference = item
    h = build_hwcn(forward_backward(lattice, acoustic_scale), tolerance_frames)
    return label_arcs(h, reference) if reference is not None else h


def score_one(h: Hwcn, model: ConfidenceModel) -> Hwcn:
    return score_arcs(model, h)


def decode_one(h: Hwcn, mode: str = "maxmean", acoustic_scale: float = ACOUSTIC_SCALE) -> DecodeResult:
    if mode == "map":
        return map_onebest(h, acoustic_scale)
    if mode == "maxmean":
        return decode_max_mean(h)
    raise ContractError(f"decode mode must be one of {DECODE_MODES}, got {mode!r}")


# ---------------------------------------------------------------------------
# Corpus-level wrappers, keyed and ordered by utterance id
# ---------------------------------------------------------------------------

def build_hwcns(
    lattices: Dict[str, Lattice],
    refs: Optional[Dict[str, Sequence[str]]] = None,
    tolerance_frames: int = TOLERANCE_FRAMES,
    acoustic_scale: float = ACOUSTIC_SCALE,
    workers: int = 1,
) -> Dict[str, Hwcn]:
    ids = sorted(lattices)
    if refs is not None:
        missing = [u for u in ids if u not in refs]
        if missing:
            raise ContractError(f"no reference for {missing[:5]}")
    items = [(lattices[u], refs[u] if refs is not None else None) for u in ids]
    built = parallel_map(
        lattice_to_hwcn, items, workers,
        tolerance_frames=tolerance_frames, acoustic_scale=acoustic_scale,
    )
    merged = sum(len(lattices[u].arcs) - len(h.arcs) for u, h in zip(ids, built))
    logger.info("built %d HWCNs (%d arcs merged away)", len(built), merged)
    return dict(zip(ids, built))


def score_hwcns(model: ConfidenceModel, hwcns: Dict[str, Hwcn], workers: int = 1) -> Dict[str, Hwcn]:
    ids = sorted(hwcns)
    return dict(zip(ids, parallel_map(score_one, [hwcns[u] for u in ids], workers, model=model)))


def decode_hwcns(
    hwcns: Dict[str, Hwcn],
    mode: str = "maxmean",
    acoustic_scale: float = ACOUSTIC_SCALE,
    workers: int = 1,
) -> Dict[str, DecodeResult]:
    if mode not in DECODE_MODES:
        raise ContractError(f"decode mode must be one of {DECODE_MODES}, got {mode!r}")
    ids = sorted(hwcns)
    results = parallel_map(decode_one, [hwcns[u] for u in ids], workers, mode=mode, acoustic_scale=acoustic_scale)
    return dict(zip(ids, results))
