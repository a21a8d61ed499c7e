# cli/io.py
# Thiqa - Corpus directories, lattice/HWCN files, decode and score TSVs
#
# Corpus layout written by `gen`:
#   <out>/config.cfg                  resolved simulation config
#   <out>/refs.tsv                    utterance_id \t words
#   <out>/splits.tsv                  utterance_id \t train|dev|eval
#   <out>/<recognizer>/lattices/*.lat one lattice per utterance
#   <out>/<recognizer>/oracle.tsv     utterance_id \t expected \t realized

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import pandas as pd

from evaluation.metrics import SCORE_COLUMNS
from lattice.config import SCORES_FORMAT
from lattice.core import Lattice, format_references, parse_lattice, read_references, serialize_lattice
from lattice.decoder import DecodeResult, format_decode_line, read_decode_file
from lattice.errors import ContractError, FormatError
from lattice.hwcn import Hwcn, parse_hwcn, serialize_hwcn
from lattice.simgen import SimCorpus, format_sim_config, split_of

logger = logging.getLogger(__name__)

LATTICE_SUFFIX = ".lat"
HWCN_SUFFIX = ".hwcn"


def write_text(path, text: str) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return str(path)


def read_text(path) -> str:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return f.read()


# ---------------------------------------------------------------------------
# Lattice / HWCN directories
# ---------------------------------------------------------------------------

def _files(directory, suffix: str) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ContractError(f"not a directory: {directory}")
    files = sorted(directory.glob(f"*{suffix}"))
    if not files:
        raise ContractError(f"no *{suffix} files in {directory}")
    return files


def lattice_paths(directory) -> List[Path]:
    return _files(directory, LATTICE_SUFFIX)


def hwcn_paths_in(directory) -> List[Path]:
    return _files(directory, HWCN_SUFFIX)


def load_lattice(path) -> Lattice:
    return parse_lattice(read_text(path))


def load_hwcn(path) -> Hwcn:
    return parse_hwcn(read_text(path))


def read_lattices(directory) -> Dict[str, Lattice]:
    out = {}
    for path in lattice_paths(directory):
        lattice = load_lattice(path)
        out[lattice.utterance_id] = lattice
    return out


def read_hwcns(directory) -> Dict[str, Hwcn]:
    out = {}
    for path in hwcn_paths_in(directory):
        h = load_hwcn(path)
        out[h.utterance_id] = h
    return out


def write_lattices(directory, lattices: Iterable[Lattice]) -> int:
    n = 0
    for lattice in lattices:
        write_text(Path(directory) / f"{lattice.utterance_id}{LATTICE_SUFFIX}", serialize_lattice(lattice))
        n += 1
    return n


def write_hwcns(directory, hwcns: Iterable[Hwcn]) -> int:
    n = 0
    for h in hwcns:
        write_text(Path(directory) / f"{h.utterance_id}{HWCN_SUFFIX}", serialize_hwcn(h))
        n += 1
    return n


# ---------------------------------------------------------------------------
# References, splits, oracle tables
# ---------------------------------------------------------------------------

def load_references(path) -> Dict[str, List[str]]:
    return read_references(read_text(path))


def write_splits(path, utterance_ids: Iterable[str]) -> str:
    return write_text(path, "".join(f"{u}\t{split_of(u)}\n" for u in sorted(utterance_ids)))


def select_split(items: Dict[str, object], split: str) -> Dict[str, object]:
    """Keep the utterances of one split (by id hash); `all` keeps everything."""
    if split == "all":
        return dict(items)
    return {u: v for u, v in items.items() if split_of(u) == split}


def write_oracle(path, expected: Dict[str, float], realized: Dict[str, float]) -> str:
    frame = pd.DataFrame(
        {"utterance_id": sorted(expected),
         "expected": [expected[u] for u in sorted(expected)],
         "realized": [realized[u] for u in sorted(expected)]}
    )
    return write_text(path, frame.to_csv(sep="\t", index=False, float_format="%.9f", lineterminator="\n"))


def load_oracle(path) -> Tuple[Dict[str, float], Dict[str, float]]:
    frame = pd.read_csv(path, sep="\t", dtype={"utterance_id": str})
    missing = {"utterance_id", "expected", "realized"} - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    ids = frame["utterance_id"].tolist()
    return (dict(zip(ids, frame["expected"].astype(float))),
            dict(zip(ids, frame["realized"].astype(float))))


def write_corpus(corpus: SimCorpus, out_dir) -> Dict[str, str]:
    """Lay a generated corpus out on disk; returns the written paths by role."""
    out_dir = Path(out_dir)
    written = {
        "config": write_text(out_dir / "config.cfg", format_sim_config(corpus.config)),
        "refs": write_text(out_dir / "refs.tsv", format_references(corpus.references)),
        "splits": write_splits(out_dir / "splits.tsv", corpus.references),
    }
    for rec in corpus.recognizers:
        name = rec.profile.name
        n = write_lattices(out_dir / name / "lattices", (rec.lattices[u] for u in sorted(rec.lattices)))
        written[f"{name}/oracle"] = write_oracle(out_dir / name / "oracle.tsv", rec.oracle, rec.correct_fraction)
        logger.info("%s: wrote %d lattices", name, n)
    return written


# ---------------------------------------------------------------------------
# Decode and score files
# ---------------------------------------------------------------------------

def write_decode_file(path, results: Iterable[DecodeResult]) -> str:
    ordered = sorted(results, key=lambda r: r.utterance_id)
    return write_text(path, "".join(format_decode_line(r) + "\n" for r in ordered))


def load_decode_file(path) -> Dict[str, DecodeResult]:
    return read_decode_file(read_text(path))


def write_scores(path, frame: pd.DataFrame) -> str:
    body = frame[SCORE_COLUMNS].to_csv(sep="\t", index=False, float_format="%.9f", lineterminator="\n")
    return write_text(path, f"# {SCORES_FORMAT}\n{body}")


def load_scores(path) -> pd.DataFrame:
    text = read_text(path)
    header, _, _ = text.partition("\n")
    if header != f"# {SCORES_FORMAT}":
        raise FormatError(f"{path}: not a score file (expected header '# {SCORES_FORMAT}')")
    frame = pd.read_csv(path, sep="\t", skiprows=1, dtype={"utterance_id": str})
    missing = set(SCORE_COLUMNS) - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    if frame["score"].isna().any() or frame["label"].isna().any():
        raise FormatError(f"{path}: score file has empty scores or labels")
    return frame


def score_pairs(frame: pd.DataFrame) -> List[Tuple[float, int]]:
    return list(zip(frame["score"].astype(float).tolist(), frame["label"].astype(int).tolist()))
