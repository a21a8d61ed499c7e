# cli/manifest.py
# Thiqa - Run manifests written beside every output

import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from lattice.config import FORMAT_VERSIONS, TOOL_NAME, TOOL_VERSION, current_defaults

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_FIELDS = ("started_at", "wall_clock_seconds")


@dataclass
class RunManifest:
    """Everything needed to rerun a subcommand and get the same outputs."""
    subcommand: str
    argv: List[str]
    flags: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    tool: str = TOOL_NAME
    tool_version: str = TOOL_VERSION
    format_versions: Dict[str, str] = field(default_factory=lambda: dict(FORMAT_VERSIONS))
    defaults: Dict[str, Any] = field(default_factory=current_defaults)
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    wall_clock_seconds: float = 0.0
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    @classmethod
    def start(cls, subcommand: str, flags: Dict[str, Any], argv: Optional[List[str]] = None) -> "RunManifest":
        clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items() if k != "func"}
        return cls(
            subcommand=subcommand,
            argv=list(sys.argv[1:] if argv is None else argv),
            flags=clean,
            seed=clean.get("seed"),
        )

    def finish(self) -> None:
        self.wall_clock_seconds = round(time.perf_counter() - self._t0, 3)

    def to_dict(self) -> Dict[str, Any]:
        """Wall-clock fields sit under "timing"; everything else repeats across reruns."""
        data = asdict(self)
        data.pop("_t0", None)
        data["timing"] = {key: data.pop(key) for key in TIMING_FIELDS}
        return data

    def save(self, path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        logger.debug("manifest written to %s", path)
        return str(path)


def manifest_path_for(output) -> Path:
    """<dir>/manifest.json for a directory output, <file>.manifest.json otherwise."""
    output = Path(output)
    if output.is_dir():
        return output / MANIFEST_NAME
    return output.with_name(output.name + ".manifest.json")


def load_manifest(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
