"""
Run directories and manifests.
"""
import hashlib
import json
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import structlog

from shared import __version__
from shared.types import FileDigest, RunManifest


logger = structlog.get_logger()

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


def run_directory(root: Union[str, Path], command: str, options: Dict[str, Any]) -> Path:
    """
    Create ``<root>/<UTC timestamp>-<hash>`` where the hash covers the command and options.
    """
    payload = json.dumps({"command": command, "options": _jsonable(options)}, sort_keys=True)
    tag = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:8]
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = Path(root) / f"{stamp}-{tag}"
    path.mkdir(parents=True, exist_ok=True)
    return path


class RunRecorder:
    """
    Collects inputs, outputs and phase timings of one command, then writes the manifest.
    """

    def __init__(self, command: str, config: Dict[str, Any], seed: Optional[int] = None):
        self.manifest = RunManifest(
            command=command,
            config=_jsonable(config),
            version=__version__,
            seed=seed,
        )

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        """Time a block; repeated phases accumulate."""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.manifest.timings[name] = self.manifest.timings.get(name, 0.0) + elapsed

    def add_input(self, path: Union[str, Path]) -> None:
        self.manifest.inputs.append(FileDigest(path=str(path), sha256=sha256_file(path)))

    def add_output(self, path: Union[str, Path]) -> None:
        self.manifest.outputs.append(FileDigest(path=str(path), sha256=sha256_file(path)))

    def write(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(self.manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("Wrote run manifest", path=str(path), inputs=len(self.manifest.inputs),
                    outputs=len(self.manifest.outputs))
        return path
