"""
Run manifests: what a command read, how it was configured and what it wrote
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from ..data.schemas import RunManifest
from .errors import ArtifactIOError
from .logger import default_logger

MANIFEST_NAME = "manifest.json"

logger = default_logger


def git_blob_sha1(payload: bytes) -> str:
    """Content hash in git's blob format: sha1(b"blob <len>\\0" + payload)"""
    digest = hashlib.sha1()
    digest.update(f"blob {len(payload)}\0".encode("ascii"))
    digest.update(payload)
    return digest.hexdigest()


def hash_file(path: Union[str, Path]) -> str:
    try:
        return git_blob_sha1(Path(path).read_bytes())
    except OSError as e:
        raise ArtifactIOError(f"Cannot hash {path}: {e}")


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return git_blob_sha1(canonical.encode("utf-8"))


def build_manifest(command: str, seed: int, config: Dict[str, Any], inputs: Iterable[Union[str, Path]] = (),
                   artifacts: Iterable[Union[str, Path]] = (), timings: Optional[Dict[str, float]] = None) -> RunManifest:
    input_hashes = {}
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            for child in sorted(p for p in path.rglob("*") if p.is_file()):
                input_hashes[str(child)] = hash_file(child)
        elif path.exists():
            input_hashes[str(path)] = hash_file(path)
    return RunManifest(
        command=command,
        seed=seed,
        config=config,
        config_hash=config_hash(config),
        input_hashes=input_hashes,
        artifacts=sorted(str(Path(a)) for a in artifacts),
        timings=dict(timings or {}),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def write_manifest(manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write manifest {path}: {e}")
        raise ArtifactIOError(f"Cannot write {path}: {e}")
    logger.info(f"Run manifest written to {path}")
    return path


def read_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactIOError(f"Cannot read manifest {path}: {e}")
