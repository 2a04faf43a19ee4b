"""
Binary checkpoint container for trained models

Layout: b"CLDC", uint32 LE format version, uint32 LE header length, UTF-8 JSON
header, then every array as little-endian float32 in header order.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..core.models import (
    ClaDecModel,
    Encoder,
    ExplanationModel,
    LayerTap,
    RefAEModel,
    build_decoder,
    build_encoder,
)
from .errors import ArtifactIOError, CheckpointFormatError, MissingCheckpointError
from .logger import default_logger

MAGIC = b"CLDC"
FORMAT_VERSION = 1
_ARRAY_DTYPE = np.dtype("<f4")

logger = default_logger


@dataclass
class Checkpoint:
    kind: str
    spec: Dict[str, Any]
    arrays: "OrderedDict[str, np.ndarray]"
    seed: int = 0
    tap: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = {
        "kind": checkpoint.kind,
        "spec": checkpoint.spec,
        "tap": checkpoint.tap,
        "seed": checkpoint.seed,
        "metadata": checkpoint.metadata,
        "arrays": [[name, list(array.shape)] for name, array in checkpoint.arrays.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks: List[bytes] = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header_bytes)), header_bytes]
    for array in checkpoint.arrays.values():
        chunks.append(np.ascontiguousarray(array, dtype=_ARRAY_DTYPE).tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Checkpoint:
    if payload[:4] != MAGIC:
        raise CheckpointFormatError(f"{source}: not a checkpoint (magic {payload[:4]!r})")
    if len(payload) < 12:
        raise CheckpointFormatError(f"{source}: truncated header")
    version, header_len = struct.unpack("<II", payload[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(payload[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{source}: unreadable header: {e}")

    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 12 + header_len
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _ARRAY_DTYPE.itemsize
        if end > len(payload):
            raise CheckpointFormatError(f"{source}: array {name} runs past end of file")
        arrays[name] = np.frombuffer(payload[offset:end], dtype=_ARRAY_DTYPE).reshape(shape).copy()
        offset = end
    if offset != len(payload):
        raise CheckpointFormatError(f"{source}: {len(payload) - offset} trailing bytes")

    return Checkpoint(
        kind=header["kind"], spec=header["spec"], arrays=arrays, seed=header["seed"],
        tap=header.get("tap"), metadata=header.get("metadata", {}), version=version,
    )


def write_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(checkpoint))
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise ArtifactIOError(f"Failed to write checkpoint {path}: {e}")
    logger.info(f"Wrote {checkpoint.kind} checkpoint {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Failed to read checkpoint {path}: {e}")
    return decode_checkpoint(payload, str(path))


def save_classifier(classifier: Encoder, path: Union[str, Path], seed: int = 0,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    checkpoint = Checkpoint(kind="classifier", spec=classifier.spec(), arrays=classifier.state_dict(),
                            seed=seed, tap=classifier.tap_limit.name, metadata=metadata or {})
    return write_checkpoint(checkpoint, path)


def load_classifier(path: Union[str, Path]) -> Encoder:
    checkpoint = read_checkpoint(path)
    if checkpoint.kind != "classifier":
        raise CheckpointFormatError(f"{path}: expected a classifier checkpoint, found {checkpoint.kind}")
    spec = checkpoint.spec
    classifier = build_encoder(spec["n_classes"], spec["width_multiplier"], tap=spec.get("tap_limit"))
    classifier.load_state_dict(checkpoint.arrays)
    return classifier


def save_model(model: ExplanationModel, path: Union[str, Path], seed: int = 0,
               metadata: Optional[Dict[str, Any]] = None) -> Path:
    spec = {"encoder": model.encoder.spec(), "decoder": model.decoder.spec()}
    checkpoint = Checkpoint(kind=model.kind, spec=spec, arrays=model.state_dict(), seed=seed,
                            tap=model.tap.name, metadata=metadata or {})
    return write_checkpoint(checkpoint, path)


def load_model(path: Union[str, Path]) -> ExplanationModel:
    """Rebuild a ClaDec or reference autoencoder model from its checkpoint"""
    checkpoint = read_checkpoint(path)
    if checkpoint.kind not in ("cladec", "refae"):
        raise CheckpointFormatError(f"{path}: expected a cladec/refae checkpoint, found {checkpoint.kind}")
    enc, dec = checkpoint.spec["encoder"], checkpoint.spec["decoder"]
    encoder = build_encoder(enc["n_classes"], enc["width_multiplier"], tap=enc.get("tap_limit"))
    decoder = build_decoder(LayerTap.parse(dec["tap"]), dec["n_classes"], dec["width_multiplier"],
                            latent_z=dec.get("latent_z"))
    model: ExplanationModel
    if checkpoint.kind == "cladec":
        model = ClaDecModel(encoder, decoder)
    else:
        model = RefAEModel(encoder, decoder)
    model.load_state_dict(checkpoint.arrays)
    return model
