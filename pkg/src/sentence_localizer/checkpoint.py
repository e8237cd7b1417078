"""
Checkpoint module: binary parameter snapshots with a JSON header

Layout:
    magic line, 'version 1' line, 'header-bytes N' line,
    N bytes of JSON header (tensor table, TrainConfig, dims, epoch, history, payload hash),
    little-endian float32 payload in header order.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import xxhash
from pydantic import ValidationError

from sentence_localizer.config_loader import TrainConfig, Variant
from sentence_localizer.model import ModelDims, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"SENTLOC-CHECKPOINT\n"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype('<f4')


class CheckpointError(Exception):
    """Raised when a checkpoint cannot be written, read or bound to a model"""
    pass


@dataclass
class Checkpoint:
    """Named float32 parameters plus the configuration that produced them"""
    parameters: Dict[str, np.ndarray]
    config: TrainConfig
    dims: ModelDims
    epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        self.parameters = {name: np.ascontiguousarray(value, dtype=np.float32)
                           for name, value in self.parameters.items()}

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def require_variant(self, variant: Variant) -> None:
        """
        Raises:
            CheckpointError: If the checkpoint was trained for another variant
        """
        if Variant(variant) is not self.variant:
            raise CheckpointError(f"Checkpoint holds variant '{self.variant.value}', "
                                  f"expected '{Variant(variant).value}'")


def _write_bytes_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    """Serialise a checkpoint; the file appears only once fully written"""
    path = Path(path)
    tensors = []
    chunks = []
    offset = 0
    for name, value in checkpoint.parameters.items():
        data = value.astype(PAYLOAD_DTYPE).tobytes()
        tensors.append({'name': name, 'shape': list(value.shape), 'offset': offset, 'nbytes': len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b''.join(chunks)

    header = {
        'tensors': tensors,
        'config': checkpoint.config.model_dump(mode='json'),
        'dims': {'vocab_size': checkpoint.dims.vocab_size, 'feature_dim': checkpoint.dims.feature_dim,
                 'clip_count': checkpoint.dims.clip_count},
        'epoch': checkpoint.epoch,
        'history': checkpoint.history,
        'payload_bytes': len(payload),
        'payload_xxh64': xxhash.xxh64(payload).hexdigest()
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    preamble = MAGIC + f"version {FORMAT_VERSION}\nheader-bytes {len(header_bytes)}\n".encode('ascii')
    _write_bytes_atomic(path, preamble + header_bytes + payload)
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors, epoch {checkpoint.epoch})")
    return path


def _read_line(data: bytes, position: int) -> Tuple[str, int]:
    end = data.find(b"\n", position)
    if end < 0:
        raise CheckpointError("Truncated checkpoint preamble")
    return data[position:end].decode('ascii', errors='replace'), end + 1


def _parse_header(data: bytes) -> Tuple[Dict[str, Any], bytes]:
    if not data.startswith(MAGIC):
        raise CheckpointError("Not a checkpoint file (bad magic)")
    version_line, position = _read_line(data, len(MAGIC))
    if version_line != f"version {FORMAT_VERSION}":
        raise CheckpointError(f"Unsupported checkpoint version line '{version_line}'")
    size_line, position = _read_line(data, position)
    if not size_line.startswith('header-bytes '):
        raise CheckpointError(f"Corrupt header size line '{size_line}'")
    try:
        header_size = int(size_line.split(' ', 1)[1])
    except ValueError:
        raise CheckpointError(f"Corrupt header size line '{size_line}'")
    if header_size < 0 or position + header_size > len(data):
        raise CheckpointError("Truncated checkpoint header")
    try:
        header = json.loads(data[position:position + header_size].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}")
    if not isinstance(header, dict):
        raise CheckpointError("Corrupt checkpoint header: not an object")
    return header, data[position + header_size:]


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read and fully validate a checkpoint before building any parameter

    Raises:
        FileNotFoundError: If path does not exist
        CheckpointError: On a corrupt header, shape mismatch, hash mismatch or truncation
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    header, payload = _parse_header(path.read_bytes())

    for key in ('tensors', 'config', 'dims', 'payload_bytes', 'payload_xxh64'):
        if key not in header:
            raise CheckpointError(f"Checkpoint header is missing '{key}'")
    if len(payload) != header['payload_bytes']:
        raise CheckpointError(f"Truncated payload: {len(payload)} of {header['payload_bytes']} bytes")
    if xxhash.xxh64(payload).hexdigest() != header['payload_xxh64']:
        raise CheckpointError("Payload hash mismatch")

    try:
        config = TrainConfig.model_validate(header['config'])
        dims = ModelDims(**header['dims'])
    except (ValidationError, TypeError) as e:
        raise CheckpointError(f"Invalid configuration in checkpoint header: {e}")

    expected = parameter_shapes(config, dims)
    seen = set()
    offset = 0
    for entry in header['tensors']:
        name, shape = entry.get('name'), tuple(entry.get('shape', ()))
        if name not in expected:
            raise CheckpointError(f"Unexpected tensor '{name}' for variant {config.variant.value}")
        if shape != expected[name]:
            raise CheckpointError(f"Tensor '{name}' has shape {list(shape)}, expected {list(expected[name])}")
        nbytes = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
        if entry.get('offset') != offset or entry.get('nbytes') != nbytes:
            raise CheckpointError(f"Tensor '{name}' has an inconsistent offset or size")
        seen.add(name)
        offset += nbytes
    missing = sorted(set(expected) - seen)
    if missing:
        raise CheckpointError(f"Checkpoint is missing tensors {missing}")
    if offset != len(payload):
        raise CheckpointError(f"Tensor table covers {offset} bytes, payload has {len(payload)}")

    parameters = {}
    for entry in header['tensors']:
        raw = payload[entry['offset']:entry['offset'] + entry['nbytes']]
        parameters[entry['name']] = np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(entry['shape']).astype(np.float32)

    logger.debug(f"Loaded checkpoint {path}: variant {config.variant.value}, epoch {header.get('epoch', 0)}")
    return Checkpoint(parameters=parameters, config=config, dims=dims,
                      epoch=int(header.get('epoch', 0)), history=list(header.get('history', [])))


def read_header(path: Path) -> Dict[str, Any]:
    """Header of a checkpoint without validating the payload"""
    header, _ = _parse_header(Path(path).read_bytes())
    return header
