"""
HPKW weight checkpoint files

Layout (little-endian): magic ``HPKW``, u32 format version, then records
until end of file. A record is a u16 name length, the UTF-8 name, a u32
rank, ``rank`` u32 dims and the float32 payload.

Metadata counters are stored as little-endian base 2**16 digits so that
every digit is exact in float32.
"""
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from exceptions import ConfigurationError

VELOCITY_PREFIX = 'velocity.'
META_PREFIX = 'meta.'
COUNTER_DIGIT_BITS = 16
COUNTER_DIGITS = 4


def encode_records(arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays as HPKW records (header excluded)"""
    chunks = []
    for name, array in arrays.items():
        encoded = name.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise ConfigurationError(f"Record name too long: {name[:40]}...")
        array = np.asarray(array, dtype='<f4')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<I', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b''.join(chunks)


def encode_counter(value: int) -> np.ndarray:
    """Non-negative integer below 2**64 as float32 digits"""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(f"Checkpoint metadata must be an integer, got {value!r}")
    value = int(value)
    if not 0 <= value < 1 << (COUNTER_DIGIT_BITS * COUNTER_DIGITS):
        raise ConfigurationError(f"Checkpoint metadata out of range: {value}")
    mask = (1 << COUNTER_DIGIT_BITS) - 1
    return np.array(
        [(value >> (COUNTER_DIGIT_BITS * i)) & mask for i in range(COUNTER_DIGITS)], dtype=np.float32
    )


def decode_counter(digits: np.ndarray) -> int:
    return sum(int(d) << (COUNTER_DIGIT_BITS * i) for i, d in enumerate(digits.reshape(-1)))


def decode_records(payload: bytes, source: str = '<bytes>') -> Dict[str, np.ndarray]:
    """Parse HPKW records back into named float32 arrays"""
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    try:
        while offset < len(payload):
            (name_len,) = struct.unpack_from('<H', payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<I', payload, offset)
            offset += 4
            dims = struct.unpack_from(f'<{rank}I', payload, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if offset + 4 * count > len(payload):
                raise ConfigurationError(f"{source}: truncated payload for record {name!r}")
            data = np.frombuffer(payload, dtype='<f4', count=count, offset=offset)
            offset += 4 * count
            arrays[name] = data.reshape(dims).astype(np.float32)
    except (struct.error, UnicodeDecodeError) as e:
        raise ConfigurationError(f"{source}: corrupt record at byte {offset}: {e}")
    return arrays


@dataclass
class Checkpoint:
    """Network weights plus optional optimizer velocity and integer metadata"""

    params: Dict[str, np.ndarray]
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, int] = field(default_factory=dict)


def save_checkpoint(
    path: str,
    params: Mapping[str, np.ndarray],
    velocity: Optional[Mapping[str, np.ndarray]] = None,
    meta: Optional[Mapping[str, int]] = None,
):
    """
    Write a checkpoint file

    Args:
        path: Output path
        params: Network parameters in network order
        velocity: Optimizer velocity buffers (for resuming)
        meta: Integer counters such as step_count and epoch
    """
    records: Dict[str, np.ndarray] = dict(params)
    for name, value in (velocity or {}).items():
        records[VELOCITY_PREFIX + name] = value
    for name, value in (meta or {}).items():
        records[META_PREFIX + name] = encode_counter(value)

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', CHECKPOINT_VERSION))
        f.write(encode_records(records))


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint file written by save_checkpoint"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, 'rb') as f:
        payload = f.read()
    if payload[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not an HPKW checkpoint")
    if len(payload) < 8:
        raise ConfigurationError(f"{path}: truncated header")
    (version,) = struct.unpack_from('<I', payload, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")

    checkpoint = Checkpoint(params={})
    for name, array in decode_records(payload[8:], source=path).items():
        if name.startswith(VELOCITY_PREFIX):
            checkpoint.velocity[name[len(VELOCITY_PREFIX):]] = array
        elif name.startswith(META_PREFIX):
            checkpoint.meta[name[len(META_PREFIX):]] = decode_counter(array)
        else:
            checkpoint.params[name] = array
    return checkpoint
