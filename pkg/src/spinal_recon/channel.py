"""Correlated Gaussian raw data and the difference algebra of the virtual channel.

Sampling uses numpy's Philox counter-based bit generator with the ziggurat
normal transform (``Generator.standard_normal``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RAW_MAGIC = b"CVRW"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sHQddQ")


@dataclass(frozen=True)
class RawDataBlock:
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    v_a: float
    v_z: float
    seed: int

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have equal length")


def generate_correlated(count: int, v_a: float, snr: float, seed: int) -> RawDataBlock:
    """Draw x ~ N(0, v_a) and y = x + z with z ~ N(0, v_a/snr)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not v_a > 0 or not snr > 0:
        raise ValueError("v_a and snr must be positive")
    v_z = v_a / snr
    gen = np.random.Generator(np.random.Philox(seed))
    x = gen.standard_normal(count) * np.sqrt(v_a)
    z = gen.standard_normal(count) * np.sqrt(v_z)
    return RawDataBlock(x=x, y=x + z, v_a=v_a, v_z=v_z, seed=seed)


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: length mismatch {a.shape} vs {b.shape}")
    return a, b


def compute_differences(y, symbols) -> np.ndarray:
    """Delta = y - c, element by element."""
    y, c = _pair(y, symbols, "compute_differences")
    return y - c


def recover_side_info(x, delta) -> np.ndarray:
    """c' = x - Delta, which equals c - z for y = x + z."""
    x, d = _pair(x, delta, "recover_side_info")
    return x - d


def write_raw_block(path, block: RawDataBlock) -> None:
    """Dump a block as header + x array + y array, all little-endian."""
    header = _RAW_HEADER.pack(
        RAW_MAGIC, RAW_VERSION, len(block.x), block.v_a, block.v_z, block.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(block.x, dtype="<f8").tobytes())
        fh.write(np.asarray(block.y, dtype="<f8").tobytes())


def read_raw_block(path) -> RawDataBlock:
    data = Path(path).read_bytes()
    if len(data) < _RAW_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, count, v_a, v_z, seed = _RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC or version != RAW_VERSION:
        raise ValueError(f"{path}: not a raw-data dump (magic={magic!r}, version={version})")
    body = data[_RAW_HEADER.size:]
    if len(body) != 16 * count:
        raise ValueError(f"{path}: expected {16 * count} payload bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f8")
    return RawDataBlock(x=arr[:count].copy(), y=arr[count:].copy(), v_a=v_a, v_z=v_z, seed=seed)
