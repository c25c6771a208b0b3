"""Common codebook shared by all UEs and the sub-block <-> codeword map.

Codeword indices follow the 1-based convention ``r = decimal(bits) + 1``
with MSB-first bit order. Arrays are indexed 0-based, so column ``r - 1``
of ``C`` is codeword ``r``.
"""
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EncodingError, SizeError

MAX_J = 26
_MAGIC = b"URACB001"
_HEADER = struct.Struct("<8sIIdq")


@dataclass(frozen=True)
class Codebook:
    C: np.ndarray  # (n0, 2^J) complex
    J: int
    per_symbol_power: float
    seed: Optional[int] = None

    @property
    def n0(self):
        return self.C.shape[0]

    @property
    def size(self):
        return self.C.shape[1]

    def column_energy(self):
        return np.sum(np.abs(self.C) ** 2, axis=0)


def generate_codebook(n0, J, P, rng=None, seed=None) -> Codebook:
    """i.i.d. complex Gaussian codewords, each rescaled to energy exactly ``n0 * P``."""
    if n0 < 1 or J < 1 or not P > 0:
        raise ValueError("need n0 >= 1, J >= 1, P > 0")
    if J > MAX_J:
        raise SizeError(f"2^{J} codewords exceeds the 2^{MAX_J} limit")
    if rng is None:
        rng = np.random.default_rng(seed)
    N = 1 << J
    C = rng.standard_normal((n0, N)) + 1j * rng.standard_normal((n0, N))
    C *= np.sqrt(n0 * P) / np.linalg.norm(C, axis=0)
    return Codebook(C=C, J=J, per_symbol_power=float(P), seed=seed)


def index_of(sub_block) -> int:
    """1-based codeword index of a J-bit sub-block (MSB first)."""
    bits = np.asarray(sub_block)
    if bits.ndim != 1 or bits.size == 0 or np.any((bits != 0) & (bits != 1)):
        raise EncodingError(f"sub-block must be a non-empty 0/1 vector, got {sub_block!r}")
    r = 0
    for bit in bits:
        r = (r << 1) | int(bit)
    return r + 1


def bits_of(r, J) -> np.ndarray:
    """Inverse of :func:`index_of`."""
    if not 1 <= r <= (1 << J):
        raise EncodingError(f"codeword index {r} outside [1, 2^{J}]")
    v = r - 1
    return np.array([(v >> (J - 1 - i)) & 1 for i in range(J)], dtype=np.uint8)


def indices_of_rows(bits) -> np.ndarray:
    """Vectorized 0-based column indices for a (..., J) bit array."""
    bits = np.asarray(bits, dtype=np.int64)
    J = bits.shape[-1]
    weights = 1 << np.arange(J - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def save_codebook(cb: Codebook, path):
    """Binary layout: header (magic, n0, J, P, seed) then row-major complex64."""
    seed = -1 if cb.seed is None else int(cb.seed)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, cb.n0, cb.J, cb.per_symbol_power, seed))
        fh.write(np.ascontiguousarray(cb.C, dtype=np.complex64).tobytes(order="C"))


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise EncodingError(f"{path}: truncated header")
        magic, n0, J, P, seed = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise EncodingError(f"{path}: not a codebook file")
        payload = np.frombuffer(fh.read(), dtype=np.complex64)
    if payload.size != n0 * (1 << J):
        raise EncodingError(f"{path}: expected {n0 * (1 << J)} entries, got {payload.size}")
    C = payload.reshape(n0, 1 << J).astype(np.complex128)
    return Codebook(C=C, J=J, per_symbol_power=P, seed=None if seed < 0 else seed)
