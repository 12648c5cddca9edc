"""Portable keyed pseudo-random streams.

Everything random in the protocol layer (ID shuffle, verification
priorities, reference-scheme tokens) is drawn from SHAKE-256 applied to an
unambiguous encoding of the key parts. Output is identical on every
platform and Python version, so golden values can be pinned in tests.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar, Union

import numpy as np

Part = Union[bytes, str, int]
T = TypeVar("T")


def _encode(part: Part) -> bytes:
    if isinstance(part, bool):
        raise TypeError("bool is not a valid key part")
    if isinstance(part, int):
        if part < 0:
            raise ValueError("integer key parts must be non-negative")
        raw = part.to_bytes(8, "little")
        tag = b"i"
    elif isinstance(part, str):
        raw = part.encode("utf-8")
        tag = b"s"
    elif isinstance(part, (bytes, bytearray)):
        raw = bytes(part)
        tag = b"b"
    else:
        raise TypeError(f"unsupported key part {type(part).__name__}")
    return tag + len(raw).to_bytes(4, "little") + raw


def keyed_stream(*parts: Part, nbytes: int) -> bytes:
    """Return ``nbytes`` of SHAKE-256 output keyed by ``parts``."""
    h = hashlib.shake_256()
    for part in parts:
        h.update(_encode(part))
    return h.digest(nbytes)


def seed_from_int(seed: int) -> bytes:
    """Expand an integer seed into 32 bytes of shared randomness."""
    return keyed_stream("seed", seed, nbytes=32)


def shuffled(items: Sequence[T], *parts: Part) -> list[T]:
    """Fisher-Yates (Durstenfeld) shuffle of ``items`` driven by the keyed stream.

    Step ``i`` (from the top down) swaps position ``i`` with ``w_i mod (i+1)``
    where ``w_i`` is the ``i``-th little-endian 64-bit word of the stream.
    The modulo bias is below ``len(items) / 2**64`` and is ignored.
    """
    out = list(items)
    k = len(out)
    if k < 2:
        return out
    words = np.frombuffer(keyed_stream(*parts, nbytes=8 * k), dtype="<u8").tolist()
    for i in range(k - 1, 0, -1):
        j = words[i] % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out
