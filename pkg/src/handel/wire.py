"""Bit-exact wire encoding of the single Handel message.

Layout (all integers little-endian)::

    sender      u32
    level       u8      (>= 1)
    no_contact  u8      (0 or 1)
    aggregate   u16 bit-length, packed bitset over the sender's side of the
                level (LSB-first within bytes), 64-byte payload
    individual  u32 position (must equal sender), 64-byte payload

The aggregate bitset only spans the ``2**(level-1)`` ids (fewer at the edge
of a non-power-of-two network) on the sender's side of the level, which is
what bounds a top-level message to a few hundred bytes.
"""

from __future__ import annotations

from handel.node import Message
from handel.overlay import num_levels, own_range
from handel.scheme import PAYLOAD_SIZE, Contribution, SchemeError

HEADER = 4 + 1 + 1


class DecodeError(ValueError):
    pass


def aggregate_span(sender: int, level: int, n: int) -> range:
    return own_range(sender, level - 1, n)


def message_size(sender: int, level: int, n: int) -> int:
    bits = len(aggregate_span(sender, level, n))
    return HEADER + 2 + (bits + 7) // 8 + PAYLOAD_SIZE + 4 + PAYLOAD_SIZE


def encode_message(msg: Message, n: int) -> bytes:
    span = aggregate_span(msg.sender, msg.level, n)
    width = len(span)
    local = msg.aggregate.bits >> span.start
    if local >> width or msg.aggregate.bits & ((1 << span.start) - 1):
        raise ValueError("aggregate has bits outside the sender's side of the level")
    if msg.individual.bits != 1 << msg.sender:
        raise ValueError("individual contribution is not the sender's")
    return b"".join(
        [
            msg.sender.to_bytes(4, "little"),
            bytes([msg.level, int(msg.no_contact)]),
            width.to_bytes(2, "little"),
            local.to_bytes((width + 7) // 8, "little"),
            msg.aggregate.payload,
            msg.sender.to_bytes(4, "little"),
            msg.individual.payload,
        ]
    )


def decode_message(data: bytes, n: int) -> Message:
    if len(data) < HEADER + 2:
        raise DecodeError("truncated header")
    sender = int.from_bytes(data[0:4], "little")
    level, flag = data[4], data[5]
    if sender >= n:
        raise DecodeError(f"sender {sender} out of range")
    if not 1 <= level <= num_levels(n):
        raise DecodeError(f"level {level} out of range")
    if flag > 1:
        raise DecodeError("flag byte must be 0 or 1")
    span = aggregate_span(sender, level, n)
    width = int.from_bytes(data[6:8], "little")
    if width != len(span):
        raise DecodeError(f"bit-length {width} does not match level {level} (expected {len(span)})")
    nb = (width + 7) // 8
    expected = message_size(sender, level, n)
    if len(data) != expected:
        raise DecodeError(f"message is {len(data)} bytes, expected {expected}")
    pos = 8
    local = int.from_bytes(data[pos:pos + nb], "little")
    pos += nb
    if local >> width:
        raise DecodeError("padding bits set")
    agg_payload = bytes(data[pos:pos + PAYLOAD_SIZE])
    pos += PAYLOAD_SIZE
    position = int.from_bytes(data[pos:pos + 4], "little")
    pos += 4
    if position != sender:
        raise DecodeError("individual contribution position differs from sender")
    ind_payload = bytes(data[pos:pos + PAYLOAD_SIZE])
    try:
        aggregate = Contribution(local << span.start, n, agg_payload)
        individual = Contribution(1 << sender, n, ind_payload)
    except SchemeError as e:
        raise DecodeError(str(e)) from e
    return Message(level, sender, aggregate, individual, bool(flag))
