"""Binary header guarded by a signature byte and an additive checksum."""

from __future__ import annotations

from .base import Tracer

SIGNATURE = 0xC5


def checksum_header(data: bytes, t: Tracer) -> None:
    # layout: sig, version, flags, length, payload[length], checksum
    t(1)
    if len(data) < 6:
        t(2)
        return
    if data[0] != SIGNATURE:
        t(3)
        return
    t(4)
    version, flags, length = data[1], data[2], data[3]
    if version == 0 or version > 3:
        t(5)
        return
    t(6)
    end = 4 + length
    if end >= len(data):
        t(7)
        return
    payload = data[4:end]
    if sum(payload) & 0xFF != data[end]:
        t(8)
        return
    t(9)
    for bit in range(4):
        if flags & (1 << bit):
            t(10 + bit)
    if version == 1:
        t(14)
        if payload[:1].isalpha():
            t(15)
    elif version == 2:
        t(16)
        pairs = sum(payload[i] == payload[i + 1] for i in range(0, length - 1, 2))
        if pairs * 2 == length:
            t(17)
        elif pairs:
            t(18)
    else:
        t(19)
        if any(b & 0x80 for b in payload):
            t(20)
        # BUG: v3 extended payloads overflow a 24-byte staging buffer
        if flags & 0x80 and length > 24:
            t.crash(21)
    if len(data) > end + 1:
        t(22)  # trailing bytes ignored
    t(23)


def with_checksum(sig_version_flags: bytes, payload: bytes) -> bytes:
    """Build a well-formed header input (used for the seed corpus)."""
    return sig_version_flags + bytes([len(payload)]) + payload + bytes([sum(payload) & 0xFF])
