"""Magic-prefixed message: opcode, length byte, body copied into a fixed buffer."""

from __future__ import annotations

from .base import Tracer

MAGIC = b"FUZZ"
BODY_BUF = 16
OP_ECHO, OP_SUM, OP_XOR, OP_CMP = 0x01, 0x02, 0x03, 0x04


def magic_gate(data: bytes, t: Tracer) -> None:
    # layout: magic[4], length, opcode, body[length]
    t(1)
    if len(data) < 4:
        t(2)
        return
    # byte-wise compare, so partial matches are distinct edges
    for i, m in enumerate(MAGIC):
        if data[i] != m:
            t(3 + i)
            return
    t(7)
    if len(data) < 6:
        t(8)
        return
    length, op = data[4], data[5]
    # BUG: length is trusted; the body buffer holds BODY_BUF bytes
    if length > BODY_BUF:
        t.crash(9)
    body = data[6:6 + length]
    if len(body) < length:
        t(10)
        return
    if op == OP_ECHO:
        t(11)
        if body.isalnum():
            t(12)
    elif op == OP_SUM:
        t(13)
        if sum(body) & 0xFF == 0:
            t(14)
    elif op == OP_XOR:
        t(15)
        # BUG: a 0xDE 0xAD pair frees the body twice
        if b"\xde\xad" in body:
            t.crash(16)
    elif op == OP_CMP:
        t(17)
        if body[:4] == b"PASS":
            t(18)
    else:
        t(19)
        return
    t(20)
