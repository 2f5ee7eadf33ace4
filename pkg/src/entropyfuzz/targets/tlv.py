"""Length-prefixed type/length/value record parser."""

from __future__ import annotations

from .base import Tracer

T_INT, T_STR, T_BLOB, T_NEST, T_END = 0x01, 0x02, 0x03, 0x04, 0xFF
MAX_RECORDS = 3
MAX_DEPTH = 1


def _printable(b: bytes) -> bool:
    # uninstrumented helper, like a libc call
    return all(0x20 <= c < 0x7F for c in b)


def tlv_parser(data: bytes, t: Tracer) -> None:
    t(1)
    pos = 0
    depth = 0
    records = 0
    n = len(data)
    while pos < n and records < MAX_RECORDS:
        t(2)
        if pos + 1 >= n:
            t(3)  # truncated header
            return
        typ = data[pos]
        ln = data[pos + 1]
        pos += 2
        if typ == T_INT:
            t(4)
            if ln != 4 or pos + 4 > n:
                t(5)
                return
            val = int.from_bytes(data[pos:pos + 4], "little")
            if val > 0xFFFF:
                t(7)
            else:
                t(8)
        elif typ == T_STR:
            t(9)
            if pos + ln > n:
                t(10)
                return
            if not _printable(data[pos:pos + ln]):
                t(12)
        elif typ == T_BLOB:
            t(13)
            # BUG: the bounds check only covers short blobs
            if pos + ln > n and ln > 0x20:
                t.crash(14)
            t(15)
        elif typ == T_NEST:
            t(16)
            depth += 1
            # BUG: off-by-one on the nesting limit
            if depth > MAX_DEPTH + 1:
                t.crash(17)
            records += 1
            continue  # nested records follow inline
        elif typ == T_END:
            t(18)
            return
        else:
            t(19)
            return
        pos += ln
        records += 1
    t(20)
