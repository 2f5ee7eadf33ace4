"""Comma-separated record splitter with quoting."""

from __future__ import annotations

from .base import Tracer

FIELD_SLOTS = 8
MAX_RECORDS = 4


def _split_fields(line: bytes) -> tuple[list[bytes], bool, bool]:
    """Split on commas outside quotes; report (fields, open_quote, dangling_escape)."""
    fields, cur = [], bytearray()
    in_quote = escaped = False
    for c in line:
        if in_quote:
            if escaped:
                escaped = False
            elif c == 0x5C:
                escaped = True
            elif c == 0x22:
                in_quote = False
            cur.append(c)
        elif c == 0x22:
            in_quote = True
            cur.append(c)
        elif c == 0x2C:
            fields.append(bytes(cur))
            cur.clear()
        else:
            cur.append(c)
    fields.append(bytes(cur))
    return fields, in_quote, escaped


def csv_records(data: bytes, t: Tracer) -> None:
    t(1)
    lines = [ln.rstrip(b"\r") for ln in data.split(b"\n")[:MAX_RECORDS]]
    if not lines[-1]:
        t(2)
        lines.pop()
    if not lines:
        t(3)
        return
    header, open_quote, escaped = _split_fields(lines[0])
    if open_quote:
        t(4)
        return
    t(5)
    if header[0] == b"id":
        t(6)
    widths = []
    numeric_ids = True
    for line in lines[1:]:
        t(7)
        fields, open_quote, escaped = _split_fields(line)
        if open_quote:
            t(8)
            # BUG: a dangling escape reads one byte past the buffer
            if escaped and line is lines[-1]:
                t.crash(9)
            return
        # BUG: the per-record field array holds FIELD_SLOTS entries
        if len(fields) > FIELD_SLOTS:
            t.crash(10)
        widths.append(len(fields))
        numeric_ids = numeric_ids and fields[0].isdigit()
    if numeric_ids:
        t(11)
    if not widths:
        t(12)
        return
    if all(w == len(header) for w in widths):
        t(13)
    elif max(widths) > len(header):
        t(14)
    else:
        t(15)
    if any(not f for ln in lines for f in _split_fields(ln)[0]):
        t(16)  # empty field somewhere
    if any(b'"' in ln for ln in lines):
        t(17)
    t(18)
