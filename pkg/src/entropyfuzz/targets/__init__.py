"""Built-in suite of hand-instrumented target programs.

Every target is a pure function of its input bytes. It reports basic-block
entries to a :class:`Tracer`, which turns them into edge ids the way AFL's
compile-time instrumentation does. Planted bugs raise :class:`TargetCrash`.
"""

from __future__ import annotations

from typing import Union

from .base import ExecutionTrace, TargetCrash, TargetDescriptor, Tracer, edge_blocks
from .checksum_header import checksum_header, with_checksum
from .csv_records import csv_records
from .expr_eval import expr_eval
from .magic_gate import magic_gate
from .proto_state import proto_state
from .tlv import tlv_parser

__all__ = [
    "ExecutionTrace",
    "TargetCrash",
    "TargetDescriptor",
    "Tracer",
    "edge_blocks",
    "execute",
    "get_target",
    "list_targets",
]

_SUITE: tuple[TargetDescriptor, ...] = (
    TargetDescriptor(
        name="tlv-parser",
        description="type/length/value records: ints, strings, blobs, inline nesting",
        max_input_len=48,
        seed_corpus=(
            b"\x01\x04\x05\x00\x00\x00\x02\x03abc\xff\x00",
            b"\x04\x00\x02\x02hi\x03\x02zz",
        ),
        max_trace_len=256,
        planted_bugs=(
            "blob record whose length exceeds the remaining input and 0x20",
            "a third nested container (off-by-one depth limit)",
        ),
        program=tlv_parser,
    ),
    TargetDescriptor(
        name="csv-records",
        description="comma-separated records with quoted fields and backslash escapes",
        max_input_len=40,
        seed_corpus=(b"id,name\n1,alice\n2,bob\n", b'a,"b,c",d\n'),
        max_trace_len=256,
        planted_bugs=(
            "a data record with more than 8 fields",
            "last line ending inside a quoted field right after a backslash",
        ),
        program=csv_records,
    ),
    TargetDescriptor(
        name="checksum-header",
        description="signature byte, version, flags, length, payload, additive checksum",
        max_input_len=40,
        seed_corpus=(
            with_checksum(b"\xc5\x01\x00", b"abcd"),
            with_checksum(b"\xc5\x02\x03", b"aabbcd"),
            with_checksum(b"\xc5\x03\x01", b"\x01\x81\x02"),
        ),
        max_trace_len=128,
        planted_bugs=("version 3 with flag 0x80 and payload length above 24",),
        program=checksum_header,
    ),
    TargetDescriptor(
        name="proto-state",
        description="command protocol state machine: hello, auth, begin/data/end transfer, reset, quit",
        max_input_len=40,
        seed_corpus=(b"HP\x42BD\x03abcEQ", b"HUxP\x00P\x01", b"HSQ"),
        max_trace_len=128,
        planted_bugs=(
            "data command after a reset released the transfer buffer",
            "data chunk over 8 bytes once more than 16 bytes are buffered",
        ),
        program=proto_state,
    ),
    TargetDescriptor(
        name="expr-eval",
        description="recursive-descent evaluator for + * / and parentheses",
        max_input_len=16,
        seed_corpus=(b"1+2*3", b"(4+1)/3", b"10*(3)"),
        max_trace_len=512,
        planted_bugs=(
            "division by an expression evaluating to zero",
            "parentheses nested deeper than 8",
        ),
        program=expr_eval,
    ),
    TargetDescriptor(
        name="magic-gate",
        description="4-byte magic 'FUZZ', length byte, opcode, body copied into a 16-byte buffer",
        max_input_len=32,
        seed_corpus=(b"FUZZ\x03\x01abc", b"nothing here"),
        max_trace_len=64,
        planted_bugs=(
            "length byte above 16 after the magic",
            "XOR opcode with a body containing the pair 0xDE 0xAD",
        ),
        program=magic_gate,
    ),
)

_BY_NAME = {d.name: d for d in _SUITE}


def list_targets() -> list[TargetDescriptor]:
    return list(_SUITE)


def get_target(name: str) -> TargetDescriptor:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"no such target: {name!r}") from None


def execute(target: Union[TargetDescriptor, str], data: bytes) -> ExecutionTrace:
    """Run one input through a target and return its edge trace.

    Inputs longer than the target's ``max_input_len`` are truncated.
    """
    name = target if isinstance(target, str) else target.name
    desc = get_target(name)
    data = bytes(data[: desc.max_input_len])
    tr = Tracer()
    try:
        desc.program(data, tr)
    except TargetCrash as exc:
        return ExecutionTrace(tuple(tr.edges), True, exc.site)
    return ExecutionTrace(tuple(tr.edges))
