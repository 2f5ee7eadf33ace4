"""Parent queue, havoc-style mutation and batch generation.

Nothing in this module executes a target. Children are produced from the
queue as it stands when the batch is requested, which is what makes the
batched strategies "batched".
"""

from __future__ import annotations

import os
import random
import re
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Optional, Sequence

from .coverage import PathId

RECENCY_GAMMA = 0.95
ARITH_MAX = 35
HAVOC_BLK_MAX = 16

# byte/word/dword "interesting" constants; -1 is written as all ones
INTERESTING = (0, 1, 127, 128, 255, 256, 32767, 32768, 65535, 2**31 - 1, -1)

OPS = (
    "bitflip",
    "rand_byte",
    "interesting8",
    "interesting16",
    "interesting32",
    "arith8",
    "arith16",
    "arith32",
    "delete",
    "clone",
    "memset",
    "insert",
)
SPLICE = "splice"
ALL_OPS = OPS + (SPLICE,)

# minimum input length each havoc operator needs
_MIN_LEN = {
    "bitflip": 1,
    "rand_byte": 1,
    "interesting8": 1,
    "interesting16": 2,
    "interesting32": 4,
    "arith8": 1,
    "arith16": 2,
    "arith32": 4,
    "delete": 2,
    "clone": 1,
    "memset": 1,
    "insert": 0,
}


def _interesting_for(width: int) -> tuple[int, ...]:
    top = 1 << (8 * width)
    return tuple(sorted({v % top for v in INTERESTING if v < top}))


_INTERESTING_BY_WIDTH = {w: _interesting_for(w) for w in (1, 2, 4)}


@dataclass
class MutationConfig:
    max_len: int = 64
    stack_exponent_max: int = 6
    splice_probability: float = 0.1
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_len < 16:
            raise ValueError("max_len must be >= 16")
        if self.stack_exponent_max < 1:
            raise ValueError("stack_exponent_max must be >= 1")
        if not 0.0 <= self.splice_probability <= 1.0:
            raise ValueError("splice_probability must lie in [0, 1]")


@dataclass
class QueueEntry:
    input: bytes
    path: PathId
    added_at: int
    times_selected: int = 0


@dataclass
class Queue:
    """Append-only archive of inputs that each reached a new path."""

    entries: list[QueueEntry] = field(default_factory=list)
    gamma: float = RECENCY_GAMMA
    _cum: Optional[list[float]] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> QueueEntry:
        return self.entries[i]

    def add(self, data: bytes, path: PathId, added_at: int) -> QueueEntry:
        entry = QueueEntry(bytes(data), path, added_at)
        self.entries.append(entry)
        self._cum = None
        return entry

    def recency_weights(self) -> list[float]:
        n = len(self.entries)
        return [self.gamma ** (n - 1 - i) for i in range(n)]

    def select_index(self, rng: random.Random) -> int:
        if not self.entries:
            raise IndexError("queue empty")
        if self._cum is None:
            self._cum = list(accumulate(self.recency_weights()))
        i = rng.choices(range(len(self.entries)), cum_weights=self._cum)[0]
        self.entries[i].times_selected += 1
        return i

    def copy(self) -> "Queue":
        return Queue([QueueEntry(e.input, e.path, e.added_at, e.times_selected) for e in self.entries], self.gamma)


def select_parent(queue: Queue, rng: random.Random) -> QueueEntry:
    """Draw a parent with weight gamma**(n-1-i), favouring recent admissions."""
    return queue[queue.select_index(rng)]


# -- single operators ---------------------------------------------------------
# Each takes explicit parameters so it can be exercised deterministically.


def flip_bit(buf: bytearray, bit: int) -> None:
    buf[bit >> 3] ^= 0x80 >> (bit & 7)


def write_int(buf: bytearray, pos: int, width: int, value: int, big_endian: bool) -> None:
    buf[pos:pos + width] = (value % (1 << (8 * width))).to_bytes(width, "big" if big_endian else "little")


def add_int(buf: bytearray, pos: int, width: int, delta: int, big_endian: bool) -> None:
    order = "big" if big_endian else "little"
    val = int.from_bytes(buf[pos:pos + width], order)
    write_int(buf, pos, width, val + delta, big_endian)


def delete_block(buf: bytearray, offset: int, length: int) -> None:
    del buf[offset:offset + length]


def clone_block(buf: bytearray, src: int, length: int, dst: int) -> None:
    buf[dst:dst] = buf[src:src + length]


def memset_block(buf: bytearray, offset: int, length: int, value: int) -> None:
    buf[offset:offset + length] = bytes([value]) * length


def insert_bytes(buf: bytearray, offset: int, data: bytes) -> None:
    buf[offset:offset] = data


def splice(parent: bytes, donor: bytes, cut_parent: int, cut_donor: int) -> bytes:
    return parent[:cut_parent] + donor[cut_donor:]


def _block_len(rng: random.Random, limit: int) -> int:
    return rng.randint(1, min(limit, HAVOC_BLK_MAX))


def _apply(op: str, buf: bytearray, rng: random.Random) -> None:
    n = len(buf)
    if op == "bitflip":
        flip_bit(buf, rng.randrange(n * 8))
    elif op == "rand_byte":
        buf[rng.randrange(n)] = rng.randrange(256)
    elif op.startswith("interesting"):
        width = int(op[11:]) // 8
        value = rng.choice(_INTERESTING_BY_WIDTH[width])
        write_int(buf, rng.randrange(n - width + 1), width, value, rng.random() < 0.5)
    elif op.startswith("arith"):
        width = int(op[5:]) // 8
        delta = rng.randint(1, ARITH_MAX)
        if rng.random() < 0.5:
            delta = -delta
        add_int(buf, rng.randrange(n - width + 1), width, delta, rng.random() < 0.5)
    elif op == "delete":
        length = _block_len(rng, n - 1)
        delete_block(buf, rng.randrange(n - length + 1), length)
    elif op == "clone":
        length = _block_len(rng, n)
        clone_block(buf, rng.randrange(n - length + 1), length, rng.randrange(n + 1))
    elif op == "memset":
        length = _block_len(rng, n)
        memset_block(buf, rng.randrange(n - length + 1), length, rng.randrange(256))
    elif op == "insert":
        length = rng.randint(1, HAVOC_BLK_MAX)
        insert_bytes(buf, rng.randrange(n + 1), bytes(rng.getrandbits(8) for _ in range(length)))
    else:
        raise ValueError(f"unknown operator {op!r}")


def mutate(
    parent: bytes,
    config: MutationConfig,
    rng: random.Random,
    donors: Sequence[QueueEntry] = (),
    applied: Optional[list[str]] = None,
) -> bytes:
    """Produce one child by an optional splice followed by a havoc stack.

    ``donors`` supplies splice partners; with none, splicing is skipped.
    Operator names are appended to ``applied`` when it is given.
    """
    data = bytes(parent)
    if donors and rng.random() < config.splice_probability:
        donor = donors[rng.randrange(len(donors))].input
        data = splice(data, donor, rng.randint(0, len(data)), rng.randint(0, len(donor)))
        if applied is not None:
            applied.append(SPLICE)
    buf = bytearray(data[: config.max_len])
    stack = 1 << (1 + rng.randint(0, config.stack_exponent_max))
    for _ in range(stack):
        op = rng.choice(OPS)
        while len(buf) < _MIN_LEN[op]:
            op = rng.choice(OPS)
        _apply(op, buf, rng)
        if len(buf) > config.max_len:
            del buf[config.max_len:]
        if applied is not None:
            applied.append(op)
    return bytes(buf)


def generate_batch(
    queue: Queue,
    k: int,
    config: MutationConfig,
    rng: random.Random,
    lineage: Optional[list[int]] = None,
) -> list[bytes]:
    """Generate ``k`` children from the current queue without executing any.

    Queue membership is frozen for the whole batch; only ``times_selected``
    counters move. Parent indices are appended to ``lineage`` if given.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    entries = queue.entries
    children = []
    for _ in range(k):
        i = queue.select_index(rng)
        children.append(mutate(entries[i].input, config, rng, entries))
        if lineage is not None:
            lineage.append(i)
    return children


# -- persistence ----------------------------------------------------------------

_ENTRY_NAME = re.compile(r"^id:(\d{6}),path:([0-9a-f]{16})$")


def save_queue(queue: Queue, directory: os.PathLike | str) -> None:
    """Write one file per entry, named ``id:NNNNNN,path:HEX``, bytes verbatim."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(queue):
        (out / f"id:{i:06d},path:{entry.path:016x}").write_bytes(entry.input)


def load_queue(directory: os.PathLike | str) -> Queue:
    found = []
    for p in Path(directory).iterdir():
        m = _ENTRY_NAME.match(p.name)
        if m:
            found.append((int(m.group(1)), int(m.group(2), 16), p.read_bytes()))
    found.sort()
    queue = Queue()
    for idx, path, data in found:
        queue.add(data, path, idx)
    return queue
