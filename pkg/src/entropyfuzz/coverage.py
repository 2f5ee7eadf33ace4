"""Path labels and global coverage bookkeeping.

A path is the set of (edge, hit-count bucket) pairs of an execution, the
same notion AFL's bitmap comparison uses. Its label is a 64-bit BLAKE2b
fingerprint over the sorted pairs, packed as little-endian (u32 edge,
u8 bucket) records, so labels agree across runs and platforms.
"""

from __future__ import annotations

import hashlib
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .targets import ExecutionTrace

# inclusive lower bounds of buckets 1..7; bucket 0 is exactly one hit
_BUCKET_FLOORS = (2, 3, 4, 8, 16, 32, 128)
_PAIR = struct.Struct("<IB")

PathId = int


def bucketize(hit_count: int) -> int:
    if hit_count < 1:
        raise ValueError("edge absent")
    bucket = 0
    for floor in _BUCKET_FLOORS:
        if hit_count < floor:
            break
        bucket += 1
    return bucket


def bucket_map(edges: Iterable[int]) -> dict[int, int]:
    return {e: bucketize(c) for e, c in Counter(edges).items()}


def fingerprint(buckets: dict[int, int]) -> PathId:
    h = hashlib.blake2b(digest_size=8)
    for edge in sorted(buckets):
        h.update(_PAIR.pack(edge, buckets[edge]))
    return int.from_bytes(h.digest(), "little")


def path_id(trace: ExecutionTrace | Iterable[int]) -> PathId:
    edges = trace.edges if isinstance(trace, ExecutionTrace) else tuple(trace)
    if not edges:
        raise ValueError("empty trace")
    return fingerprint(bucket_map(edges))


def format_path(path: PathId) -> str:
    return f"{path:016x}"


@dataclass
class CoverageState:
    seen_edge_buckets: set[tuple[int, int]] = field(default_factory=set)
    seen_paths: set[PathId] = field(default_factory=set)
    crash_count: int = 0
    path_first_seen: dict[PathId, int] = field(default_factory=dict)

    def observe(self, trace: ExecutionTrace, exec_index: int) -> tuple[bool, PathId]:
        """Fold one executed trace into the state; report whether its path is new."""
        buckets = bucket_map(trace.edges)
        path = fingerprint(buckets)
        self.seen_edge_buckets.update(buckets.items())
        if trace.crashed:
            self.crash_count += 1
        if path in self.seen_paths:
            return False, path
        self.seen_paths.add(path)
        self.path_first_seen[path] = exec_index
        return True, path

    def copy(self) -> "CoverageState":
        return CoverageState(
            set(self.seen_edge_buckets),
            set(self.seen_paths),
            self.crash_count,
            dict(self.path_first_seen),
        )


def observe(state: CoverageState, trace: ExecutionTrace, exec_index: int) -> tuple[bool, PathId]:
    return state.observe(trace, exec_index)
