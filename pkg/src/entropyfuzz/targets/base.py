"""Tracing primitives shared by the built-in targets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

# edge id = (previous block << 16) | current block; block 0 is the virtual start
EDGE_SHIFT = 16
BLOCK_MASK = (1 << EDGE_SHIFT) - 1


def edge_blocks(edge: int) -> tuple[int, int]:
    """Split an edge id back into its (from_block, to_block) pair."""
    return edge >> EDGE_SHIFT, edge & BLOCK_MASK


class TargetCrash(Exception):
    """Raised inside a target when a planted bug fires."""

    def __init__(self, site: int):
        super().__init__(f"crash at block {site}")
        self.site = site


class Tracer:
    """Records the edge sequence of one execution.

    Targets call the tracer with a block id at the top of every basic
    block. ``crash`` records the faulting block and aborts the run.
    """

    __slots__ = ("edges", "prev")

    def __init__(self) -> None:
        self.edges: list[int] = []
        self.prev = 0

    def __call__(self, block: int) -> None:
        self.edges.append((self.prev << EDGE_SHIFT) | block)
        self.prev = block

    def crash(self, block: int) -> None:
        self(block)
        raise TargetCrash(block)


@dataclass(frozen=True)
class ExecutionTrace:
    edges: tuple[int, ...]
    crashed: bool = False
    crash_site: Optional[int] = None

    def __post_init__(self) -> None:
        if self.crashed and self.crash_site is None:
            raise ValueError("crashed trace needs a crash_site")


@dataclass(frozen=True)
class TargetDescriptor:
    name: str
    description: str
    max_input_len: int
    seed_corpus: tuple[bytes, ...]
    # upper bound on edges in any trace; loops are capped by input length
    max_trace_len: int
    planted_bugs: tuple[str, ...] = ()
    program: Callable[[bytes, Tracer], None] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "max_input_len": self.max_input_len,
            "max_trace_len": self.max_trace_len,
            "seed_corpus": [s.hex() for s in self.seed_corpus],
            "planted_bugs": list(self.planted_bugs),
        }
