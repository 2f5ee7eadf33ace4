"""Deterministic random streams derived from one root seed.

Each stream is keyed by (phase, iteration, purpose), so every strategy sees
the same warm-up randomness and draws for a given iteration never depend on
how many numbers an earlier iteration consumed.
"""

from __future__ import annotations

import random

import numpy as np

PHASE_WARMUP = 0
PHASE_STRATEGY = 1

GENERATE = 0
SELECT = 1


def stream(seed: int, phase: int, iteration: int, purpose: int = GENERATE) -> random.Random:
    words = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, phase, iteration, purpose]).generate_state(2)
    return random.Random(int(words[0]) << 32 | int(words[1]))
