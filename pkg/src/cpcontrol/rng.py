"""Seed derivation: every random stream is a pure function of (seed, phase, index).

Phases are named strings (``"data"``, ``"test"``, ``"train"``, ``"evaluate"``,
...). The phase name is mapped to an integer with CRC-32 so the derivation
is stable across Python processes (unlike ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def phase_key(phase: str) -> int:
    return zlib.crc32(phase.encode("utf-8"))


def child(seed: int, phase: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one (phase, index) cell of an experiment."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), phase_key(phase), int(index)]))
