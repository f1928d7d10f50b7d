"""Shannon entropy of section bytes and the packed-executable gate.

Packed or encrypted sections exhibit near-maximal byte entropy; sections
exceeding the thresholds are excluded from feature extraction rather than
unpacked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .pe import ExecutableSection

DEFAULT_AVG_THRESHOLD = 6.677
DEFAULT_BLOCK_THRESHOLD = 7.199
DEFAULT_BLOCK_SIZE = 256


@dataclass(frozen=True)
class EntropyReport:
    average_entropy: float
    max_block_entropy: float
    block_size: int
    verdict: str  # "pass" | "packed"


def shannon_entropy(data: bytes) -> float:
    """Empirical byte entropy in bits per byte, in [0, 8]."""
    if not data:
        raise EmptyInputError("entropy of empty data")
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(data)
    return float(-(p * np.log2(p)).sum())


def block_entropies(data: bytes, block_size: int = DEFAULT_BLOCK_SIZE) -> list[float]:
    """Entropy per non-overlapping block.

    A trailing partial block shorter than block_size/2 is dropped; tiny
    blocks inflate entropy variance.
    """
    if not data:
        raise EmptyInputError("entropy of empty data")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    out = []
    for start in range(0, len(data), block_size):
        block = data[start:start + block_size]
        if len(block) < block_size and len(block) < block_size / 2:
            break
        out.append(shannon_entropy(block))
    return out


def gate(
    section: ExecutableSection,
    avg_threshold: float = DEFAULT_AVG_THRESHOLD,
    block_threshold: float = DEFAULT_BLOCK_THRESHOLD,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> EntropyReport:
    """Verdict "packed" when average OR highest-block entropy exceeds its
    threshold; otherwise "pass".

    Sections too short to yield any block are judged on average entropy
    alone.
    """
    average = shannon_entropy(section.data)
    blocks = block_entropies(section.data, block_size)
    max_block = max(blocks) if blocks else average
    packed = average > avg_threshold or max_block > block_threshold
    return EntropyReport(
        average_entropy=average,
        max_block_entropy=max_block,
        block_size=block_size,
        verdict="packed" if packed else "pass",
    )
