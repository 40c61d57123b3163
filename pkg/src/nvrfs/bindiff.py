"""Block-wise byte-level comparison of two disk images.

Blocks that compare equal are skipped at memcmp speed, so image pairs in
the 100 GB range stream at sequential-read rates; unequal blocks fall
through to a vectorized per-byte scan. Reported ranges are maximal runs
of differing bytes and do not depend on the block size, which only
batches I/O.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .diskimage import ImageHandle
from .errors import UnequalSize
from .gpt import GptLayout

SAMPLE_LEN = 16


@dataclass
class DiffRange:
    abs_offset: int
    length: int
    partition: Optional[int] = None
    rel_offset: Optional[int] = None
    sample_a: bytes = b""
    sample_b: bytes = b""

    @property
    def end(self) -> int:
        return self.abs_offset + self.length


@dataclass
class DiffReport:
    ranges: List[DiffRange]
    total_differing_bytes: int
    block_size: int
    path_a: str
    path_b: str
    compared_bytes: int
    size_mismatch: Optional[tuple] = None  # (size_a, size_b) when prefix-diffed
    coalesce_gap: int = 0


def _runs_of_true(mask: np.ndarray):
    """(start, end) pairs of consecutive True runs in a boolean array."""
    if not mask.any():
        return []
    delta = np.diff(mask.view(np.int8))
    starts = np.flatnonzero(delta == 1) + 1
    ends = np.flatnonzero(delta == -1) + 1
    if mask[0]:
        starts = np.concatenate(([0], starts))
    if mask[-1]:
        ends = np.concatenate((ends, [mask.size]))
    return list(zip(starts.tolist(), ends.tolist()))


def diff_images(a: ImageHandle, b: ImageHandle, block_size: int = 1 << 20,
                layout: Optional[GptLayout] = None, coalesce_gap: int = 0,
                allow_unequal: bool = False) -> DiffReport:
    """Compare two images and report maximal differing byte ranges."""
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    size_mismatch = None
    if a.size_bytes != b.size_bytes:
        if not allow_unequal:
            raise UnequalSize(
                f"{a.path} is {a.size_bytes} bytes, {b.path} is {b.size_bytes}")
        size_mismatch = (a.size_bytes, b.size_bytes)
    limit = min(a.size_bytes, b.size_bytes)

    raw: List[list] = []  # mutable [start, end) pairs, maximal
    total = 0
    pos = 0
    while pos < limit:
        n = min(block_size, limit - pos)
        blk_a = a.read_at(pos, n)
        blk_b = b.read_at(pos, n)
        if blk_a != blk_b:
            mask = np.frombuffer(blk_a, np.uint8) != np.frombuffer(blk_b, np.uint8)
            total += int(np.count_nonzero(mask))
            for start, end in _runs_of_true(mask):
                lo, hi = pos + start, pos + end
                if raw and raw[-1][1] == lo:
                    raw[-1][1] = hi  # run continues across the block seam
                else:
                    raw.append([lo, hi])
        pos += n

    merged: List[list] = []
    for lo, hi in raw:
        if merged and lo - merged[-1][1] <= coalesce_gap:
            merged[-1][1] = hi
        else:
            merged.append([lo, hi])

    ranges = []
    for lo, hi in merged:
        n = min(SAMPLE_LEN, hi - lo)
        rng = DiffRange(abs_offset=lo, length=hi - lo,
                        sample_a=a.read_at(lo, n), sample_b=b.read_at(lo, n))
        if layout is not None:
            rng.partition, rng.rel_offset = layout.partition_for_offset(lo)
        ranges.append(rng)

    return DiffReport(ranges=ranges, total_differing_bytes=total,
                      block_size=block_size, path_a=a.path, path_b=b.path,
                      compared_bytes=limit, size_mismatch=size_mismatch,
                      coalesce_gap=coalesce_gap)
