"""Deletion-mechanism classification and deleted-stream enumeration.

The three recorder deletion methods leave distinct metadata states while
all of them leave the video bytes alone. A reset header with residual
frames means formatting. A populated block-group table alongside frames
older than the oldest group start means expiration or overwrite; those
two cannot be told apart from one static image because their on-disk
signatures coincide except for available-memory dynamics, so they are
reported as one class with an available-memory heuristic attached.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from .diskimage import ByteRange, ImageHandle
from .errors import IncompatibleImages
from .framestream import (
    FrameRecord,
    StreamSegment,
    scan_frames,
    scan_frames_parallel,
    segment_streams,
)
from .gpt import GptLayout
from .layout import LayoutProfile
from .metadata import (
    Partition1Header,
    RecordStateTable,
    parse_partition1_header,
    parse_record_state,
    render_timestamp,
)


class Mechanism(Enum):
    NONE_DETECTED = "none"
    FORMATTING = "formatting"
    EXPIRATION_OR_OVERWRITE = "expiration-or-overwrite"
    INDETERMINATE = "indeterminate"


class Confidence(Enum):
    CONCLUSIVE = "conclusive"
    HEURISTIC = "heuristic"


class EvidenceKind(Enum):
    HEADER_RESET = "header-reset"
    MISSING_METADATA = "missing-metadata"
    ORPHAN_TIMESTAMPS = "orphan-timestamps"
    AVAILABLE_MEMORY_DELTA = "available-memory-delta"
    GUID_MISMATCH_HINT = "guid-mismatch-hint"


class CutoffSource(Enum):
    BLOCK_GROUP_START = "block-group-start"
    NO_METADATA = "no-metadata"


@dataclass
class Evidence:
    kind: EvidenceKind
    detail: str
    locations: List[ByteRange] = field(default_factory=list)


@dataclass
class DeletionVerdict:
    mechanism: Mechanism
    evidence: List[Evidence]
    confidence: Confidence


@dataclass
class DeletedStreamSet:
    streams: List[StreamSegment]
    oldest_live_ts: Optional[int]  # epoch seconds
    cutoff_source: CutoffSource


def _video_region(layout: GptLayout, profile: LayoutProfile,
                  handle: ImageHandle) -> ByteRange:
    base = layout.partition1_range.offset
    start = base + profile.video_start
    end = min(layout.partition1_range.end, handle.size_bytes)
    return ByteRange(start, max(end - start, 0))


def scan_video_frames(handle: ImageHandle, layout: GptLayout,
                      profile: Optional[LayoutProfile] = None,
                      diagnostics=None, workers: int = 1) -> List[FrameRecord]:
    """Scan partition 1's whole video data region for frame records."""
    profile = profile or LayoutProfile.full_scale()
    region = _video_region(layout, profile, handle)
    if workers > 1:
        return scan_frames_parallel(handle, region, workers=workers)
    return list(scan_frames(handle, region, diagnostics))


def classify_image(handle: ImageHandle, layout: GptLayout,
                   p1meta: Partition1Header,
                   frames: Optional[List[FrameRecord]] = None,
                   profile: Optional[LayoutProfile] = None) -> DeletionVerdict:
    """Deterministic deletion verdict for one parsed image."""
    profile = profile or LayoutProfile.full_scale()
    if frames is None:
        frames = scan_video_frames(handle, layout, profile)
    evidence: List[Evidence] = []
    p1_base = layout.partition1_range.offset
    header_loc = ByteRange(p1_base, profile.header_len)

    if not p1meta.block_groups:
        if not frames:
            # A merely-empty disk is not evidence of deletion.
            return DeletionVerdict(Mechanism.NONE_DETECTED, [],
                                   Confidence.CONCLUSIVE)
        locs = [ByteRange(f.abs_offset, f.payload_range.length + 20)
                for f in frames[:8]]
        if p1meta.reset_state:
            evidence.append(Evidence(
                EvidenceKind.HEADER_RESET,
                "available equals total "
                f"({p1meta.available_memory.raw:#x}) and the block group "
                "table is empty while video frames persist",
                [header_loc]))
            evidence.append(Evidence(
                EvidenceKind.MISSING_METADATA,
                f"{len(frames)} residual frames have no covering metadata; "
                "earliest at "
                + render_timestamp(frames[0].header.timestamp_us, micros=True),
                locs))
            return DeletionVerdict(Mechanism.FORMATTING, evidence,
                                   Confidence.CONCLUSIVE)
        evidence.append(Evidence(
            EvidenceKind.MISSING_METADATA,
            "video frames present but header is neither reset nor populated",
            [header_loc] + locs))
        return DeletionVerdict(Mechanism.INDETERMINATE, evidence,
                               Confidence.HEURISTIC)

    oldest = min(g.start_time for g in p1meta.block_groups)
    orphans = [f for f in frames if f.header.timestamp_s < oldest]
    if not orphans:
        return DeletionVerdict(Mechanism.NONE_DETECTED, [],
                               Confidence.CONCLUSIVE)

    locs = [ByteRange(f.abs_offset, f.payload_range.length + 20)
            for f in orphans[:8]]
    evidence.append(Evidence(
        EvidenceKind.ORPHAN_TIMESTAMPS,
        f"{len(orphans)} frames timestamped before the oldest block group "
        f"start {render_timestamp(oldest)}, e.g. "
        + render_timestamp(orphans[0].header.timestamp_us, micros=True),
        locs))
    # Expiration and overwrite only truly separate through available-memory
    # dynamics across snapshots. Statically, orphan position gives a lean:
    # expiration appends new data after old, leaving orphans below the
    # write pointer; overwrite wraps, leaving orphans at or above it.
    next_write_abs = p1_base + p1meta.next_write.resolved
    orphan_bytes = sum(f.payload_range.length + 20 for f in orphans)
    avail = p1meta.available_memory.resolved
    lean = ("expiration-like" if orphans[0].abs_offset < next_write_abs
            else "overwrite-like")
    evidence.append(Evidence(
        EvidenceKind.AVAILABLE_MEMORY_DELTA,
        f"available memory {avail:#x}, about {orphan_bytes:#x} orphan bytes "
        f"{'below' if lean == 'expiration-like' else 'at or above'} the "
        f"write pointer: {lean} deletion (heuristic only)",
        [ByteRange(p1_base + 0x10, 4)]))
    return DeletionVerdict(Mechanism.EXPIRATION_OR_OVERWRITE, evidence,
                           Confidence.CONCLUSIVE)


def find_deleted_streams(handle: ImageHandle, p1meta: Partition1Header,
                         frames: List[FrameRecord],
                         layout: Optional[GptLayout] = None,
                         verdict: Optional[DeletionVerdict] = None,
                         profile: Optional[LayoutProfile] = None) -> DeletedStreamSet:
    """Carve-ready stream segments the verdict's cutoff rule marks deleted."""
    profile = profile or LayoutProfile.full_scale()
    if verdict is None:
        if layout is None:
            raise ValueError("need either a verdict or a parsed layout")
        verdict = classify_image(handle, layout, p1meta, frames, profile)
    segments = segment_streams(frames, handle)

    if verdict.mechanism is Mechanism.FORMATTING:
        # No metadata covers anything; every residual stream is deleted.
        return DeletedStreamSet(streams=segments, oldest_live_ts=None,
                                cutoff_source=CutoffSource.NO_METADATA)
    if verdict.mechanism is Mechanism.EXPIRATION_OR_OVERWRITE:
        # Strict timestamp cutoff. Residue whose timestamps fall at or
        # after the oldest retained video (an overwrite frontier slicing
        # through one synchronized recording window) is indistinguishable
        # from searchable video by this rule and stays unflagged.
        oldest = min(g.start_time for g in p1meta.block_groups)
        flagged = [s for s in segments if s.last_ts // 10**6 < oldest]
        return DeletedStreamSet(streams=flagged, oldest_live_ts=oldest,
                                cutoff_source=CutoffSource.BLOCK_GROUP_START)
    return DeletedStreamSet(streams=[], oldest_live_ts=None,
                            cutoff_source=CutoffSource.NO_METADATA)


@dataclass
class MetadataSnapshot:
    """Parsed state of one image, for pre/post comparison."""

    layout: GptLayout
    header: Partition1Header
    record_tables: List[RecordStateTable]

    @classmethod
    def capture(cls, handle: ImageHandle, layout: GptLayout,
                num_channels: int = 8,
                profile: Optional[LayoutProfile] = None) -> "MetadataSnapshot":
        base = layout.partition1_range.offset
        return cls(
            layout=layout,
            header=parse_partition1_header(handle, base, profile),
            record_tables=parse_record_state(handle, base, num_channels,
                                             profile),
        )


@dataclass
class MechanismDiff:
    guids_changed: bool
    disk_guid_pre: str
    disk_guid_post: str
    available_delta_raw: int  # post minus pre, in 0x1000 units
    next_write_delta_raw: int
    removed_groups: List[int]
    added_groups: List[int]
    updated_groups: List[tuple]  # (group, start pre, start post)
    record_removed: dict  # channel -> anchors removed from the front
    record_added: dict  # channel -> anchors appended


def compare_pre_post(pre: MetadataSnapshot, post: MetadataSnapshot) -> MechanismDiff:
    """Structured metadata diff between two snapshots of the same disk."""
    if pre.header.total_memory.raw != post.header.total_memory.raw and \
            pre.layout.machine.model_name != post.layout.machine.model_name:
        raise IncompatibleImages("total memory and device fingerprint differ")

    pre_groups = {g.group_number: g.start_time for g in pre.header.block_groups}
    post_groups = {g.group_number: g.start_time for g in post.header.block_groups}
    removed = sorted(set(pre_groups) - set(post_groups))
    added = sorted(set(post_groups) - set(pre_groups))
    updated = [(g, pre_groups[g], post_groups[g])
               for g in sorted(set(pre_groups) & set(post_groups))
               if pre_groups[g] != post_groups[g]]

    record_removed = {}
    record_added = {}
    for pre_tab, post_tab in zip(pre.record_tables, post.record_tables):
        pre_hours = [a.hour_timestamp for a in pre_tab.anchors]
        post_hours = [a.hour_timestamp for a in post_tab.anchors]
        surviving = [h for h in pre_hours if h in set(post_hours)]
        record_removed[pre_tab.channel] = len(pre_hours) - len(surviving)
        record_added[pre_tab.channel] = len(post_hours) - len(surviving)

    return MechanismDiff(
        guids_changed=pre.layout.primary.disk_guid != post.layout.primary.disk_guid,
        disk_guid_pre=str(pre.layout.primary.disk_guid),
        disk_guid_post=str(post.layout.primary.disk_guid),
        available_delta_raw=(post.header.available_memory.raw
                             - pre.header.available_memory.raw),
        next_write_delta_raw=(post.header.next_write.raw
                              - pre.header.next_write.raw),
        removed_groups=removed,
        added_groups=added,
        updated_groups=updated,
        record_removed=record_removed,
        record_added=record_added,
    )
