"""Partition 1 metadata: header, block list, channel list, record state.

All multi-byte integers are little-endian. Offsets and lengths stored in
metadata are scaled: the low 12 bits are dropped, so a stored value v
resolves to v * 0x1000 bytes. Timestamps are wall-clock values stored as
epoch seconds (or microseconds in frame headers) with no timezone
conversion applied on either side.
"""

import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import List, Optional

from .diskimage import ImageHandle
from .errors import AnchorCountOverflow, TruncatedPartition
from .layout import OFFSET_SCALE, LayoutProfile

BLOCK_GROUP_TABLE_OFFSET = 0x40
GROUP_ENTRY_LEN = 16
BLOCK_ENTRY_LEN = 16
CHANNEL_ENTRY_LEN = 16
RECORD_ENTRY_LEN = 20

STREAM_MAIN = 0x00
STREAM_SUB = 0x20

PLAUSIBLE_MIN = 946684800  # 2000-01-01
PLAUSIBLE_MAX = 4102444800  # 2100-01-01


@dataclass(frozen=True)
class ScaledOffset:
    """Stored offset/length with the low 12 bits dropped."""

    raw: int

    @property
    def resolved(self) -> int:
        return self.raw * OFFSET_SCALE


@dataclass
class DeviceTimestamp:
    """Wall-clock device timestamp rendered without timezone shift."""

    value: int
    micros: bool
    rendered: str
    plausible: bool

    @classmethod
    def from_seconds(cls, value: int) -> "DeviceTimestamp":
        return cls(value, False, render_timestamp(value),
                   PLAUSIBLE_MIN <= value < PLAUSIBLE_MAX)

    @classmethod
    def from_micros(cls, value: int) -> "DeviceTimestamp":
        return cls(value, True, render_timestamp(value, micros=True),
                   PLAUSIBLE_MIN * 10**6 <= value < PLAUSIBLE_MAX * 10**6)


def render_timestamp(value: int, micros: bool = False) -> str:
    """Deterministic "YYYY-MM-DD HH:MM:SS[.mmm]" rendering.

    The stored value already is local wall time, so it is formatted as if
    it were UTC; millisecond digits are truncated from microseconds.
    """
    if micros:
        seconds, rem = divmod(value, 10**6)
        suffix = ".%03d" % (rem // 1000)
    else:
        seconds, suffix = value, ""
    try:
        dt = datetime.fromtimestamp(seconds, tz=timezone.utc)
    except (OverflowError, OSError, ValueError):
        return f"<unrenderable epoch {seconds}>" + suffix
    return dt.strftime("%Y-%m-%d %H:%M:%S") + suffix


@dataclass
class BlockGroupIndex:
    raw: bytes
    start_time: int  # epoch seconds, entry bytes 4-7
    group_number: int  # entry byte 12


@dataclass
class Partition1Header:
    video_start: ScaledOffset
    next_write: ScaledOffset
    available_memory: ScaledOffset
    total_memory: ScaledOffset
    block_groups: List[BlockGroupIndex]

    @property
    def reset_state(self) -> bool:
        """Header looks freshly formatted: no groups, nothing consumed."""
        return not self.block_groups and (
            self.available_memory.raw == self.total_memory.raw
            or self.next_write.raw == self.video_start.raw
        )


@dataclass
class BlockIndexEntry:
    raw: bytes
    start_time: int  # bytes 4-7
    block_number: int  # byte 11
    group_number: int  # byte 12

    @property
    def head_reserved_ok(self) -> bool:
        return self.raw[0:4] == b"\x00\x00\x00\x00"


@dataclass
class ChannelIndexEntry:
    raw: bytes
    channel: int  # byte 0
    stream_type: int  # byte 1: 0x00 main, 0x20 sub
    frame_length: ScaledOffset  # 16-bit raw, bytes 2-3
    frame_start_time: int  # bytes 4-7
    frame_start_offset: ScaledOffset  # 32-bit raw, bytes 8-11

    @property
    def is_main(self) -> bool:
        return self.stream_type == STREAM_MAIN


@dataclass
class RecordIndexEntry:
    raw: bytes
    hour_timestamp: int  # bytes 0-3, full-hour epoch seconds
    status_bits: bytes  # bytes 4-18, undecoded recording-status bytes

    @property
    def any_recording(self) -> bool:
        """Heuristic only: a nonzero status byte suggests recording that hour."""
        return any(self.status_bits)


@dataclass
class RecordStateTable:
    channel: int
    anchor_count: int
    anchors: List[RecordIndexEntry] = field(default_factory=list)


def _require(handle: ImageHandle, p1_base: int, end_rel: int, what: str) -> None:
    if p1_base + end_rel > handle.size_bytes:
        raise TruncatedPartition(f"partition does not cover {what}")


def parse_partition1_header(handle: ImageHandle, p1_base: int,
                            profile: Optional[LayoutProfile] = None) -> Partition1Header:
    profile = profile or LayoutProfile.full_scale()
    _require(handle, p1_base, profile.header_len, "partition 1 header")
    raw = handle.read_at(p1_base, profile.header_len)
    video_start, _, next_write, _, avail, _, total = struct.unpack_from("<7I", raw, 0)

    groups = []
    pos = BLOCK_GROUP_TABLE_OFFSET
    while pos + GROUP_ENTRY_LEN <= len(raw):
        entry = raw[pos:pos + GROUP_ENTRY_LEN]
        if entry == b"\x00" * GROUP_ENTRY_LEN:
            break
        groups.append(BlockGroupIndex(
            raw=entry,
            start_time=struct.unpack_from("<I", entry, 4)[0],
            group_number=entry[12],
        ))
        pos += GROUP_ENTRY_LEN
    return Partition1Header(
        video_start=ScaledOffset(video_start),
        next_write=ScaledOffset(next_write),
        available_memory=ScaledOffset(avail),
        total_memory=ScaledOffset(total),
        block_groups=groups,
    )


def parse_block_list(handle: ImageHandle, p1_base: int,
                     profile: Optional[LayoutProfile] = None) -> List[BlockIndexEntry]:
    """Non-empty block index entries, in on-disk order.

    All-zero entries are unallocated (or removed by expiration) and are
    skipped, so the list starts at the oldest surviving block.
    """
    profile = profile or LayoutProfile.full_scale()
    _require(handle, p1_base, profile.block_list_start + profile.block_list_len,
             "video block list")
    entries = []
    chunk = 1 << 20
    region_start = p1_base + profile.block_list_start
    zero_entry = b"\x00" * BLOCK_ENTRY_LEN
    for off in range(0, profile.block_list_len, chunk):
        n = min(chunk, profile.block_list_len - off)
        buf = handle.read_at(region_start + off, n)
        if not any(buf):
            continue
        for pos in range(0, n - n % BLOCK_ENTRY_LEN, BLOCK_ENTRY_LEN):
            entry = buf[pos:pos + BLOCK_ENTRY_LEN]
            if entry == zero_entry:
                continue
            entries.append(BlockIndexEntry(
                raw=entry,
                start_time=struct.unpack_from("<I", entry, 4)[0],
                block_number=entry[11],
                group_number=entry[12],
            ))
    return entries


def parse_channel_list(handle: ImageHandle, p1_base: int,
                       profile: Optional[LayoutProfile] = None) -> List[ChannelIndexEntry]:
    """Channel index entries up to the first two consecutive all-zero slots."""
    profile = profile or LayoutProfile.full_scale()
    _require(handle, p1_base, profile.channel_list_start + CHANNEL_ENTRY_LEN,
             "video channel list")
    region_start = p1_base + profile.channel_list_start
    region_len = min(profile.channel_list_len,
                     handle.size_bytes - region_start)
    entries = []
    zero_entry = b"\x00" * CHANNEL_ENTRY_LEN
    zero_run = 0
    chunk = 1 << 20
    for off in range(0, region_len, chunk):
        n = min(chunk, region_len - off)
        buf = handle.read_at(region_start + off, n)
        for pos in range(0, n - n % CHANNEL_ENTRY_LEN, CHANNEL_ENTRY_LEN):
            entry = buf[pos:pos + CHANNEL_ENTRY_LEN]
            if entry == zero_entry:
                zero_run += 1
                if zero_run >= 2:
                    return entries
                continue
            zero_run = 0
            length_raw, start_time, start_off = struct.unpack_from("<HII", entry, 2)
            entries.append(ChannelIndexEntry(
                raw=entry,
                channel=entry[0],
                stream_type=entry[1],
                frame_length=ScaledOffset(length_raw),
                frame_start_time=start_time,
                frame_start_offset=ScaledOffset(start_off),
            ))
    return entries


def parse_record_state(handle: ImageHandle, p1_base: int, num_channels: int,
                       profile: Optional[LayoutProfile] = None) -> List[RecordStateTable]:
    """One table per channel 1..num_channels; subregion 0 is unassigned."""
    profile = profile or LayoutProfile.full_scale()
    end = profile.record_state_start + (num_channels + 1) * profile.record_subregion_len
    _require(handle, p1_base, end, "record state region")
    tables = []
    for channel in range(1, num_channels + 1):
        base = p1_base + profile.record_subregion_offset(channel)
        count = handle.read_at(base, 1)[0]
        if 1 + count * RECORD_ENTRY_LEN > profile.record_subregion_len:
            raise AnchorCountOverflow(
                f"channel {channel}: {count} anchors exceed subregion of "
                f"{profile.record_subregion_len:#x} bytes"
            )
        raw = handle.read_at(base + 1, count * RECORD_ENTRY_LEN)
        anchors = []
        for i in range(count):
            entry = raw[i * RECORD_ENTRY_LEN:(i + 1) * RECORD_ENTRY_LEN]
            anchors.append(RecordIndexEntry(
                raw=entry,
                hour_timestamp=struct.unpack_from("<I", entry, 0)[0],
                status_bits=entry[4:19],
            ))
        tables.append(RecordStateTable(channel=channel, anchor_count=count,
                                       anchors=anchors))
    return tables
