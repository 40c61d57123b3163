"""Video-data region walker: frame headers, segments, stream carving.

Every NAL unit in the video region is preceded by a 20-byte custom
header (frame type, fixed magic, resolution, NAL length, microsecond
timestamp) and per-channel write bursts end with a 20-byte all-zero
delimiter. The scanner validates candidate headers with layered checks
so the 3-byte magic alone cannot false-positive across a large image,
and resynchronizes after corrupt spans without losing later frames.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional

from .diskimage import ByteRange, ImageHandle
from .errors import NoStartCode

HEADER_LEN = 20
FRAME_MAGIC = b"\x80\x01\x00"  # header bytes 1-3
FRAME_TYPE_IDR = 0x82
FRAME_TYPE_NONIDR = 0x02
DELIMITER = b"\x00" * 20  # End of Channel Data
START_CODE = b"\x00\x00\x00\x01"
NAL_LENGTH_CAP = 16 << 20
DIMENSION_MIN, DIMENSION_MAX = 16, 8192

_HEADER_FMT = "<B3sHHIQ"


class NalKind(Enum):
    IDR_SLICE = 5
    NON_IDR_SLICE = 1
    SPS = 7
    PPS = 8
    OTHER = -1


class ExportMode(Enum):
    RAW = "raw"  # verbatim byte range, custom headers included
    ANNEXB = "annexb"  # concatenated NAL payloads only


@dataclass(frozen=True)
class CustomFrameHeader:
    frame_type: int
    width: int
    height: int
    nal_length: int  # bytes following the header (start code included)
    timestamp_us: int

    @property
    def is_idr(self) -> bool:
        return self.frame_type == FRAME_TYPE_IDR

    @property
    def timestamp_s(self) -> int:
        return self.timestamp_us // 10**6

    def pack(self) -> bytes:
        return struct.pack(_HEADER_FMT, self.frame_type, FRAME_MAGIC,
                           self.width, self.height, self.nal_length,
                           self.timestamp_us)

    @classmethod
    def unpack(cls, raw: bytes) -> "CustomFrameHeader":
        ftype, magic, width, height, length, ts = struct.unpack_from(_HEADER_FMT, raw)
        if magic != FRAME_MAGIC:
            raise ValueError("bad magic")
        return cls(ftype, width, height, length, ts)


@dataclass(frozen=True)
class FrameRecord:
    header: CustomFrameHeader
    abs_offset: int  # start of the custom header
    payload_range: ByteRange  # nal_length bytes after the header

    @property
    def end_offset(self) -> int:
        return self.payload_range.end


@dataclass
class StreamSegment:
    frames: List[FrameRecord]
    start_offset: int
    end_offset: int
    channel_hint: Optional[int] = None
    stream_hint: Optional[int] = None

    @property
    def first_ts(self) -> int:
        return self.frames[0].header.timestamp_us

    @property
    def last_ts(self) -> int:
        return self.frames[-1].header.timestamp_us

    @property
    def length(self) -> int:
        return self.end_offset - self.start_offset


@dataclass
class CarvedStream:
    segment: StreamSegment
    export_mode: ExportMode
    output_path: str
    byte_count: int


@dataclass
class ScanDiagnostics:
    """Side channel for scan details that are not frame records."""

    rejects: List[tuple] = field(default_factory=list)  # (offset, reason)
    delimiters: List[int] = field(default_factory=list)
    length_convention: str = "includes_start_code"

    def reject(self, offset: int, reason: str) -> None:
        if len(self.rejects) < 10000:
            self.rejects.append((offset, reason))


def validate_header(raw: bytes) -> Optional[str]:
    """Reject reason for a 24-byte candidate (header + start code), or None."""
    if raw[1:4] != FRAME_MAGIC:
        return "magic"
    if raw[0] not in (FRAME_TYPE_IDR, FRAME_TYPE_NONIDR):
        return "frame-type"
    width, height = struct.unpack_from("<HH", raw, 4)
    if not (DIMENSION_MIN <= width <= DIMENSION_MAX
            and DIMENSION_MIN <= height <= DIMENSION_MAX):
        return "dimensions"
    length = struct.unpack_from("<I", raw, 8)[0]
    if not 0 < length < NAL_LENGTH_CAP:
        return "nal-length"
    if raw[HEADER_LEN:HEADER_LEN + 4] != START_CODE:
        return "start-code"
    return None


class _Window:
    """Sliding read buffer over one byte range of an image."""

    def __init__(self, handle: ImageHandle, start: int, end: int,
                 chunk: int = 4 << 20):
        self.handle = handle
        self.start, self.end = start, end
        self.chunk = chunk
        self.buf = b""
        self.buf_pos = start

    def bytes_at(self, pos: int, n: int) -> bytes:
        n = min(n, self.end - pos)
        if n <= 0:
            return b""
        if pos < self.buf_pos or pos + n > self.buf_pos + len(self.buf):
            self.buf = self.handle.read_at(pos, min(max(self.chunk, n),
                                                    self.end - pos))
            self.buf_pos = pos
        off = pos - self.buf_pos
        return self.buf[off:off + n]

    def find(self, pattern: bytes, pos: int) -> int:
        """Absolute offset of the next occurrence at/after pos, or -1."""
        overlap = len(pattern) - 1
        while pos < self.end:
            buf = self.bytes_at(pos, self.chunk)
            idx = buf.find(pattern)
            if idx >= 0:
                return pos + idx
            if pos + len(buf) >= self.end:
                return -1
            pos += len(buf) - overlap
        return -1

    def skip_zeros(self, pos: int) -> int:
        """First offset at/after pos holding a nonzero byte (or range end)."""
        while pos < self.end:
            if pos >= self.buf_pos + len(self.buf) or pos < self.buf_pos:
                # Outside the buffered window: let the filesystem skip
                # sparse holes, which read as zeros anyway.
                pos = min(self.handle.next_data_offset(pos), self.end)
                if pos >= self.end:
                    return self.end
            buf = self.bytes_at(pos, self.chunk)
            stripped = len(buf) - len(buf.lstrip(b"\x00"))
            pos += stripped
            if stripped < len(buf):
                return pos
        return self.end


def scan_frames(handle: ImageHandle, region: ByteRange,
                diagnostics: Optional[ScanDiagnostics] = None) -> Iterator[FrameRecord]:
    """Yield every validated frame record in the region, in offset order.

    Corrupt spans and dummy padding are skipped by sliding to the next
    candidate magic or delimiter, so a bad frame never desynchronizes
    the frames after it.
    """
    win = _Window(handle, region.offset, region.end)
    pos = region.offset
    end = region.end
    last_frame_end = -1
    while pos + HEADER_LEN <= end:
        head = win.bytes_at(pos, HEADER_LEN + 4)
        if head[:HEADER_LEN] == DELIMITER:
            if diagnostics is not None:
                diagnostics.delimiters.append(pos)
            pos = win.skip_zeros(pos + HEADER_LEN)
            continue
        reason = validate_header(head) if len(head) >= HEADER_LEN + 4 else "truncated"
        if reason is None:
            header = CustomFrameHeader.unpack(head)
            payload_end = pos + HEADER_LEN + header.nal_length
            if payload_end <= end:
                yield FrameRecord(
                    header=header,
                    abs_offset=pos,
                    payload_range=ByteRange(pos + HEADER_LEN, header.nal_length),
                )
                last_frame_end = payload_end
                pos = payload_end
                continue
            reason = "payload-truncated"
        if diagnostics is not None:
            diagnostics.reject(pos, reason)
            if pos == last_frame_end:
                # The stored length may exclude the 4 start-code bytes; note
                # when the next structure sits exactly that far ahead.
                ahead = win.bytes_at(pos + 4, HEADER_LEN + 4)
                if ahead[:HEADER_LEN] == DELIMITER or (
                        len(ahead) >= HEADER_LEN + 4
                        and validate_header(ahead) is None):
                    diagnostics.length_convention = "excludes_start_code"
        # Resync: the next candidate is either a header (magic at offset 1)
        # or a delimiter; jump to whichever comes first.
        next_magic = win.find(FRAME_MAGIC, pos + 2)
        next_delim = win.find(DELIMITER, pos + 1)
        candidates = [c for c in (next_magic - 1 if next_magic > 0 else -1,
                                  next_delim) if c >= 0]
        if not candidates:
            return
        pos = min(candidates)


SCAN_OVERLAP = NAL_LENGTH_CAP + HEADER_LEN + len(START_CODE) + 2


def scan_frames_parallel(handle: ImageHandle, region: ByteRange,
                         workers: int = 4) -> List[FrameRecord]:
    """Scan disjoint sub-ranges in parallel and merge the results.

    Each worker scans its sub-range extended by one maximum frame so
    headers near a boundary are seen by the owning side; frames are owned
    by the sub-range containing their header offset, which deduplicates
    the overlap. Positional reads make one handle safe to share.
    """
    import concurrent.futures

    if workers <= 1 or region.length < 4 * SCAN_OVERLAP:
        return list(scan_frames(handle, region))
    stride = region.length // workers

    def scan_part(i):
        start = region.offset + i * stride
        end = region.end if i == workers - 1 else start + stride
        scan_end = min(end + SCAN_OVERLAP, region.end)
        out = []
        for frame in scan_frames(handle, ByteRange(start, scan_end - start)):
            if frame.abs_offset >= end:
                break
            out.append(frame)
        return out

    with concurrent.futures.ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(scan_part, range(workers)))
    merged: List[FrameRecord] = []
    seen = set()
    for part in parts:
        for frame in part:
            if frame.abs_offset not in seen:
                seen.add(frame.abs_offset)
                merged.append(frame)
    merged.sort(key=lambda f: f.abs_offset)
    return merged


def segment_streams(frames: List[FrameRecord], handle: ImageHandle,
                    region_end: Optional[int] = None) -> List[StreamSegment]:
    """Group scanned frames into delimiter-bounded stream segments.

    A segment breaks wherever the gap between consecutive frames contains
    an End-of-Channel delimiter (or any 20-byte zero run).
    """
    segments: List[StreamSegment] = []
    current: List[FrameRecord] = []
    for frame in frames:
        if current and _gap_has_delimiter(handle, current[-1].end_offset,
                                           frame.abs_offset):
            segments.append(_finish(current))
            current = []
        current.append(frame)
    if current:
        segments.append(_finish(current))
    return segments


def _finish(frames: List[FrameRecord]) -> StreamSegment:
    return StreamSegment(frames=list(frames),
                         start_offset=frames[0].abs_offset,
                         end_offset=frames[-1].end_offset)


def _gap_has_delimiter(handle: ImageHandle, gap_start: int, gap_end: int) -> bool:
    if gap_end - gap_start < len(DELIMITER):
        return False
    chunk = 4 << 20
    overlap = len(DELIMITER) - 1
    pos = gap_start
    while pos < gap_end:
        n = min(chunk, gap_end - pos)
        if DELIMITER in handle.read_at(pos, n):
            return True
        if pos + n >= gap_end:
            return False
        pos += n - overlap
    return False


def annotate_channels(segments: List[StreamSegment], channel_entries,
                      p1_base: int) -> None:
    """Attach channel/stream hints by matching channel-list start offsets."""
    by_offset = {p1_base + e.frame_start_offset.resolved: e
                 for e in channel_entries}
    for seg in segments:
        entry = by_offset.get(seg.start_offset)
        if entry is not None:
            seg.channel_hint = entry.channel
            seg.stream_hint = entry.stream_type


def classify_nal(data: bytes) -> NalKind:
    """NAL kind from the nal_unit_type of the byte after the start code."""
    if len(data) < len(START_CODE) + 1 or data[:len(START_CODE)] != START_CODE:
        raise NoStartCode("payload does not begin with 00 00 00 01")
    nal_type = data[len(START_CODE)] & 0x1F
    try:
        return NalKind(nal_type)
    except ValueError:
        return NalKind.OTHER


def header_nal_agreement(frame: FrameRecord, handle: ImageHandle) -> Optional[str]:
    """Warning string when frame type and NAL type disagree, else None.

    IDR custom headers may legitimately start with SPS/PPS parameter sets
    that precede the IDR slice.
    """
    try:
        kind = classify_nal(handle.read_at(frame.payload_range.offset,
                                           min(5, frame.payload_range.length)))
    except NoStartCode:
        return f"frame at {frame.abs_offset:#x}: no start code after header"
    if frame.header.is_idr:
        if kind in (NalKind.IDR_SLICE, NalKind.SPS, NalKind.PPS):
            return None
    elif kind == NalKind.NON_IDR_SLICE:
        return None
    return (f"frame at {frame.abs_offset:#x}: header type {frame.header.frame_type:#x} "
            f"vs NAL kind {kind.name}")


def carve(handle: ImageHandle, segment: StreamSegment, mode: ExportMode,
          out_path) -> CarvedStream:
    """Write one segment to a file; raw range or Annex-B elementary stream."""
    out_path = str(out_path)
    written = 0
    with open(out_path, "wb") as out:
        if mode is ExportMode.RAW:
            pos = segment.start_offset
            while pos < segment.end_offset:
                chunk = handle.read_at(pos, min(4 << 20, segment.end_offset - pos))
                out.write(chunk)
                pos += len(chunk)
                written += len(chunk)
        else:
            for frame in segment.frames:
                payload = handle.read_range(frame.payload_range)
                out.write(payload)
                written += len(payload)
    return CarvedStream(segment=segment, export_mode=mode,
                        output_path=out_path, byte_count=written)
