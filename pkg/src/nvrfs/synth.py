"""Synthetic recorder images with byte-exact ground truth.

The synthesizer emulates the recorder's write path (GPT scaffolding,
partition-1 metadata, per-channel video bursts) and its three deletion
behaviors: formatting resets the header and wipes metadata regions,
expiration removes metadata of the oldest recordings and frees their
accounting, overwrite frees the oldest recordings and physically writes
new data over them from the start of the video region. Video bytes are
never touched by formatting or expiration.

Every image ships with a GroundTruth object (and a tab-separated sidecar
file) recording each frame, segment and delimiter written plus which of
them a deletion step logically deleted or physically overwrote. That
record is the oracle the parser test-suite checks against.

Determinism: one seeded RNG stream drives payload content and another
drives GUID generation, so identical (spec, seed) pairs produce
byte-identical images.
"""

import calendar
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import gpt
from .diskimage import ImageHandle, create_image
from .errors import (
    DiskNotFull,
    InvalidSpec,
    InvalidState,
    NothingExpired,
    SpecTooLarge,
)
from .framestream import (
    DELIMITER,
    FRAME_TYPE_IDR,
    FRAME_TYPE_NONIDR,
    HEADER_LEN,
    NAL_LENGTH_CAP,
    START_CODE,
    CustomFrameHeader,
)
from .layout import OFFSET_SCALE, START_SECTORS, LayoutProfile, align_up
from .metadata import (
    BLOCK_ENTRY_LEN,
    BLOCK_GROUP_TABLE_OFFSET,
    CHANNEL_ENTRY_LEN,
    GROUP_ENTRY_LEN,
    RECORD_ENTRY_LEN,
    STREAM_MAIN,
    STREAM_SUB,
)

PAD_BYTE = 0xA5  # dummy fill between actual and rounded burst length
BLOCKS_PER_GROUP = 256
SUB_RESOLUTION = (640, 480)
GROUND_TRUTH_SUFFIX = ".gt.tsv"

# Maps byte 0x00 to a nonzero value; filler payloads must contain no zero
# bytes so they can never alias a start code or the all-zero delimiter.
_NONZERO_TABLE = b"\xa7" + bytes(range(1, 256))


@dataclass
class RecordingRound:
    start_time: int  # wall-clock epoch seconds
    duration_s: int
    fps: float = 1.0
    fps_keyint: int = 30
    width: int = 1920
    height: int = 1080
    streams: Tuple[str, ...] = ("main",)


@dataclass
class DeletionAction:
    kind: str  # formatting | expiration | overwrite
    retention_s: int = 0
    now: Optional[int] = None
    extra: Optional[RecordingRound] = None  # overwrite's new recording


@dataclass
class SynthSpec:
    num_channels: int = 1
    rounds: List[RecordingRound] = field(default_factory=list)
    deletion: Optional[DeletionAction] = None
    post_rounds: List[RecordingRound] = field(default_factory=list)
    shrink_factor: int = 1024  # 1 = full scale (sparse image)
    seed: int = 0
    video_len: Optional[int] = None
    block_size: Optional[int] = None
    total_memory_raw: Optional[int] = None
    device_id: str = "NVR4-00112233"
    model_name: str = "HN35080200"
    source_es: Optional[bytes] = None
    payload_bytes: int = 900  # nominal filler NAL size
    max_bytes: int = 512 << 20


@dataclass
class GtFrame:
    offset: int  # abs offset of the custom header
    length: int  # header + payload
    channel: int
    stream: int
    segment_id: int
    timestamp_us: int
    frame_type: int
    deleted: bool = False
    overwritten: bool = False

    @property
    def end(self) -> int:
        return self.offset + self.length

    @property
    def timestamp_s(self) -> int:
        return self.timestamp_us // 10**6


@dataclass
class GtSegment:
    segment_id: int
    channel: int
    stream: int
    slot_start: int  # abs; also the first frame's header offset
    slot_len: int
    data_end: int  # abs end of the last frame's payload
    first_ts: int  # microseconds
    last_ts: int
    deleted: bool = False

    @property
    def first_ts_s(self) -> int:
        return self.first_ts // 10**6

    @property
    def last_ts_s(self) -> int:
        return self.last_ts // 10**6


@dataclass
class GroundTruth:
    profile: LayoutProfile
    p1_base: int
    num_channels: int
    block_size: int
    video_len: int
    total_memory_raw: int
    frames: List[GtFrame] = field(default_factory=list)
    segments: List[GtSegment] = field(default_factory=list)
    delimiters: List[int] = field(default_factory=list)
    events: List[str] = field(default_factory=list)
    header_snapshots: List[dict] = field(default_factory=list)
    source_es_segment: Optional[int] = None
    _group_counts: Dict[int, int] = field(default_factory=dict)

    def live_frames(self) -> List[GtFrame]:
        return [f for f in self.frames if not f.deleted and not f.overwritten]

    def surviving_frames(self) -> List[GtFrame]:
        """Frames whose bytes are still on disk, deleted or not."""
        return [f for f in self.frames if not f.overwritten]

    def recoverable_deleted_frames(self) -> List[GtFrame]:
        return [f for f in self.frames if f.deleted and not f.overwritten]

    def recoverable_deleted_spans(self) -> List[Tuple[int, int, Tuple[int, ...]]]:
        """Expected recovered streams: (start, end, frame offsets) per segment.

        Destruction always eats a segment prefix, so the survivors of a
        segment are contiguous and end at the segment's original data end.
        """
        spans = []
        for seg in self.segments:
            frames = [f for f in self.recoverable_deleted_frames()
                      if f.segment_id == seg.segment_id]
            if frames:
                spans.append((frames[0].offset, frames[-1].end,
                              tuple(f.offset for f in frames)))
        return spans

    def expected_anchor_hours(self) -> Dict[int, List[int]]:
        """Per channel, the sorted full-hour anchors of live segments."""
        hours: Dict[int, set] = {}
        for seg in self.segments:
            if seg.deleted:
                continue
            span = range(seg.first_ts_s // 3600, seg.last_ts_s // 3600 + 1)
            hours.setdefault(seg.channel, set()).update(h * 3600 for h in span)
        return {ch: sorted(v) for ch, v in hours.items()}

    def expected_group_blocks(self) -> Dict[int, int]:
        """Group number -> live block count, from the block map snapshot."""
        return dict(self._group_counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("# offset\tlength\tkind\ttimestamp_us\tdetails\n")
            f.write(f"0\t0\tmeta\t0\tp1_base={self.p1_base} "
                    f"channels={self.num_channels} block_size={self.block_size} "
                    f"video_len={self.video_len} total_raw={self.total_memory_raw}\n")
            for ev in self.events:
                f.write(f"0\t0\tevent\t0\t{ev}\n")
            for fr in self.frames:
                f.write(f"{fr.offset}\t{fr.length}\tframe\t{fr.timestamp_us}\t"
                        f"channel={fr.channel} stream={fr.stream} "
                        f"segment={fr.segment_id} type={fr.frame_type:#x} "
                        f"deleted={int(fr.deleted)} overwritten={int(fr.overwritten)}\n")
            for seg in self.segments:
                f.write(f"{seg.slot_start}\t{seg.slot_len}\tsegment\t{seg.first_ts}\t"
                        f"channel={seg.channel} stream={seg.stream} "
                        f"id={seg.segment_id} data_end={seg.data_end} "
                        f"last_ts={seg.last_ts} deleted={int(seg.deleted)}\n")
            for off in self.delimiters:
                f.write(f"{off}\t{len(DELIMITER)}\tdelim\t0\t-\n")

    @classmethod
    def load(cls, path, profile: LayoutProfile) -> "GroundTruth":
        gt = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                offset, length, kind, ts, details = line.split("\t", 4)
                offset, length, ts = int(offset), int(length), int(ts)
                kv = dict(item.split("=", 1) for item in details.split()
                          if "=" in item)
                if kind == "meta":
                    gt = cls(profile=profile, p1_base=int(kv["p1_base"]),
                             num_channels=int(kv["channels"]),
                             block_size=int(kv["block_size"]),
                             video_len=int(kv["video_len"]),
                             total_memory_raw=int(kv["total_raw"]))
                elif kind == "event":
                    gt.events.append(details)
                elif kind == "frame":
                    gt.frames.append(GtFrame(
                        offset=offset, length=length, channel=int(kv["channel"]),
                        stream=int(kv["stream"]), segment_id=int(kv["segment"]),
                        timestamp_us=ts, frame_type=int(kv["type"], 16),
                        deleted=bool(int(kv["deleted"])),
                        overwritten=bool(int(kv["overwritten"]))))
                elif kind == "segment":
                    gt.segments.append(GtSegment(
                        segment_id=int(kv["id"]), channel=int(kv["channel"]),
                        stream=int(kv["stream"]), slot_start=offset,
                        slot_len=length, data_end=int(kv["data_end"]),
                        first_ts=ts, last_ts=int(kv["last_ts"]),
                        deleted=bool(int(kv["deleted"]))))
                elif kind == "delim":
                    gt.delimiters.append(offset)
        return gt


def parse_wallclock(text: str) -> int:
    """Epoch seconds from an integer literal or YYYY-MM-DDTHH:MM:SS."""
    text = text.strip()
    try:
        return int(text, 0)
    except ValueError:
        pass
    import time as _time

    st = _time.strptime(text, "%Y-%m-%dT%H:%M:%S")
    return calendar.timegm(st)


def _annexb_nals(es: bytes) -> List[Tuple[int, int]]:
    """(offset, start-code length) of each NAL in an Annex-B stream."""
    marks = []
    i = 0
    while True:
        j = es.find(b"\x00\x00\x01", i)
        if j < 0:
            break
        if j > 0 and es[j - 1] == 0 and (not marks or j - 1 >= marks[-1][0] + 3):
            marks.append((j - 1, 4))
        else:
            marks.append((j, 3))
        i = j + 3
    return marks


def group_es_frames(es: bytes) -> List[Tuple[int, bytes]]:
    """Split an elementary stream into (frame_type, payload) access units.

    Parameter sets ride with the following VCL NAL; concatenating the
    payloads reproduces the input byte-for-byte. Every frame must start
    at a 4-byte start code so the wrapped stream scans cleanly.
    """
    marks = _annexb_nals(es)
    if not marks or marks[0] != (0, 4):
        raise InvalidSpec("source stream must begin with a 4-byte start code")
    frames: List[Tuple[int, bytes]] = []
    cur_start = 0
    cur_has_vcl = False
    cur_is_idr = False
    for off, sc_len in marks:
        nal_type = es[off + sc_len] & 0x1F if off + sc_len < len(es) else 0
        is_vcl = 1 <= nal_type <= 5
        if cur_has_vcl and is_vcl and sc_len == 4:
            ftype = FRAME_TYPE_IDR if cur_is_idr else FRAME_TYPE_NONIDR
            frames.append((ftype, es[cur_start:off]))
            cur_start, cur_has_vcl, cur_is_idr = off, False, False
        if is_vcl:
            cur_has_vcl = True
            cur_is_idr = cur_is_idr or nal_type == 5
    ftype = FRAME_TYPE_IDR if cur_is_idr else FRAME_TYPE_NONIDR
    frames.append((ftype, es[cur_start:]))
    return frames


def make_filler_stream(rng: random.Random, n_frames: int, keyint: int,
                       nominal: int) -> List[Tuple[int, bytes]]:
    """Seeded syntactically-valid NAL frames (no zero bytes in payloads)."""
    frames = []
    for i in range(n_frames):
        idr = i % keyint == 0
        parts = []
        if idr:
            parts.append(START_CODE + b"\x67" +
                         rng.randbytes(rng.randrange(8, 16)).translate(_NONZERO_TABLE))
            parts.append(START_CODE + b"\x68" +
                         rng.randbytes(rng.randrange(4, 8)).translate(_NONZERO_TABLE))
        body = rng.randbytes(rng.randrange(max(nominal // 2, 8), nominal + 1))
        nal_byte = b"\x65" if idr else b"\x41"
        parts.append(START_CODE + nal_byte + body.translate(_NONZERO_TABLE))
        frames.append((FRAME_TYPE_IDR if idr else FRAME_TYPE_NONIDR,
                       b"".join(parts)))
    return frames


@dataclass
class _PlannedBurst:
    channel: int
    stream: int
    width: int
    height: int
    frames: List[Tuple[int, int, bytes]]  # (timestamp_us, frame_type, payload)
    content_len: int
    slot_len: int


class Synthesizer:
    """Stateful image builder; use synthesize() for the one-shot path."""

    def __init__(self, spec: SynthSpec, out_path):
        _validate_spec(spec)
        self.spec = spec
        self.profile = (LayoutProfile.full_scale() if spec.shrink_factor == 1
                        else LayoutProfile.compact(spec.shrink_factor))
        self.payload_rng = random.Random(spec.seed)
        self.guid_rng = random.Random(spec.seed ^ 0x9E3779B97F4A7C15)
        self.out_path = str(out_path)

        self._plans = self._plan_all()
        self._plan_cursor = 0
        content = sum(b.slot_len for plan in self._plans for b in plan)
        if content > spec.max_bytes:
            raise SpecTooLarge(f"{content} bytes of video exceed cap {spec.max_bytes}")
        self.video_len = self._choose_video_len(content)
        self.block_size = spec.block_size or max(
            align_up(self.video_len // BLOCKS_PER_GROUP), OFFSET_SCALE)
        n_blocks = -(-self.video_len // self.block_size)
        if n_blocks * BLOCK_ENTRY_LEN > self.profile.block_list_len:
            raise InvalidSpec("block_size too small for the block list region")
        self.total_raw = spec.total_memory_raw or self.video_len // OFFSET_SCALE

        self.p1_base = START_SECTORS * 512
        p1_len = self.profile.video_start + self.video_len
        disk_size = (self.p1_base + p1_len + self.profile.partition2_len
                     + self.profile.tail_len)
        self.handle: ImageHandle = create_image(self.out_path, disk_size)
        layout_bytes = gpt.build_gpt(
            disk_size, p1_len, profile=self.profile,
            device_id=spec.device_id, model_name=spec.model_name,
            rng=self.guid_rng)
        layout_bytes.write_to(self.handle)
        self._write_fixed_region()

        self.gt = GroundTruth(
            profile=self.profile, p1_base=self.p1_base,
            num_channels=spec.num_channels, block_size=self.block_size,
            video_len=self.video_len, total_memory_raw=self.total_raw)
        self._next_write_rel = self.profile.video_start
        self._block_ts: Dict[int, int] = {}  # block position -> first-write time
        self._next_segment_id = 0
        self._channel_slots_written = 0  # high-water mark of channel entries
        self._record_high = {c: 0 for c in range(1, spec.num_channels + 1)}
        self._block_high = 0
        self._flush_metadata()
        self._snapshot("created")

    # -- planning ---------------------------------------------------------

    def _plan_all(self) -> List[List[_PlannedBurst]]:
        spec = self.spec
        plans = []
        rounds = list(spec.rounds)
        if spec.deletion and spec.deletion.kind == "overwrite":
            if spec.deletion.extra is None:
                raise InvalidSpec("overwrite deletion needs its new recording")
            rounds.append(spec.deletion.extra)
        rounds.extend(spec.post_rounds)
        es_used = False
        for rnd in rounds:
            bursts = []
            for channel in range(1, spec.num_channels + 1):
                for stream_name in rnd.streams:
                    use_es = (spec.source_es is not None and not es_used
                              and stream_name == "main")
                    if use_es:
                        es_used = True
                    bursts.append(self._plan_burst(rnd, channel, stream_name,
                                                   use_es))
            plans.append(bursts)
        return plans

    def _plan_burst(self, rnd: RecordingRound, channel: int, stream_name: str,
                    use_es: bool) -> _PlannedBurst:
        stream = STREAM_MAIN if stream_name == "main" else STREAM_SUB
        width, height = ((rnd.width, rnd.height) if stream == STREAM_MAIN
                         else SUB_RESOLUTION)
        if use_es:
            raw = group_es_frames(self.spec.source_es)
        else:
            count = max(1, int(rnd.duration_s * rnd.fps))
            raw = make_filler_stream(self.payload_rng, count, rnd.fps_keyint,
                                     self.spec.payload_bytes)
        step_us = round(10**6 / rnd.fps)
        frames = []
        for i, (ftype, payload) in enumerate(raw):
            if len(payload) >= NAL_LENGTH_CAP:
                raise InvalidSpec("frame payload exceeds the 16 MB NAL cap")
            frames.append((rnd.start_time * 10**6 + i * step_us, ftype, payload))
        content = sum(HEADER_LEN + len(p) for _, _, p in frames) + len(DELIMITER)
        slot = align_up(content)
        if slot // OFFSET_SCALE > 0xFFFF:
            raise InvalidSpec("burst too long for the 16-bit length field")
        return _PlannedBurst(channel=channel, stream=stream, width=width,
                             height=height, frames=frames,
                             content_len=content, slot_len=slot)

    def _choose_video_len(self, content: int) -> int:
        if self.spec.video_len is not None:
            return align_up(self.spec.video_len)
        if self.spec.deletion and self.spec.deletion.kind == "overwrite":
            # Region must be exactly full before the overwrite round.
            initial = sum(b.slot_len for plan in
                          self._plans[:len(self.spec.rounds)] for b in plan)
            return max(initial, OFFSET_SCALE)
        return max(align_up(content * 5 // 4) + OFFSET_SCALE, 4 * OFFSET_SCALE)

    # -- recording --------------------------------------------------------

    def record_round(self) -> None:
        """Write the next planned round at the current write offset."""
        if self._plan_cursor >= len(self._plans):
            raise InvalidState("no planned round left to record")
        bursts = self._plans[self._plan_cursor]
        self._plan_cursor += 1
        for burst in bursts:
            self._write_burst(burst)
        self._flush_metadata()
        self._snapshot("recorded")

    def _write_burst(self, burst: _PlannedBurst) -> None:
        rel = self._next_write_rel
        video_end = self.profile.video_start + self.video_len
        if rel + burst.slot_len > video_end:
            raise InvalidSpec("video region full; shrink rounds or grow video_len")
        abs_off = self.p1_base + rel

        buf = bytearray(burst.slot_len)
        buf[burst.content_len:] = bytes([PAD_BYTE]) * (burst.slot_len
                                                       - burst.content_len)
        pos = 0
        frame_offsets = []
        for ts_us, ftype, payload in burst.frames:
            hdr = CustomFrameHeader(ftype, burst.width, burst.height,
                                    len(payload), ts_us)
            buf[pos:pos + HEADER_LEN] = hdr.pack()
            buf[pos + HEADER_LEN:pos + HEADER_LEN + len(payload)] = payload
            frame_offsets.append((abs_off + pos, HEADER_LEN + len(payload)))
            pos += HEADER_LEN + len(payload)
        delim_off = abs_off + pos
        buf[pos:pos + len(DELIMITER)] = DELIMITER

        self._destroy(abs_off, burst.slot_len)
        self.handle.write_at(abs_off, bytes(buf))

        seg_id = self._next_segment_id
        self._next_segment_id += 1
        for (off, length), (ts_us, ftype, _) in zip(frame_offsets, burst.frames):
            self.gt.frames.append(GtFrame(
                offset=off, length=length, channel=burst.channel,
                stream=burst.stream, segment_id=seg_id, timestamp_us=ts_us,
                frame_type=ftype))
        self.gt.segments.append(GtSegment(
            segment_id=seg_id, channel=burst.channel, stream=burst.stream,
            slot_start=abs_off, slot_len=burst.slot_len,
            data_end=abs_off + pos, first_ts=burst.frames[0][0],
            last_ts=burst.frames[-1][0]))
        self.gt.delimiters.append(delim_off)
        if (self.spec.source_es is not None and self.gt.source_es_segment is None
                and burst.stream == STREAM_MAIN):
            self.gt.source_es_segment = seg_id

        first_block = (rel - self.profile.video_start) // self.block_size
        last_block = (rel + burst.slot_len - 1
                      - self.profile.video_start) // self.block_size
        for k in range(first_block, last_block + 1):
            if k not in self._block_ts:
                block_abs = (self.p1_base + self.profile.video_start
                             + k * self.block_size)
                # First frame reaching into the block; a padding-only block
                # at the burst tail inherits the last frame's time so block
                # start times stay non-decreasing.
                ts = burst.frames[-1][0] // 10**6
                for (off, length), (ts_us, _, _) in zip(frame_offsets,
                                                        burst.frames):
                    if off + length > block_abs:
                        ts = ts_us // 10**6
                        break
                self._block_ts[k] = ts
        self._next_write_rel = rel + burst.slot_len

    # -- deletion mechanisms ----------------------------------------------

    def apply_formatting(self) -> None:
        """Reset header, wipe metadata, regenerate GUIDs; video untouched."""
        gpt.regenerate_guids(self.handle, rng=self.guid_rng,
                             profile=self.profile)
        for seg in self.gt.segments:
            seg.deleted = True
        for frame in self.gt.frames:
            frame.deleted = True
        self._block_ts.clear()
        self._next_write_rel = self.profile.video_start
        self._flush_metadata()
        self.gt.events.append("formatting")
        self._snapshot("formatting")

    def apply_expiration(self, retention_s: int, now: int) -> None:
        """Remove metadata of recordings older than the retention window."""
        if retention_s <= 0:
            raise InvalidSpec("retention must be positive")
        cutoff = now - retention_s
        expired = [s for s in self.gt.segments
                   if not s.deleted and s.last_ts_s < cutoff]
        if not expired:
            raise NothingExpired(f"no recording ends before {cutoff}")
        expired_ids = {s.segment_id for s in expired}
        for seg in expired:
            seg.deleted = True
        for frame in self.gt.frames:
            if frame.segment_id in expired_ids:
                frame.deleted = True
        self._drop_dead_blocks()
        self._flush_metadata()
        self.gt.events.append(f"expiration retention={retention_s} now={now}")
        self._snapshot("expiration")

    def apply_overwrite(self) -> None:
        """Free the oldest recordings and overwrite them with the new round."""
        if self._plan_cursor >= len(self._plans):
            raise InvalidState("no planned overwrite round left")
        bursts = self._plans[self._plan_cursor]
        self._plan_cursor += 1
        needed = sum(b.slot_len for b in bursts)
        video_end = self.profile.video_start + self.video_len
        if self._next_write_rel + needed <= video_end:
            raise DiskNotFull(
                f"{video_end - self._next_write_rel} bytes still writable")

        if needed > self.video_len:
            raise InvalidSpec("new recording larger than the whole video region")
        # Blocks are the deletion unit: every recording whose slot touches a
        # block the wrapped write lands in loses its metadata, so freed
        # space usually extends past the bytes physically overwritten and
        # the excess survives as recoverable residue.
        freed_len = min(align_up(needed, self.block_size), self.video_len)
        write_end = self.p1_base + self.profile.video_start + freed_len
        live = sorted((s for s in self.gt.segments if not s.deleted),
                      key=lambda s: s.slot_start)
        for seg in live:
            if seg.slot_start >= write_end:
                break
            seg.deleted = True
            for frame in self.gt.frames:
                if frame.segment_id == seg.segment_id:
                    frame.deleted = True
        self._drop_dead_blocks()

        self._next_write_rel = self.profile.video_start  # wrap around
        for burst in bursts:
            self._write_burst(burst)
        self._flush_metadata()
        self.gt.events.append("overwrite")
        self._snapshot("overwrite")

    def resume_recording(self) -> None:
        """Record the next planned round after formatting or expiration."""
        if not self.gt.events or self.gt.events[-1].split()[0] not in (
                "formatting", "expiration", "resume"):
            raise InvalidState("resume requires a prior formatting or expiration")
        self.record_round()
        self.gt.events.append("resume")

    # -- shared internals ---------------------------------------------------

    def _destroy(self, abs_off: int, length: int) -> None:
        end = abs_off + length
        for frame in self.gt.frames:
            if not frame.overwritten and frame.offset < end and frame.end > abs_off:
                frame.overwritten = True
        self.gt.delimiters = [d for d in self.gt.delimiters
                              if not (abs_off <= d < end)]

    def _drop_dead_blocks(self) -> None:
        """Recompute block liveness and times after a deletion sweep.

        A block survives while any live recording touches it, and its time
        becomes that of the oldest surviving content inside it (the same
        update the header applies to a partially surviving block group).
        """
        bs = self.block_size
        video_abs = self.p1_base + self.profile.video_start
        times: Dict[int, int] = {}
        live_ids = {s.segment_id for s in self.gt.segments if not s.deleted}
        for frame in self.gt.frames:
            if frame.segment_id not in live_ids:
                continue
            first = (frame.offset - video_abs) // bs
            last = (frame.end - 1 - video_abs) // bs
            for k in range(first, last + 1):
                ts = frame.timestamp_s
                times[k] = min(times.get(k, ts), ts)
        for seg in self.gt.segments:
            if seg.deleted:
                continue
            first = (seg.slot_start - video_abs) // bs
            last = (seg.slot_start + seg.slot_len - 1 - video_abs) // bs
            for k in range(first, last + 1):
                if k not in times:  # delimiter/padding-only block
                    times[k] = seg.last_ts_s
        self._block_ts = times

    def _live_raw(self) -> int:
        return sum(s.slot_len for s in self.gt.segments
                   if not s.deleted) // OFFSET_SCALE

    def _flush_metadata(self) -> None:
        prof = self.profile
        # Header: scalar fields plus the block group table.
        header = bytearray(prof.header_len)
        struct.pack_into("<I", header, 0x00, prof.video_start // OFFSET_SCALE)
        struct.pack_into("<I", header, 0x08, self._next_write_rel // OFFSET_SCALE)
        struct.pack_into("<I", header, 0x10, self.total_raw - self._live_raw())
        struct.pack_into("<I", header, 0x18, self.total_raw)
        groups: Dict[int, int] = {}
        for pos, ts in self._block_ts.items():
            g = pos // BLOCKS_PER_GROUP
            groups[g] = min(groups.get(g, ts), ts)
        for i, g in enumerate(sorted(groups)):
            off = BLOCK_GROUP_TABLE_OFFSET + i * GROUP_ENTRY_LEN
            if off + GROUP_ENTRY_LEN > prof.header_len:
                raise InvalidSpec("too many block groups for the header table")
            struct.pack_into("<I", header, off + 4, groups[g])
            header[off + 12] = g & 0xFF
        self.handle.write_at(self.p1_base, bytes(header))
        self.gt._group_counts = {
            g: sum(1 for p in self._block_ts if p // BLOCKS_PER_GROUP == g)
            for g in groups}

        # Block list: positional entries, zeroed where the block is dead.
        high = max(self._block_ts, default=-1) + 1
        high = max(high, self._block_high)
        self._block_high = high
        if high:
            blob = bytearray(high * BLOCK_ENTRY_LEN)
            for pos, ts in self._block_ts.items():
                off = pos * BLOCK_ENTRY_LEN
                struct.pack_into("<I", blob, off + 4, ts)
                blob[off + 11] = pos % BLOCKS_PER_GROUP
                blob[off + 12] = (pos // BLOCKS_PER_GROUP) & 0xFF
            self.handle.write_at(self.p1_base + prof.block_list_start,
                                 bytes(blob))

        # Channel list: live segments in creation order, survivors shifted
        # forward; stale tail zeroed.
        entries = bytearray()
        for seg in self.gt.segments:
            if seg.deleted:
                continue
            rel = seg.slot_start - self.p1_base
            entry = bytearray(CHANNEL_ENTRY_LEN)
            entry[0] = seg.channel
            entry[1] = seg.stream
            struct.pack_into("<HII", entry, 2, seg.slot_len // OFFSET_SCALE,
                             seg.first_ts_s, rel // OFFSET_SCALE)
            entries += entry
        used = len(entries) // CHANNEL_ENTRY_LEN
        if (used + 2) * CHANNEL_ENTRY_LEN > prof.channel_list_len:
            raise InvalidSpec("too many recordings for the channel list region")
        pad_slots = self._channel_slots_written - used
        if pad_slots > 0:
            entries += b"\x00" * (pad_slots * CHANNEL_ENTRY_LEN)
        self._channel_slots_written = max(self._channel_slots_written, used)
        if entries:
            self.handle.write_at(self.p1_base + prof.channel_list_start,
                                 bytes(entries))

        # Record state: per channel, hour anchors of live segments.
        anchors = self.gt.expected_anchor_hours()
        for channel in range(1, self.spec.num_channels + 1):
            hours = anchors.get(channel, [])
            cap = (prof.record_subregion_len - 1) // RECORD_ENTRY_LEN
            if len(hours) > min(cap, 255):
                raise InvalidSpec(
                    f"channel {channel}: {len(hours)} anchors exceed capacity")
            blob = bytearray(1 + len(hours) * RECORD_ENTRY_LEN)
            blob[0] = len(hours)
            for i, hour in enumerate(hours):
                off = 1 + i * RECORD_ENTRY_LEN
                struct.pack_into("<I", blob, off, hour)
                blob[off + 4:off + 19] = b"\xff" * 15
            prev = self._record_high[channel]
            if len(blob) < prev:
                blob += b"\x00" * (prev - len(blob))
            self._record_high[channel] = len(blob)
            self.handle.write_at(
                self.p1_base + prof.record_subregion_offset(channel),
                bytes(blob))

    def _write_fixed_region(self) -> None:
        n = min(self.profile.fixed_len, 64 << 10)
        pattern = bytes((0x5A + 7 * i) & 0xFF for i in range(256))
        blob = (pattern * (n // 256 + 1))[:n]
        self.handle.write_at(self.p1_base + self.profile.fixed_start, blob)

    def _snapshot(self, label: str) -> None:
        self.gt.header_snapshots.append({
            "label": label,
            "next_write_rel": self._next_write_rel,
            "available_raw": self.total_raw - self._live_raw(),
            "total_raw": self.total_raw,
            "groups": sorted({p // BLOCKS_PER_GROUP for p in self._block_ts}),
        })

    def finalize(self) -> GroundTruth:
        self.handle.flush()
        self.handle.close()
        self.gt.save(self.out_path + GROUND_TRUTH_SUFFIX)
        self.profile.save(self.out_path + ".layout.json")
        return self.gt


def _validate_spec(spec: SynthSpec) -> None:
    if not 1 <= spec.num_channels <= 8:
        raise InvalidSpec("num_channels must be 1..8")
    if spec.shrink_factor != 1 and (spec.shrink_factor < 2
                                    or spec.shrink_factor & (spec.shrink_factor - 1)):
        raise InvalidSpec("shrink_factor must be 1 or a power of two >= 2")
    for rnd in list(spec.rounds) + list(spec.post_rounds):
        if rnd.duration_s <= 0:
            raise InvalidSpec("round duration must be positive")
        if rnd.fps <= 0 or rnd.fps_keyint <= 0:
            raise InvalidSpec("fps and keyint must be positive")
        if any(s not in ("main", "sub") for s in rnd.streams):
            raise InvalidSpec("streams must be 'main' or 'sub'")
    if spec.deletion and spec.deletion.kind not in ("formatting", "expiration",
                                                    "overwrite"):
        raise InvalidSpec(f"unknown deletion kind {spec.deletion.kind!r}")
    if spec.payload_bytes < 16:
        raise InvalidSpec("payload_bytes must be at least 16")


def synthesize(spec: SynthSpec, out_path) -> GroundTruth:
    """Create an image per the spec, apply its deletion, return ground truth."""
    syn = Synthesizer(spec, out_path)
    for _ in spec.rounds:
        syn.record_round()
    action = spec.deletion
    if action is not None:
        if action.kind == "formatting":
            syn.apply_formatting()
        elif action.kind == "expiration":
            now = action.now
            if now is None:
                last = max((s.last_ts_s for s in syn.gt.segments), default=0)
                now = last + 1
            syn.apply_expiration(action.retention_s, now)
        elif action.kind == "overwrite":
            syn.apply_overwrite()
    for _ in spec.post_rounds:
        syn.resume_recording()
    return syn.finalize()


# -- spec files -------------------------------------------------------------

def _round_from_kv(kv: dict) -> RecordingRound:
    try:
        return RecordingRound(
            start_time=parse_wallclock(kv["start"]),
            duration_s=int(kv["duration"], 0),
            fps=float(kv.get("fps", "1")),
            fps_keyint=int(kv.get("keyint", "30"), 0),
            width=int(kv.get("width", "1920"), 0),
            height=int(kv.get("height", "1080"), 0),
            streams=tuple(kv.get("streams", "main").split(",")),
        )
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"bad round definition: {exc}") from exc


def load_spec_file(path) -> SynthSpec:
    """Line-oriented key=value spec format (see README for the schema)."""
    spec = SynthSpec(rounds=[])
    saw_delete = False
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidSpec(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "round":
                kv = dict(item.split("=", 1) for item in value.split()
                          if "=" in item)
                rnd = _round_from_kv(kv)
                if saw_delete:
                    spec.post_rounds.append(rnd)
                else:
                    spec.rounds.append(rnd)
            elif key == "delete":
                parts = value.split()
                kind = parts[0]
                kv = dict(item.split("=", 1) for item in parts[1:]
                          if "=" in item)
                if kind == "expiration":
                    if "retention" not in kv:
                        raise InvalidSpec(f"{path}:{lineno}: expiration "
                                          "needs retention=<seconds>")
                    spec.deletion = DeletionAction(
                        kind=kind, retention_s=int(kv["retention"], 0),
                        now=parse_wallclock(kv["now"]) if "now" in kv else None)
                elif kind == "overwrite":
                    spec.deletion = DeletionAction(kind=kind,
                                                   extra=_round_from_kv(kv))
                else:
                    spec.deletion = DeletionAction(kind=kind)
                saw_delete = True
            elif key == "seed":
                spec.seed = int(value, 0)
            elif key == "channels":
                spec.num_channels = int(value, 0)
            elif key == "shrink":
                spec.shrink_factor = int(value, 0)
            elif key == "video_len":
                spec.video_len = int(value, 0)
            elif key == "block_size":
                spec.block_size = int(value, 0)
            elif key == "total_memory":
                spec.total_memory_raw = int(value, 0)
            elif key == "payload":
                spec.payload_bytes = int(value, 0)
            elif key == "device_id":
                spec.device_id = value
            elif key == "model":
                spec.model_name = value
            elif key == "source_es":
                with open(value, "rb") as es:
                    spec.source_es = es.read()
            else:
                raise InvalidSpec(f"{path}:{lineno}: unknown key {key!r}")
    return spec
