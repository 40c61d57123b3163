import random
import struct

import pytest

from nvrfs.diskimage import ByteRange, create_image, open_image
from nvrfs.errors import NoStartCode
from nvrfs.framestream import (
    DELIMITER,
    HEADER_LEN,
    CustomFrameHeader,
    ExportMode,
    NalKind,
    ScanDiagnostics,
    annotate_channels,
    carve,
    classify_nal,
    header_nal_agreement,
    scan_frames,
    segment_streams,
    validate_header,
)
from nvrfs.metadata import parse_channel_list
from nvrfs.synth import RecordingRound, SynthSpec, synthesize

from conftest import T0, parse_image


FIG8_HEADER = bytes([0x82, 0x80, 0x01, 0x00,  # IDR frame, magic
                     0x80, 0x07, 0x38, 0x04,  # 1920 x 1080
                     0x60, 0x65, 0x01, 0x00,  # NAL length 0x016560
                     0xE6, 0xCE, 0x1B, 0x5C, 0x86, 0x44, 0x06, 0x00])


def video_region(handle, layout, profile):
    start = layout.partition1_range.offset + profile.video_start
    end = min(layout.partition1_range.end, handle.size_bytes)
    return ByteRange(start, end - start)


def test_custom_header_decode_idr_1080p():
    header = CustomFrameHeader.unpack(FIG8_HEADER)
    assert header.is_idr and header.frame_type == 0x82
    assert (header.width, header.height) == (1920, 1080)
    assert header.nal_length == 0x016560
    assert header.timestamp_us == 0x000644865C1BCEE6
    assert header.pack() == FIG8_HEADER


def test_header_scan_accepts_fig8_frame(tmp_path):
    with create_image(tmp_path / "one.img", 1 << 21) as handle:
        payload = b"\x00\x00\x00\x01\x65" + b"\x7f" * (0x016560 - 5)
        handle.write_at(0x1000, FIG8_HEADER + payload)
        frames = list(scan_frames(handle, ByteRange(0, 1 << 21)))
    assert len(frames) == 1
    frame = frames[0]
    assert frame.abs_offset == 0x1000
    assert frame.header.nal_length == 0x016560
    assert frame.payload_range == ByteRange(0x1000 + 20, 0x016560)


def test_all_zero_window_is_delimiter_not_header(tmp_path):
    with create_image(tmp_path / "z.img", 1 << 16) as handle:
        diags = ScanDiagnostics()
        frames = list(scan_frames(handle, ByteRange(0, 1 << 16), diags))
    assert frames == []
    assert diags.delimiters and diags.delimiters[0] == 0


def test_validation_gate_reasons():
    good = bytearray(FIG8_HEADER + b"\x00\x00\x00\x01\x65")
    assert validate_header(bytes(good)) is None
    bad_type = bytearray(good)
    bad_type[0] = 0x55
    assert validate_header(bytes(bad_type)) == "frame-type"
    bad_magic = bytearray(good)
    bad_magic[2] = 0x99
    assert validate_header(bytes(bad_magic)) == "magic"
    bad_dim = bytearray(good)
    struct.pack_into("<H", bad_dim, 4, 9000)
    assert validate_header(bytes(bad_dim)) == "dimensions"
    bad_len = bytearray(good)
    struct.pack_into("<I", bad_len, 8, 64 << 20)
    assert validate_header(bytes(bad_len)) == "nal-length"
    bad_sc = bytearray(good)
    bad_sc[20] = 0x01
    assert validate_header(bytes(bad_sc)) == "start-code"


def brute_force_offsets(blob: bytes, base: int):
    """Oracle: try the validation gate at every byte offset."""
    hits = []
    pos = 0
    while pos + HEADER_LEN + 4 <= len(blob):
        if validate_header(blob[pos:pos + HEADER_LEN + 4]) is None:
            length = struct.unpack_from("<I", blob, pos + 8)[0]
            hits.append(base + pos)
            pos += HEADER_LEN + length
        else:
            pos += 1
    return hits


def test_scan_completeness_against_ground_truth(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    assert [f.abs_offset for f in frames] == [f.offset for f in gt.frames]
    assert [f.header.timestamp_us for f in frames] == \
        [f.timestamp_us for f in gt.frames]
    assert [f.header.frame_type for f in frames] == \
        [f.frame_type for f in gt.frames]
    handle.close()


def test_scan_matches_brute_force_oracle(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    region = video_region(handle, layout, profile)
    blob = handle.read_range(region)
    expected = brute_force_offsets(blob, region.offset)
    frames = list(scan_frames(handle, region))
    assert [f.abs_offset for f in frames] == expected
    handle.close()


def test_rejected_header_does_not_stop_scan(tmp_path):
    spec = SynthSpec(num_channels=1,
                     rounds=[RecordingRound(start_time=T0, duration_s=10)],
                     shrink_factor=1024, seed=13)
    gt = synthesize(spec, tmp_path / "mut.img")
    victim = gt.frames[3]
    with open_image(tmp_path / "mut.img", writable=True) as wh:
        wh.write_at(victim.offset, b"\x55")  # frame type becomes invalid
    handle, layout, profile, _ = parse_image(tmp_path / "mut.img")
    region = video_region(handle, layout, profile)
    blob = handle.read_range(region)
    expected = brute_force_offsets(blob, region.offset)
    diags = ScanDiagnostics()
    frames = list(scan_frames(handle, region, diags))
    assert [f.abs_offset for f in frames] == expected
    assert victim.offset not in [f.abs_offset for f in frames]
    # Every other ground-truth frame is still found at its exact offset.
    survivors = [f.offset for f in gt.frames if f.offset != victim.offset]
    assert [f.abs_offset for f in frames] == survivors
    assert any(off == victim.offset for off, _ in diags.rejects)
    handle.close()


def test_segments_match_ground_truth(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    segments = segment_streams(frames, handle)
    live = gt.segments
    assert len(segments) == len(live)
    for seg, expect in zip(segments, live):
        assert seg.start_offset == expect.slot_start
        assert seg.end_offset == expect.data_end
        assert seg.first_ts == expect.first_ts
        assert seg.last_ts == expect.last_ts
        ts = [f.header.timestamp_us for f in seg.frames]
        assert ts == sorted(ts)
    handle.close()


def test_single_frame_then_delimiter(tmp_path):
    with create_image(tmp_path / "single.img", 1 << 16) as handle:
        payload = b"\x00\x00\x00\x01\x41" + b"\x33" * 59
        header = CustomFrameHeader(0x02, 320, 240, len(payload), T0 * 10**6)
        handle.write_at(0, header.pack() + payload + DELIMITER)
        frames = list(scan_frames(handle, ByteRange(0, 1 << 16)))
        segments = segment_streams(frames, handle)
    assert len(segments) == 1
    assert len(segments[0].frames) == 1


def test_segment_lengths_match_channel_list(recorded):
    # Consecutive slot starts differ by exactly the stored burst length.
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    base = layout.partition1_range.offset
    entries = parse_channel_list(handle, base, profile)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    segments = segment_streams(frames, handle)
    starts = [s.start_offset for s in segments]
    for entry, start, nxt in zip(entries, starts, starts[1:]):
        assert nxt - start == entry.frame_length.resolved
    handle.close()


def test_annotate_channels(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    base = layout.partition1_range.offset
    entries = parse_channel_list(handle, base, profile)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    segments = segment_streams(frames, handle)
    annotate_channels(segments, entries, base)
    expected = [s.channel for s in gt.segments]
    assert [s.channel_hint for s in segments] == expected
    handle.close()


def test_delimiter_soundness(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    for frame in frames:
        span = ByteRange(frame.abs_offset, HEADER_LEN + frame.payload_range.length)
        for delim in gt.delimiters:
            assert not span.overlaps(ByteRange(delim, len(DELIMITER)))
    handle.close()


# -- carving ------------------------------------------------------------------

def test_raw_carve_is_byte_identical(recorded, tmp_path):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    seg = segment_streams(frames, handle)[0]
    out = tmp_path / "seg0.dat"
    carved = carve(handle, seg, ExportMode.RAW, out)
    expected = handle.read_at(seg.start_offset, seg.length)
    assert out.read_bytes() == expected
    assert carved.byte_count == seg.length
    handle.close()


def test_annexb_carve_length_is_sum_of_nal_lengths(recorded, tmp_path):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    seg = segment_streams(frames, handle)[0]
    out = tmp_path / "seg0.h264"
    carve(handle, seg, ExportMode.ANNEXB, out)
    data = out.read_bytes()
    assert len(data) == sum(f.header.nal_length for f in seg.frames)
    assert data.startswith(b"\x00\x00\x00\x01")
    handle.close()


def test_annexb_carve_inverts_es_wrap(tmp_path):
    # Wrap a reference elementary stream; unwrapping must reproduce it.
    from nvrfs.synth import make_filler_stream

    rng = random.Random(77)
    es = b"".join(p for _, p in make_filler_stream(rng, 40, 8, 700))
    spec = SynthSpec(num_channels=1,
                     rounds=[RecordingRound(start_time=T0, duration_s=5)],
                     shrink_factor=1024, seed=5, source_es=es)
    gt = synthesize(spec, tmp_path / "eswrap.img")
    assert gt.source_es_segment is not None
    handle, layout, profile, _ = parse_image(tmp_path / "eswrap.img")
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    segments = segment_streams(frames, handle)
    target = [s for s in segments
              if s.start_offset == gt.segments[gt.source_es_segment].slot_start]
    out = tmp_path / "unwrapped.h264"
    carve(handle, target[0], ExportMode.ANNEXB, out)
    assert out.read_bytes() == es
    # SPS/PPS from the source survive in the export.
    assert b"\x00\x00\x00\x01\x67" in out.read_bytes()
    handle.close()


# -- NAL classification ---------------------------------------------------------

def test_classify_nal_constants():
    assert classify_nal(b"\x00\x00\x00\x01\x65") is NalKind.IDR_SLICE
    assert classify_nal(b"\x00\x00\x00\x01\x67") is NalKind.SPS
    assert classify_nal(b"\x00\x00\x00\x01\x68") is NalKind.PPS
    assert classify_nal(b"\x00\x00\x00\x01\x41") is NalKind.NON_IDR_SLICE
    assert classify_nal(b"\x00\x00\x00\x01\x06") is NalKind.OTHER


def test_classify_nal_requires_start_code():
    with pytest.raises(NoStartCode):
        classify_nal(b"\x00\x00\x01\x65\x00")
    with pytest.raises(NoStartCode):
        classify_nal(b"\x00\x00\x00\x01")


def test_header_nal_agreement(recorded):
    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    # IDR headers open with SPS in this corpus; non-IDR with a non-IDR slice.
    for frame in frames:
        assert header_nal_agreement(frame, handle) is None
    handle.close()


def test_header_nal_disagreement_warns(tmp_path):
    with create_image(tmp_path / "dis.img", 1 << 16) as handle:
        payload = b"\x00\x00\x00\x01\x41" + b"\x22" * 40  # non-IDR slice
        header = CustomFrameHeader(0x82, 640, 480, len(payload), T0 * 10**6)
        handle.write_at(0, header.pack() + payload + DELIMITER)
        frames = list(scan_frames(handle, ByteRange(0, 1 << 16)))
        warning = header_nal_agreement(frames[0], handle)
    assert warning is not None and "NON_IDR_SLICE" in warning


def test_parallel_scan_equals_sequential(recorded):
    from nvrfs.framestream import scan_frames_parallel

    path, gt = recorded
    handle, layout, profile, _ = parse_image(path)
    region = video_region(handle, layout, profile)
    sequential = list(scan_frames(handle, region))
    for workers in (2, 3, 8):
        parallel = scan_frames_parallel(handle, region, workers=workers)
        assert [f.abs_offset for f in parallel] == \
            [f.abs_offset for f in sequential]
        assert [f.header for f in parallel] == [f.header for f in sequential]
    handle.close()


def test_next_data_offset_bounds(tmp_path):
    from nvrfs.diskimage import create_image

    with create_image(tmp_path / "holes.img", 1 << 24) as handle:
        handle.write_at(1 << 22, b"payload")
        for pos in (0, 1 << 22, (1 << 24) - 1):
            nxt = handle.next_data_offset(pos)
            assert pos <= nxt <= handle.size_bytes
        assert handle.next_data_offset(1 << 24) == 1 << 24


def test_length_convention_diagnostic(tmp_path):
    # A stream whose stored lengths exclude the start code still scans
    # (resync recovers every frame) and the diagnostics note the variant.
    with create_image(tmp_path / "conv.img", 1 << 16) as handle:
        pos = 0
        offsets = []
        for i in range(4):
            body = bytes([0x41]) + bytes((j % 250) + 1 for j in range(50))
            payload = b"\x00\x00\x00\x01" + body
            # nal_length counts only the bytes after the start code here.
            header = CustomFrameHeader(0x02, 640, 480, len(body),
                                       (T0 + i) * 10**6)
            handle.write_at(pos, header.pack() + payload)
            offsets.append(pos)
            pos += HEADER_LEN + len(payload)
        handle.write_at(pos, DELIMITER)
        diags = ScanDiagnostics()
        frames = list(scan_frames(handle, ByteRange(0, 1 << 16), diags))
    assert [f.abs_offset for f in frames] == offsets
    assert diags.length_convention == "excludes_start_code"


# -- resynchronization property --------------------------------------------------

def test_resync_property_payload_corruption(tmp_path):
    spec = SynthSpec(num_channels=2,
                     rounds=[RecordingRound(start_time=T0, duration_s=50,
                                            fps=2.0, fps_keyint=7)],
                     shrink_factor=1024, seed=31)
    gt = synthesize(spec, tmp_path / "resync.img")
    rng = random.Random(99)
    handle = open_image(tmp_path / "resync.img", writable=True)
    corrupted = set()
    for trial in range(10):
        frame = rng.choice(gt.frames)
        if frame.length <= HEADER_LEN + 6:
            continue
        # Strictly inside the payload, sparing the start code.
        rel = rng.randrange(HEADER_LEN + 5, frame.length)
        handle.write_at(frame.offset + rel, bytes([rng.randrange(1, 255)]))
        corrupted.add(frame.offset)
    _, layout, profile, _ = parse_image(tmp_path / "resync.img")
    frames = list(scan_frames(handle, video_region(handle, layout, profile)))
    found = {f.abs_offset for f in frames}
    for gtf in gt.frames:
        if gtf.offset not in corrupted:
            assert gtf.offset in found, f"lost clean frame at {gtf.offset:#x}"
    handle.close()
