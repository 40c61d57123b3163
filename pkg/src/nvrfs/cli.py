"""Command-line front end: inspect, classify, carve, diff, synth.

Exit codes: 0 success (classify: no deletion detected), 2 parse or usage
failure, 3 classify detected a deletion mechanism, 4 carve --deleted-only
found nothing to carve.
"""

import argparse
import os
import sys

from . import __version__
from .bindiff import diff_images
from .deletion import (
    Mechanism,
    classify_image,
    find_deleted_streams,
    scan_video_frames,
)
from .diskimage import open_image
from .errors import Error
from .framestream import (
    ExportMode,
    annotate_channels,
    carve,
    header_nal_agreement,
    segment_streams,
)
from .gpt import parse_gpt
from .layout import LayoutProfile
from .metadata import (
    parse_block_list,
    parse_channel_list,
    parse_partition1_header,
    parse_record_state,
    render_timestamp,
)
from .report import Report, hexint, image_fingerprint
from .synth import parse_wallclock, load_spec_file, synthesize

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DELETION = 3
EXIT_NOTHING_CARVED = 4


def _load_profile(args, image_path) -> LayoutProfile:
    if getattr(args, "layout_profile", None):
        return LayoutProfile.load(args.layout_profile)
    return LayoutProfile.for_image(image_path)


def _emit(report: Report, args, text_lines) -> None:
    if args.json:
        sys.stdout.write(report.to_json())
    else:
        for line in text_lines:
            print(line)


def _parse_image(path, profile):
    handle = open_image(path)
    layout = parse_gpt(handle, profile)
    if layout.partition1_range is None:
        handle.close()
        raise Error("GPT parsed but no partition entries found")
    return handle, layout


def _ts_cell(seconds: int) -> str:
    return f"{render_timestamp(seconds)} ({hexint(seconds)})"


# -- inspect ----------------------------------------------------------------

def cmd_inspect(args) -> int:
    profile = _load_profile(args, args.image)
    handle, layout = _parse_image(args.image, profile)
    base = layout.partition1_range.offset
    header = parse_partition1_header(handle, base, profile)
    blocks = parse_block_list(handle, base, profile)
    channels = parse_channel_list(handle, base, profile)
    tables = parse_record_state(handle, base, args.channels, profile)

    findings = {
        "gpt": {
            "protective_mbr_valid": layout.protective_mbr_valid,
            "source": layout.source,
            "disk_guid": str((layout.primary or layout.secondary).disk_guid),
            "primary_crc_valid": bool(layout.primary and layout.primary.crc_valid),
            "secondary_crc_valid": bool(layout.secondary
                                        and layout.secondary.crc_valid),
            "partitions": [
                {"first_lba": e.first_lba, "last_lba": e.last_lba,
                 "name": e.name, "unique_guid": str(e.unique_guid)}
                for e in layout.entries
            ],
        },
        "header": {
            "video_start": hexint(header.video_start.resolved),
            "next_write": hexint(header.next_write.resolved),
            "available_memory_raw": hexint(header.available_memory.raw),
            "total_memory_raw": hexint(header.total_memory.raw),
            "block_groups": [
                {"group": g.group_number, "start_time": g.start_time,
                 "start_rendered": render_timestamp(g.start_time)}
                for g in header.block_groups
            ],
        },
        "block_entries": len(blocks),
        "channel_entries": len(channels),
        "record_state": [
            {"channel": t.channel, "anchors": t.anchor_count}
            for t in tables
        ],
    }
    report = Report(version=__version__, command="inspect",
                    image=image_fingerprint(handle, layout.machine),
                    findings=findings)

    lines = [
        f"image: {handle.path} ({handle.size_bytes} bytes)",
        f"device: id={layout.machine.device_id!r} model={layout.machine.model_name!r}",
        f"gpt: source={layout.source} mbr_valid={layout.protective_mbr_valid} "
        f"primary_crc={findings['gpt']['primary_crc_valid']} "
        f"secondary_crc={findings['gpt']['secondary_crc_valid']}",
    ]
    for e in layout.entries:
        lines.append(f"  partition {e.name!r}: LBA {e.first_lba}..{e.last_lba} "
                     f"guid {e.unique_guid}")
    lines += [
        f"header: video_start={hexint(header.video_start.resolved)} "
        f"next_write={hexint(header.next_write.resolved)}",
        f"        available={hexint(header.available_memory.raw)} "
        f"total={hexint(header.total_memory.raw)} (raw x0x1000)",
        f"block groups: {len(header.block_groups)}",
    ]
    for g in header.block_groups:
        lines.append(f"  group {g.group_number}: start {_ts_cell(g.start_time)}")
    lines.append(f"block entries: {len(blocks)}")
    lines.append(f"channel entries: {len(channels)}")
    if args.verbose:
        for e in channels[:16]:
            # Both offset interpretations are shown since stored values
            # drop the low 12 bits; the x0x1000 reading is authoritative.
            lines.append(
                f"  ch{e.channel} {'main' if e.is_main else 'sub'} "
                f"len={hexint(e.frame_length.resolved)} "
                f"start={_ts_cell(e.frame_start_time)} "
                f"offset={hexint(e.frame_start_offset.resolved)} "
                f"(alt x0x100: {hexint(e.frame_start_offset.raw * 0x100)})")
    for t in tables:
        if t.anchor_count:
            lines.append(f"record state ch{t.channel}: {t.anchor_count} anchors, "
                         f"first {_ts_cell(t.anchors[0].hour_timestamp)}")

    if args.figure:
        from .viz import render_disk_map

        render_disk_map(args.figure, profile, base, handle.size_bytes,
                        title=os.path.basename(handle.path))
        lines.append(f"figure: {args.figure}")
        findings["figure"] = args.figure
    _emit(report, args, lines)
    handle.close()
    return EXIT_OK


# -- classify -----------------------------------------------------------------

def cmd_classify(args) -> int:
    profile = _load_profile(args, args.image)
    handle, layout = _parse_image(args.image, profile)
    base = layout.partition1_range.offset
    header = parse_partition1_header(handle, base, profile)
    frames = scan_video_frames(handle, layout, profile, workers=args.workers)
    verdict = classify_image(handle, layout, header, frames, profile)

    findings = {
        "mechanism": verdict.mechanism.value,
        "confidence": verdict.confidence.value,
        "frames_scanned": len(frames),
        "evidence": [
            {"kind": ev.kind.value, "detail": ev.detail,
             "locations": [{"offset": hexint(r.offset),
                            "rel_offset": hexint(r.offset - base),
                            "length": r.length} for r in ev.locations]}
            for ev in verdict.evidence
        ],
    }
    report = Report(version=__version__, command="classify",
                    image=image_fingerprint(handle, layout.machine),
                    findings=findings)
    lines = [
        f"verdict: {verdict.mechanism.value} ({verdict.confidence.value})",
        f"frames scanned: {len(frames)}",
    ]
    for ev in verdict.evidence:
        lines.append(f"  [{ev.kind.value}] {ev.detail}")
        for r in ev.locations[:4]:
            lines.append(f"      at {hexint(r.offset)} "
                         f"(p1+{hexint(r.offset - base)}, {r.length} bytes)")

    if args.figure:
        from .viz import render_disk_map

        deleted = find_deleted_streams(handle, header, frames, layout,
                                       verdict, profile)
        flagged = {d.start_offset for d in deleted.streams}
        spans = []
        for seg in segment_streams(frames, handle):
            kind = "deleted" if seg.start_offset in flagged else "live"
            spans.append((kind, seg.start_offset, seg.length))
        render_disk_map(args.figure, profile, base, handle.size_bytes,
                        highlights=spans,
                        title=f"{os.path.basename(handle.path)}: "
                              f"{verdict.mechanism.value}")
        lines.append(f"figure: {args.figure}")
        findings["figure"] = args.figure
    _emit(report, args, lines)
    handle.close()
    return EXIT_OK if verdict.mechanism is Mechanism.NONE_DETECTED else EXIT_DELETION


# -- carve --------------------------------------------------------------------

def cmd_carve(args) -> int:
    profile = _load_profile(args, args.image)
    handle, layout = _parse_image(args.image, profile)
    base = layout.partition1_range.offset
    header = parse_partition1_header(handle, base, profile)
    channels = parse_channel_list(handle, base, profile)
    frames = scan_video_frames(handle, layout, profile, workers=args.workers)
    segments = segment_streams(frames, handle)
    annotate_channels(segments, channels, base)

    if args.deleted_only:
        verdict = classify_image(handle, layout, header, frames, profile)
        deleted = find_deleted_streams(handle, header, frames, layout,
                                       verdict, profile)
        wanted = {s.start_offset for s in deleted.streams}
        segments = [s for s in segments if s.start_offset in wanted]

    if args.from_ts is not None:
        bound = parse_wallclock(args.from_ts)
        segments = [s for s in segments if s.last_ts // 10**6 >= bound]
    if args.to_ts is not None:
        bound = parse_wallclock(args.to_ts)
        segments = [s for s in segments if s.first_ts // 10**6 <= bound]

    if args.deleted_only and not segments:
        print("no deleted streams found", file=sys.stderr)
        handle.close()
        return EXIT_NOTHING_CARVED

    os.makedirs(args.out, exist_ok=True)
    mode = ExportMode(args.mode)
    manifest = []
    warnings = []
    lines = [f"carving {len(segments)} segment(s) to {args.out} "
             f"(mode={mode.value})"]
    for seg in segments:
        for frame in seg.frames:
            if len(warnings) >= 100:
                break
            note = header_nal_agreement(frame, handle)
            if note:
                warnings.append(note)
        ch = f"ch{seg.channel_hint}" if seg.channel_hint is not None else "chx"
        name = f"{ch}_{seg.first_ts}_{seg.start_offset:#x}.{args.ext}"
        out_path = os.path.join(args.out, name)
        carved = carve(handle, seg, mode, out_path)
        manifest.append({
            "file": name,
            "channel": seg.channel_hint,
            "offset": hexint(seg.start_offset),
            "length": seg.length,
            "bytes_written": carved.byte_count,
            "frames": len(seg.frames),
            "first_ts": render_timestamp(seg.first_ts, micros=True),
            "last_ts": render_timestamp(seg.last_ts, micros=True),
        })
        lines.append(f"  {name}\t{len(seg.frames)} frames\t"
                     f"{render_timestamp(seg.first_ts, micros=True)} .. "
                     f"{render_timestamp(seg.last_ts, micros=True)}")

    findings = {"mode": mode.value, "output_dir": args.out,
                "deleted_only": bool(args.deleted_only), "streams": manifest}
    report = Report(version=__version__, command="carve",
                    image=image_fingerprint(handle, layout.machine),
                    findings=findings, warnings=warnings)
    for note in warnings[:8]:
        lines.append(f"  warning: {note}")
    if args.figure:
        from .viz import render_disk_map

        spans = [("carved", s.start_offset, s.length) for s in segments]
        render_disk_map(args.figure, profile, base, handle.size_bytes,
                        highlights=spans,
                        title=f"carved streams: {os.path.basename(handle.path)}")
        lines.append(f"figure: {args.figure}")
        findings["figure"] = args.figure
    _emit(report, args, lines)
    handle.close()
    return EXIT_OK


# -- diff ---------------------------------------------------------------------

def cmd_diff(args) -> int:
    a = open_image(args.image_a)
    b = open_image(args.image_b)
    layout = None
    if args.layout:
        layout = parse_gpt(a, None)
    report_data = diff_images(a, b, block_size=args.block_size, layout=layout,
                              coalesce_gap=args.coalesce_gap,
                              allow_unequal=args.allow_unequal)

    ranges = [
        {"offset": hexint(r.abs_offset), "length": r.length,
         "partition": r.partition,
         "rel_offset": hexint(r.rel_offset) if r.rel_offset is not None else None,
         "sample_a": r.sample_a.hex(), "sample_b": r.sample_b.hex()}
        for r in report_data.ranges
    ]
    findings = {
        "image_b": os.path.basename(b.path),
        "block_size": report_data.block_size,
        "compared_bytes": report_data.compared_bytes,
        "total_differing_bytes": report_data.total_differing_bytes,
        "range_count": len(report_data.ranges),
        "ranges": ranges,
    }
    report = Report(version=__version__, command="diff",
                    image=image_fingerprint(a), findings=findings)
    lines = [
        f"diff {a.path} vs {b.path}: {len(report_data.ranges)} range(s), "
        f"{report_data.total_differing_bytes} differing byte(s)",
        "offset\tlength\tpartition\trel_offset\tsample_a\tsample_b",
    ]
    for r in report_data.ranges:
        rel = hexint(r.rel_offset) if r.rel_offset is not None else "-"
        part = r.partition if r.partition is not None else "-"
        lines.append(f"{hexint(r.abs_offset)}\t{r.length}\t{part}\t{rel}\t"
                     f"{r.sample_a.hex()}\t{r.sample_b.hex()}")

    if args.figure:
        from .viz import render_disk_map

        profile = LayoutProfile.for_image(args.image_a)
        base = (layout.partition1_range.offset if layout
                else 40 * a.sector_size)
        spans = [("diff", r.abs_offset, r.length) for r in report_data.ranges]
        render_disk_map(args.figure, profile, base, a.size_bytes,
                        highlights=spans, title="differing ranges")
        lines.append(f"figure: {args.figure}")
        findings["figure"] = args.figure
    _emit(report, args, lines)
    a.close()
    b.close()
    return EXIT_OK


# -- synth --------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = load_spec_file(args.spec)
    gt = synthesize(spec, args.out)
    findings = {
        "image": os.path.basename(args.out),
        "ground_truth": os.path.basename(args.out) + ".gt.tsv",
        "layout_profile": os.path.basename(args.out) + ".layout.json",
        "channels": gt.num_channels,
        "frames": len(gt.frames),
        "segments": len(gt.segments),
        "deleted_segments": sum(1 for s in gt.segments if s.deleted),
        "events": gt.events,
        "video_len": gt.video_len,
        "block_size": gt.block_size,
    }
    with open_image(args.out) as handle:
        report = Report(version=__version__, command="synth",
                        image=image_fingerprint(handle), findings=findings)
    lines = [
        f"wrote {args.out}",
        f"  frames: {len(gt.frames)}  segments: {len(gt.segments)}  "
        f"deleted: {findings['deleted_segments']}",
        f"  sidecars: {findings['ground_truth']}, {findings['layout_profile']}",
    ]
    _emit(report, args, lines)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvrfs",
        description="Forensic toolkit for Honeywell NVR disk images: parse "
                    "the proprietary video file system, classify deletion "
                    "mechanisms, carve residual streams, diff images and "
                    "synthesize test fixtures.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, figure=True):
        p.add_argument("--json", action="store_true",
                       help="emit the structured JSON report")
        if figure:
            p.add_argument("--figure", metavar="PNG",
                           help="render a disk-map figure to this file")

    p = sub.add_parser("inspect", help="parse and print the file system layout")
    p.add_argument("image")
    p.add_argument("--layout-profile", help="layout profile JSON (defaults to "
                                            "the image's sidecar, else full scale)")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--verbose", action="store_true")
    common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("classify", help="detect which deletion mechanism ran")
    p.add_argument("image")
    p.add_argument("--layout-profile")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel scan workers for large images")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("carve", help="export video streams to playable files")
    p.add_argument("image")
    p.add_argument("--out", default="carved", help="output directory")
    p.add_argument("--mode", choices=["raw", "annexb"], default="raw")
    p.add_argument("--deleted-only", action="store_true",
                   help="carve only streams classified as deleted")
    p.add_argument("--from-ts", help="keep streams ending at/after this time")
    p.add_argument("--to-ts", help="keep streams starting at/before this time")
    p.add_argument("--ext", choices=["dat", "h264"], default="dat")
    p.add_argument("--layout-profile")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel scan workers for large images")
    common(p)
    p.set_defaults(func=cmd_carve)

    p = sub.add_parser("diff", help="block-wise byte diff of two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--block-size", type=lambda s: int(s, 0), default=1 << 20)
    p.add_argument("--layout", action="store_true",
                   help="annotate ranges with partition-relative offsets")
    p.add_argument("--coalesce-gap", type=lambda s: int(s, 0), default=0)
    p.add_argument("--allow-unequal", action="store_true",
                   help="diff the common prefix of unequal-size images")
    common(p)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("synth", help="generate a synthetic recorder image")
    p.add_argument("spec", help="key=value spec file")
    p.add_argument("out", help="output image path")
    common(p, figure=False)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Error as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
