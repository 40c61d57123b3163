"""Forensic toolkit for the Honeywell NVR video file system."""

__version__ = "0.1.0"

from .diskimage import ByteRange, ImageHandle, create_image, open_image
from .layout import LayoutProfile
from .gpt import GptLayout, build_gpt, parse_gpt, parse_machine_data, regenerate_guids
from .metadata import (
    Partition1Header,
    parse_block_list,
    parse_channel_list,
    parse_partition1_header,
    parse_record_state,
    render_timestamp,
)
from .framestream import (
    CarvedStream,
    CustomFrameHeader,
    ExportMode,
    FrameRecord,
    StreamSegment,
    carve,
    classify_nal,
    scan_frames,
    segment_streams,
)
from .deletion import (
    DeletedStreamSet,
    DeletionVerdict,
    Mechanism,
    classify_image,
    compare_pre_post,
    find_deleted_streams,
)
from .bindiff import DiffRange, DiffReport, diff_images
from .synth import (
    DeletionAction,
    GroundTruth,
    RecordingRound,
    SynthSpec,
    Synthesizer,
    synthesize,
)

__all__ = [
    "ByteRange", "ImageHandle", "create_image", "open_image",
    "LayoutProfile",
    "GptLayout", "build_gpt", "parse_gpt", "parse_machine_data",
    "regenerate_guids",
    "Partition1Header", "parse_block_list", "parse_channel_list",
    "parse_partition1_header", "parse_record_state", "render_timestamp",
    "CarvedStream", "CustomFrameHeader", "ExportMode", "FrameRecord",
    "StreamSegment", "carve", "classify_nal", "scan_frames", "segment_streams",
    "DeletedStreamSet", "DeletionVerdict", "Mechanism", "classify_image",
    "compare_pre_post", "find_deleted_streams",
    "DiffRange", "DiffReport", "diff_images",
    "DeletionAction", "GroundTruth", "RecordingRound", "SynthSpec",
    "Synthesizer", "synthesize",
]
