"""Region table for the recorder's on-disk layout.

The full-scale profile places every region at the offsets used by the
real device. Compact profiles keep the same region order, alignment and
x0x1000 offset scaling but shrink region lengths so whole fixtures fit
in a few megabytes. Parsers take a profile argument and default to full
scale; the synthesizer emits the profile it used as a JSON sidecar next
to the image (``<image>.layout.json``).
"""

import json
from dataclasses import asdict, dataclass

GIB = 1 << 30
OFFSET_SCALE = 0x1000  # stored offsets/lengths are divided by this
START_SECTORS = 40  # protective MBR, GPT, machine data
MACHINE_DATA_LBA = 34
SECONDARY_HEADER_TAIL_SECTOR = 32  # secondary GPT header sits here in the tail

PROFILE_SIDECAR_SUFFIX = ".layout.json"


def align_up(value: int, align: int = OFFSET_SCALE) -> int:
    return (value + align - 1) & ~(align - 1)


@dataclass(frozen=True)
class LayoutProfile:
    """Partition-1 region offsets plus disk-level partition sizes.

    All partition-1 fields are partition-relative byte offsets/lengths.
    """

    shrink_factor: int
    header_len: int
    block_list_start: int
    block_list_len: int
    channel_list_start: int
    channel_list_len: int
    record_state_start: int
    record_subregion_len: int
    record_subregions: int
    fixed_start: int
    video_start: int
    partition2_len: int
    tail_len: int

    @property
    def fixed_len(self) -> int:
        return self.video_start - self.fixed_start

    @property
    def record_state_len(self) -> int:
        return self.record_subregions * self.record_subregion_len

    def record_subregion_offset(self, channel: int) -> int:
        """Start of a channel's record-state subregion (subregion 0 is unassigned)."""
        return self.record_state_start + channel * self.record_subregion_len

    @classmethod
    def full_scale(cls) -> "LayoutProfile":
        return cls(
            shrink_factor=1,
            header_len=0x4000,
            block_list_start=0x40000,
            block_list_len=0x3C0000,
            channel_list_start=0x400000,
            channel_list_len=0x3FC00000,
            record_state_start=0x40000000,
            record_subregion_len=0x20000,
            record_subregions=9,
            fixed_start=0x40120000,
            video_start=0x80000000,
            partition2_len=10 * GIB,
            tail_len=2 * GIB,
        )

    @classmethod
    def compact(cls, shrink_factor: int) -> "LayoutProfile":
        """Shrunk layout: same region order and alignment, smaller lengths."""
        if shrink_factor < 2 or shrink_factor & (shrink_factor - 1):
            raise ValueError("shrink_factor must be a power of two >= 2")
        s = shrink_factor
        full = cls.full_scale()
        header_len = full.header_len  # 16 KB, not worth shrinking
        block_start = header_len
        block_len = max(align_up(full.block_list_len // s), 0x4000)
        chan_start = block_start + block_len
        chan_len = max(align_up(full.channel_list_len // s), 0x4000)
        rs_start = chan_start + chan_len
        sub_len = max(align_up(full.record_subregion_len // s), 0x1000)
        fixed_start = rs_start + full.record_subregions * sub_len
        fixed_len = max(min(align_up(full.fixed_len // s), 0x20000), 0x1000)
        video_start = align_up(fixed_start + fixed_len)
        return cls(
            shrink_factor=s,
            header_len=header_len,
            block_list_start=block_start,
            block_list_len=block_len,
            channel_list_start=chan_start,
            channel_list_len=chan_len,
            record_state_start=rs_start,
            record_subregion_len=sub_len,
            record_subregions=full.record_subregions,
            fixed_start=fixed_start,
            video_start=video_start,
            partition2_len=max(align_up(full.partition2_len // s, 512), 1 << 20),
            tail_len=max(align_up(full.tail_len // s, 512), 64 * 512),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LayoutProfile":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "LayoutProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())

    @classmethod
    def for_image(cls, image_path) -> "LayoutProfile":
        """Profile from the image's sidecar if present, else full scale."""
        import os

        sidecar = os.fspath(image_path) + PROFILE_SIDECAR_SUFFIX
        if os.path.exists(sidecar):
            return cls.load(sidecar)
        return cls.full_scale()

    def named_regions(self):
        """(name, partition-relative start, length) tuples in disk order."""
        return [
            ("header", 0, self.header_len),
            ("block-list", self.block_list_start, self.block_list_len),
            ("channel-list", self.channel_list_start, self.channel_list_len),
            ("record-state", self.record_state_start, self.record_state_len),
            ("fixed", self.fixed_start, self.fixed_len),
            ("video", self.video_start, 0),
        ]

    def region_name(self, rel_offset: int) -> str:
        if rel_offset >= self.video_start:
            return "video"
        name = "unmapped"
        for candidate, start, length in self.named_regions():
            if length and start <= rel_offset < start + length:
                name = candidate
        return name
