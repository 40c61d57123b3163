"""GPT scaffolding: protective MBR, headers, entry arrays, machine data.

Parsing is deliberately non-fatal about checksum failures: evidence
images are often damaged, so CRC validity is recorded per header and the
layout is recovered from the secondary copy when the primary is bad. On
this device family the secondary entry array sits at sector 0 of the
unpartitioned tail and the secondary header at tail sector 32 (not at
the last LBA as plain UEFI systems do).
"""

import struct
import uuid
import zlib
from dataclasses import dataclass, field
from typing import List, Optional

from .diskimage import ByteRange, ImageHandle, SECTOR_SIZE
from .errors import InsufficientSize, NoGptSignature, TruncatedImage
from .layout import (
    GIB,
    LayoutProfile,
    MACHINE_DATA_LBA,
    SECONDARY_HEADER_TAIL_SECTOR,
    START_SECTORS,
)

GPT_SIGNATURE = b"EFI PART"
GPT_REVISION = b"\x00\x00\x01\x00"
HEADER_SIZE = 92
ENTRY_SIZE = 128
NUM_ENTRIES = 4  # entry array fits in one sector, as on the real device

# Arbitrary fixed type GUID for the proprietary video partition; partition 2
# carries the standard Linux filesystem data GUID.
VIDEO_PARTITION_TYPE = uuid.UUID("9a583e49-66a1-41c3-b5b9-0d91f218a624")
LINUX_FS_TYPE = uuid.UUID("0fc63daf-8483-4772-8e79-3d69d8477de4")

_HEADER_FMT = "<8s4sII4xQQQQ16sQIII"


@dataclass
class GptHeader:
    signature: bytes
    revision: bytes
    header_size: int
    header_crc32: int
    current_lba: int
    backup_lba: int
    first_usable_lba: int
    last_usable_lba: int
    disk_guid: uuid.UUID
    entry_array_lba: int
    num_entries: int
    entry_size: int
    entries_crc32: int
    crc_valid: bool = False
    entries_crc_valid: bool = False
    lba: int = 0


@dataclass
class PartitionEntry:
    type_guid: uuid.UUID
    unique_guid: uuid.UUID
    first_lba: int
    last_lba: int
    attributes: int
    name: str

    @property
    def empty(self) -> bool:
        return self.type_guid.int == 0

    def byte_range(self) -> ByteRange:
        return ByteRange(
            self.first_lba * SECTOR_SIZE,
            (self.last_lba - self.first_lba + 1) * SECTOR_SIZE,
        )


@dataclass
class MachineData:
    raw: bytes
    device_id: str
    model_name: str
    strings: List[str] = field(default_factory=list)


@dataclass
class GptLayout:
    protective_mbr_valid: bool
    primary: Optional[GptHeader]
    entries: List[PartitionEntry]
    secondary: Optional[GptHeader]
    secondary_entries_lba: int
    machine: MachineData
    partition1_range: Optional[ByteRange]
    partition2_range: Optional[ByteRange]
    source: str = "primary"  # which header the entries were read from

    def partition_for_offset(self, abs_offset: int):
        """(partition number, relative offset) or (None, None)."""
        for num, rng in ((1, self.partition1_range), (2, self.partition2_range)):
            if rng is not None and rng.contains(abs_offset):
                return num, abs_offset - rng.offset
        return None, None


def _crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _parse_header(sector: bytes, lba: int) -> Optional[GptHeader]:
    if sector[:8] != GPT_SIGNATURE:
        return None
    (sig, rev, hsize, hcrc, cur, back, first, last, guid_le,
     entry_lba, nent, esize, ecrc) = struct.unpack_from(_HEADER_FMT, sector)
    hsize = min(max(hsize, HEADER_SIZE), SECTOR_SIZE)
    blob = bytearray(sector[:hsize])
    blob[16:20] = b"\x00" * 4
    return GptHeader(
        signature=sig,
        revision=rev,
        header_size=hsize,
        header_crc32=hcrc,
        current_lba=cur,
        backup_lba=back,
        first_usable_lba=first,
        last_usable_lba=last,
        disk_guid=uuid.UUID(bytes_le=guid_le),
        entry_array_lba=entry_lba,
        num_entries=nent,
        entry_size=esize,
        entries_crc32=ecrc,
        crc_valid=_crc32(bytes(blob)) == hcrc,
        lba=lba,
    )


def _pack_header(hdr: GptHeader) -> bytes:
    blob = bytearray(SECTOR_SIZE)
    struct.pack_into(
        _HEADER_FMT, blob, 0,
        GPT_SIGNATURE, hdr.revision, HEADER_SIZE, 0,
        hdr.current_lba, hdr.backup_lba, hdr.first_usable_lba,
        hdr.last_usable_lba, hdr.disk_guid.bytes_le, hdr.entry_array_lba,
        hdr.num_entries, hdr.entry_size, hdr.entries_crc32,
    )
    crc = _crc32(bytes(blob[:HEADER_SIZE]))
    struct.pack_into("<I", blob, 16, crc)
    hdr.header_crc32 = crc
    return bytes(blob)


def _parse_entry(raw: bytes) -> PartitionEntry:
    type_le = raw[0:16]
    uniq_le = raw[16:32]
    first, last, attrs = struct.unpack_from("<QQQ", raw, 32)
    name = raw[56:128].decode("utf-16-le").split("\x00", 1)[0]
    return PartitionEntry(
        type_guid=uuid.UUID(bytes_le=type_le),
        unique_guid=uuid.UUID(bytes_le=uniq_le),
        first_lba=first,
        last_lba=last,
        attributes=attrs,
        name=name,
    )


def _pack_entry(entry: PartitionEntry) -> bytes:
    raw = bytearray(ENTRY_SIZE)
    raw[0:16] = entry.type_guid.bytes_le
    raw[16:32] = entry.unique_guid.bytes_le
    struct.pack_into("<QQQ", raw, 32, entry.first_lba, entry.last_lba,
                     entry.attributes)
    encoded = entry.name.encode("utf-16-le")[:72]
    raw[56:56 + len(encoded)] = encoded
    return bytes(raw)


def _check_protective_mbr(sector: bytes) -> bool:
    if sector[510:512] != b"\x55\xaa":
        return False
    for i in range(4):
        if sector[0x1BE + i * 16 + 4] == 0xEE:
            return True
    return False


def _extract_strings(raw: bytes) -> List[str]:
    """Printable-ASCII runs of >= 4 chars that are NUL-terminated in place."""
    runs = []
    i, n = 0, len(raw)
    while i < n:
        if 0x20 <= raw[i] <= 0x7E:
            j = i
            while j < n and 0x20 <= raw[j] <= 0x7E:
                j += 1
            if j - i >= 4 and j < n and raw[j] == 0:
                runs.append(raw[i:j].decode("ascii"))
            i = j
        else:
            i += 1
    return runs


def parse_machine_data(handle: ImageHandle) -> MachineData:
    """Best-effort device strings from the machine-data sector (LBA 34)."""
    if handle.size_bytes < (MACHINE_DATA_LBA + 1) * SECTOR_SIZE:
        raise TruncatedImage("image smaller than 35 sectors")
    raw = handle.read_sector(MACHINE_DATA_LBA)
    strings = _extract_strings(raw)
    if len(strings) >= 2:
        device_id, model_name = strings[0], strings[1]
    elif len(strings) == 1:
        device_id, model_name = "", strings[0]
    else:
        device_id = model_name = ""
    return MachineData(raw=raw, device_id=device_id, model_name=model_name,
                       strings=strings)


def _read_entries(handle: ImageHandle, hdr: GptHeader):
    nbytes = hdr.num_entries * hdr.entry_size
    if nbytes <= 0 or nbytes > 1 << 20:
        return []
    start = hdr.entry_array_lba * SECTOR_SIZE
    if start + nbytes > handle.size_bytes:
        return []
    raw = handle.read_at(start, nbytes)
    hdr.entries_crc_valid = _crc32(raw) == hdr.entries_crc32
    entries = []
    for i in range(hdr.num_entries):
        if hdr.entry_size < ENTRY_SIZE:
            break
        entries.append(_parse_entry(raw[i * hdr.entry_size:i * hdr.entry_size + ENTRY_SIZE]))
    return entries


def _secondary_candidates(handle: ImageHandle, profile: Optional[LayoutProfile]):
    last_lba = handle.size_bytes // SECTOR_SIZE - 1
    cands = [last_lba]
    for tail_len in ([profile.tail_len] if profile else []) + [2 * GIB]:
        lba = (handle.size_bytes - tail_len) // SECTOR_SIZE + SECONDARY_HEADER_TAIL_SECTOR
        if 0 < lba <= last_lba:
            cands.append(lba)
    return cands


def _scan_for_secondary(handle: ImageHandle) -> Optional[GptHeader]:
    # Chunked backward scan of the last 2 GB-equivalent for the signature
    # at sector boundaries; holes in sparse images read fast.
    span = min(handle.size_bytes, 2 * GIB + (1 << 20))
    start = handle.size_bytes - span
    chunk = 4 << 20
    pos = handle.size_bytes
    while pos > start:
        lo = max(start, pos - chunk)
        buf = handle.read_at(lo, pos - lo)
        idx = buf.rfind(GPT_SIGNATURE)
        while idx >= 0:
            if (lo + idx) % SECTOR_SIZE == 0:
                hdr = _parse_header(buf[idx:idx + SECTOR_SIZE].ljust(SECTOR_SIZE, b"\x00"),
                                    (lo + idx) // SECTOR_SIZE)
                if hdr is not None and hdr.crc_valid:
                    return hdr
            idx = buf.rfind(GPT_SIGNATURE, 0, idx)
        pos = lo
    return None


def parse_gpt(handle: ImageHandle, profile: Optional[LayoutProfile] = None) -> GptLayout:
    """Parse protective MBR, both GPT headers and the partition entries."""
    if handle.size_bytes < START_SECTORS * SECTOR_SIZE:
        raise TruncatedImage("image smaller than the 40 start sectors")

    mbr_valid = _check_protective_mbr(handle.read_sector(0))
    primary = _parse_header(handle.read_sector(1), 1)

    secondary = None
    seen = set()
    candidates = []
    if primary is not None and primary.backup_lba:
        candidates.append(primary.backup_lba)
    candidates.extend(_secondary_candidates(handle, profile))
    for lba in candidates:
        if lba in seen or lba <= 0:
            continue
        seen.add(lba)
        if (lba + 1) * SECTOR_SIZE > handle.size_bytes:
            continue
        hdr = _parse_header(handle.read_sector(lba), lba)
        if hdr is not None and (secondary is None or
                                (hdr.crc_valid and not secondary.crc_valid)):
            secondary = hdr
        if secondary is not None and secondary.crc_valid:
            break
    if (secondary is None or not secondary.crc_valid) and \
            (primary is None or not primary.crc_valid):
        found = _scan_for_secondary(handle)
        if found is not None:
            secondary = found

    if primary is None and secondary is None:
        raise NoGptSignature("no valid GPT header found")

    if primary is not None and primary.crc_valid:
        source_hdr, source = primary, "primary"
    elif secondary is not None and secondary.crc_valid:
        source_hdr, source = secondary, "secondary"
    else:
        source_hdr, source = (primary, "primary") if primary else (secondary, "secondary")

    entries = [e for e in _read_entries(handle, source_hdr) if not e.empty]
    entries.sort(key=lambda e: e.first_lba)

    machine = parse_machine_data(handle)
    p1 = entries[0].byte_range() if len(entries) >= 1 else None
    p2 = entries[1].byte_range() if len(entries) >= 2 else None
    return GptLayout(
        protective_mbr_valid=mbr_valid,
        primary=primary,
        entries=entries,
        secondary=secondary,
        secondary_entries_lba=secondary.entry_array_lba if secondary else 0,
        machine=machine,
        partition1_range=p1,
        partition2_range=p2,
        source=source,
    )


@dataclass
class GptImage:
    """Byte layout produced by build_gpt, ready to write into an image."""

    start_sectors: bytes  # first 40 sectors
    tail: bytes  # first 33 sectors of the unpartitioned tail
    tail_offset: int

    def write_to(self, handle: ImageHandle) -> None:
        handle.write_at(0, self.start_sectors)
        handle.write_at(self.tail_offset, self.tail)


def _build_protective_mbr(disk_sectors: int) -> bytes:
    mbr = bytearray(SECTOR_SIZE)
    size = min(disk_sectors - 1, 0xFFFFFFFF)
    struct.pack_into("<B3sB3sII", mbr, 0x1BE, 0, b"\x00\x02\x00", 0xEE,
                     b"\xff\xff\xff", 1, size)
    mbr[510:512] = b"\x55\xaa"
    return bytes(mbr)


def _make_guid(rng) -> uuid.UUID:
    if rng is None:
        return uuid.uuid4()
    return uuid.UUID(int=rng.getrandbits(128), version=4)


def build_gpt(disk_size_bytes: int, partition1_bytes: int, *,
              profile: Optional[LayoutProfile] = None,
              device_id: str = "", model_name: str = "",
              rng=None) -> GptImage:
    """Emit start sectors and secondary structures for a healthy disk.

    Partition 1 starts right after the 40 start sectors, partition 2
    follows it, and the profile-sized unpartitioned tail holds the
    secondary entry array (tail sector 0) and header (tail sector 32).
    """
    profile = profile or LayoutProfile.full_scale()
    for name, val in (("disk size", disk_size_bytes), ("partition 1", partition1_bytes)):
        if val % SECTOR_SIZE:
            raise ValueError(f"{name} not sector aligned: {val}")
    start = START_SECTORS * SECTOR_SIZE
    needed = start + partition1_bytes + profile.partition2_len + profile.tail_len
    if disk_size_bytes < needed:
        raise InsufficientSize(
            f"disk of {disk_size_bytes} bytes cannot hold layout of {needed}"
        )

    disk_sectors = disk_size_bytes // SECTOR_SIZE
    tail_first = (disk_size_bytes - profile.tail_len) // SECTOR_SIZE
    p1_first = START_SECTORS
    p1_last = p1_first + partition1_bytes // SECTOR_SIZE - 1
    p2_first = p1_last + 1
    p2_last = p2_first + profile.partition2_len // SECTOR_SIZE - 1

    entries = [
        PartitionEntry(VIDEO_PARTITION_TYPE, _make_guid(rng), p1_first, p1_last,
                       0, "video"),
        PartitionEntry(LINUX_FS_TYPE, _make_guid(rng), p2_first, p2_last,
                       0, "system"),
    ]
    entry_blob = b"".join(_pack_entry(e) for e in entries)
    entry_blob += b"\x00" * (NUM_ENTRIES * ENTRY_SIZE - len(entry_blob))
    entries_crc = _crc32(entry_blob)

    disk_guid = _make_guid(rng)
    sec_hdr_lba = tail_first + SECONDARY_HEADER_TAIL_SECTOR
    common = dict(
        signature=GPT_SIGNATURE, revision=GPT_REVISION, header_size=HEADER_SIZE,
        header_crc32=0, first_usable_lba=p1_first, last_usable_lba=tail_first - 1,
        disk_guid=disk_guid, num_entries=NUM_ENTRIES, entry_size=ENTRY_SIZE,
        entries_crc32=entries_crc,
    )
    primary = GptHeader(current_lba=1, backup_lba=sec_hdr_lba, entry_array_lba=2,
                        **common)
    secondary = GptHeader(current_lba=sec_hdr_lba, backup_lba=1,
                          entry_array_lba=tail_first, **common)

    start_sectors = bytearray(START_SECTORS * SECTOR_SIZE)
    start_sectors[0:SECTOR_SIZE] = _build_protective_mbr(disk_sectors)
    start_sectors[SECTOR_SIZE:2 * SECTOR_SIZE] = _pack_header(primary)
    start_sectors[2 * SECTOR_SIZE:2 * SECTOR_SIZE + len(entry_blob)] = entry_blob
    machine = bytearray(SECTOR_SIZE)
    blob = device_id.encode("ascii") + b"\x00" + model_name.encode("ascii") + b"\x00"
    machine[:len(blob)] = blob
    start_sectors[MACHINE_DATA_LBA * SECTOR_SIZE:
                  MACHINE_DATA_LBA * SECTOR_SIZE + SECTOR_SIZE] = machine

    tail = bytearray((SECONDARY_HEADER_TAIL_SECTOR + 1) * SECTOR_SIZE)
    tail[0:len(entry_blob)] = entry_blob
    tail[SECONDARY_HEADER_TAIL_SECTOR * SECTOR_SIZE:] = _pack_header(secondary)

    return GptImage(start_sectors=bytes(start_sectors), tail=bytes(tail),
                    tail_offset=tail_first * SECTOR_SIZE)


def regenerate_guids(handle: ImageHandle, rng=None,
                     profile: Optional[LayoutProfile] = None) -> GptLayout:
    """Replace disk and partition GUIDs with fresh ones, fixing all CRCs.

    LBA fields are left untouched; both headers and both entry arrays are
    rewritten in place. This is the start-sector effect of a format.
    """
    layout = parse_gpt(handle, profile)
    if layout.primary is None or layout.secondary is None:
        raise NoGptSignature("cannot regenerate GUIDs without both headers")

    new_disk_guid = _make_guid(rng)
    slots = _read_entries(handle, layout.primary)
    for entry in slots:
        if not entry.empty:
            entry.unique_guid = _make_guid(rng)
    entry_blob = b"".join(_pack_entry(e) for e in slots)
    entries_crc = _crc32(entry_blob)

    for hdr, entries_lba in ((layout.primary, layout.primary.entry_array_lba),
                             (layout.secondary, layout.secondary.entry_array_lba)):
        hdr.disk_guid = new_disk_guid
        hdr.entries_crc32 = entries_crc
        handle.write_at(entries_lba * SECTOR_SIZE, entry_blob)
        handle.write_at(hdr.lba * SECTOR_SIZE, _pack_header(hdr))
    return parse_gpt(handle, profile)
