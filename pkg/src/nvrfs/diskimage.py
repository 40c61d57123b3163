"""Sector-addressed random access to raw disk image files.

Images are never loaded whole: handles wrap a file descriptor and use
positional reads/writes (pread/pwrite), so one handle is safe for
concurrent readers. Synthetic images are created sparse, which keeps
multi-GB layouts cheap on disk.
"""

import errno
import os
from dataclasses import dataclass

from .errors import NotSectorAligned, OutOfBounds, ReadOnlyImage

SECTOR_SIZE = 512


@dataclass(frozen=True)
class ByteRange:
    """Absolute byte range within an image."""

    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length

    def contains(self, offset: int) -> bool:
        return self.offset <= offset < self.end

    def overlaps(self, other: "ByteRange") -> bool:
        return self.offset < other.end and other.offset < self.end


class ImageHandle:
    """Open raw disk image with positional read/write access."""

    def __init__(self, path, fd: int, size_bytes: int, writable: bool):
        self.path = os.fspath(path)
        self._fd = fd
        self.size_bytes = size_bytes
        self.sector_size = SECTOR_SIZE
        self.writable = writable

    def read_at(self, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > self.size_bytes:
            raise OutOfBounds(
                f"read [{offset:#x}, {offset + length:#x}) outside image of "
                f"{self.size_bytes:#x} bytes"
            )
        if length == 0:
            return b""
        out = []
        while length > 0:
            chunk = os.pread(self._fd, length, offset)
            if not chunk:
                # Hole beyond EOF cannot happen (bounds checked); guards a
                # file truncated behind our back.
                raise OutOfBounds(f"short read at {offset:#x}")
            out.append(chunk)
            offset += len(chunk)
            length -= len(chunk)
        return b"".join(out) if len(out) > 1 else out[0]

    def read_range(self, rng: ByteRange) -> bytes:
        return self.read_at(rng.offset, rng.length)

    def read_sector(self, lba: int) -> bytes:
        return self.read_at(lba * self.sector_size, self.sector_size)

    def write_at(self, offset: int, data: bytes) -> None:
        if not self.writable:
            raise ReadOnlyImage(f"{self.path} opened read-only")
        if offset < 0 or offset + len(data) > self.size_bytes:
            raise OutOfBounds(
                f"write [{offset:#x}, {offset + len(data):#x}) outside image"
            )
        view = memoryview(data)
        while view:
            n = os.pwrite(self._fd, view, offset)
            offset += n
            view = view[n:]

    def next_data_offset(self, offset: int) -> int:
        """First offset at/after `offset` that may hold data.

        Uses SEEK_DATA where the filesystem supports it so scans can skip
        sparse holes (which read as zeros) without touching them. Returns
        `offset` itself when the filesystem cannot say, and the image size
        when only holes remain.
        """
        if offset >= self.size_bytes:
            return self.size_bytes
        try:
            found = os.lseek(self._fd, offset, os.SEEK_DATA)
        except OSError as exc:
            if exc.errno == errno.ENXIO:  # inside the trailing hole
                return self.size_bytes
            return offset
        return min(max(found, offset), self.size_bytes)

    def flush(self) -> None:
        os.fsync(self._fd)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        mode = "rw" if self.writable else "ro"
        return f"ImageHandle({self.path!r}, {self.size_bytes} bytes, {mode})"


def open_image(path, writable: bool = False) -> ImageHandle:
    """Open an existing raw image; size must be a multiple of 512."""
    flags = os.O_RDWR if writable else os.O_RDONLY
    fd = os.open(path, flags)
    try:
        size = os.fstat(fd).st_size
        if size % SECTOR_SIZE != 0:
            raise NotSectorAligned(
                f"{path}: {size} bytes is not a multiple of {SECTOR_SIZE}"
            )
    except Exception:
        os.close(fd)
        raise
    return ImageHandle(path, fd, size, writable)


def create_image(path, size_bytes: int) -> ImageHandle:
    """Create a sparse image of the given size and open it writable."""
    if size_bytes % SECTOR_SIZE != 0:
        raise NotSectorAligned(
            f"requested size {size_bytes} is not a multiple of {SECTOR_SIZE}"
        )
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    os.ftruncate(fd, size_bytes)
    return ImageHandle(path, fd, size_bytes, writable=True)
