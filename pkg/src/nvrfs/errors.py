"""Exception types raised by the nvrfs toolkit."""


class Error(Exception):
    """Base class for all nvrfs errors."""


class NotSectorAligned(Error):
    """Image size is not a multiple of the 512-byte sector size."""


class OutOfBounds(Error):
    """A read or write would fall outside the image."""


class ReadOnlyImage(Error):
    """Write attempted through a read-only handle."""


class TruncatedImage(Error):
    """Image is too small to contain the requested structure."""


class NoGptSignature(Error):
    """Neither the primary nor the secondary GPT header is valid."""


class InsufficientSize(Error):
    """Disk size too small for the requested partition layout."""


class TruncatedPartition(Error):
    """Partition does not cover the metadata region being parsed."""


class AnchorCountOverflow(Error):
    """Record-state anchor count exceeds its subregion capacity."""


class NoStartCode(Error):
    """Byte sequence does not begin with an Annex-B start code."""


class InvalidSpec(Error):
    """Synthesis spec is malformed or internally inconsistent."""


class SpecTooLarge(Error):
    """Synthesis spec would exceed the configured size cap."""


class NothingExpired(Error):
    """Expiration sweep matched no recorded data."""


class DiskNotFull(Error):
    """Overwrite requested but the video region is not full."""


class InvalidState(Error):
    """Operation not valid for the image's current recording state."""


class UnequalSize(Error):
    """Images differ in size and prefix diffing was not requested."""


class IncompatibleImages(Error):
    """Metadata snapshots do not belong to the same disk."""
