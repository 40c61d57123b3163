import random

import pytest

from nvrfs.diskimage import ByteRange, create_image, open_image
from nvrfs.errors import NotSectorAligned, OutOfBounds, ReadOnlyImage


def test_open_nominal_160gb_sparse(tmp_path):
    # Marketing-size disks are sector aligned: 160e9 / 512 is exact.
    path = tmp_path / "big.img"
    with create_image(path, 160_000_000_000):
        pass
    with open_image(path) as h:
        assert h.size_bytes == 160_000_000_000
        assert not h.writable


def test_open_zero_length_file(tmp_path):
    path = tmp_path / "empty.img"
    path.write_bytes(b"")
    with open_image(path) as h:
        assert h.size_bytes == 0


def test_open_unaligned_size_rejected(tmp_path):
    # Arithmetic oracle: 1000 mod 512 = 488, so this must fail.
    assert 1000 % 512 != 0
    path = tmp_path / "odd.img"
    path.write_bytes(b"\x00" * 1000)
    with pytest.raises(NotSectorAligned):
        open_image(path)


def test_open_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_image(tmp_path / "nope.img")


def test_read_length_zero(tmp_path):
    path = tmp_path / "a.img"
    path.write_bytes(b"\x01" * 512)
    with open_image(path) as h:
        assert h.read_at(100, 0) == b""


def test_read_past_end(tmp_path):
    path = tmp_path / "a.img"
    path.write_bytes(b"\x01" * 512)
    with open_image(path) as h:
        with pytest.raises(OutOfBounds):
            h.read_at(500, 13)
        with pytest.raises(OutOfBounds):
            h.read_range(ByteRange(512, 1))


def test_write_requires_writable(tmp_path):
    path = tmp_path / "a.img"
    path.write_bytes(b"\x00" * 512)
    with open_image(path) as h:
        with pytest.raises(ReadOnlyImage):
            h.write_at(0, b"x")


def test_write_out_of_bounds(tmp_path):
    with create_image(tmp_path / "a.img", 1024) as h:
        with pytest.raises(OutOfBounds):
            h.write_at(1020, b"xxxxx")


def test_roundtrip_property(tmp_path):
    # write_at then read_at returns exactly what was written, anywhere.
    rng = random.Random(1)
    with create_image(tmp_path / "rt.img", 1 << 20) as h:
        for _ in range(50):
            n = rng.randrange(1, 4096)
            off = rng.randrange(0, (1 << 20) - n)
            data = rng.randbytes(n)
            h.write_at(off, data)
            assert h.read_at(off, n) == data


def test_repeated_reads_identical(tmp_path):
    rng = random.Random(2)
    path = tmp_path / "rr.img"
    path.write_bytes(rng.randbytes(8192))
    with open_image(path) as h:
        first = h.read_at(1000, 3000)
        assert h.read_at(1000, 3000) == first


def test_sparse_holes_read_as_zero(tmp_path):
    with create_image(tmp_path / "s.img", 1 << 24) as h:
        h.write_at(1 << 23, b"abc")
        assert h.read_at(0, 16) == b"\x00" * 16
        assert h.read_at((1 << 23) - 1, 5) == b"\x00abc\x00"


def test_concurrent_reads_one_handle(tmp_path):
    # Reads are positional (no shared seek state), so one handle is safe
    # for parallel readers.
    import concurrent.futures

    rng = random.Random(9)
    data = rng.randbytes(1 << 20)
    path = tmp_path / "mt.img"
    path.write_bytes(data)
    with open_image(path) as h:
        def worker(seed):
            r = random.Random(seed)
            for _ in range(200):
                n = r.randrange(1, 4096)
                off = r.randrange(0, len(data) - n)
                if h.read_at(off, n) != data[off:off + n]:
                    return False
            return True

        with concurrent.futures.ThreadPoolExecutor(8) as pool:
            assert all(pool.map(worker, range(8)))
