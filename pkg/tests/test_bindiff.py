import random

import pytest

from nvrfs.bindiff import diff_images
from nvrfs.diskimage import open_image
from nvrfs.errors import UnequalSize
from nvrfs.synth import DeletionAction, synthesize

from conftest import parse_image, two_window_spec


def naive_ranges(data_a: bytes, data_b: bytes):
    """Byte-loop oracle: maximal runs of differing bytes."""
    ranges = []
    start = None
    for i, (x, y) in enumerate(zip(data_a, data_b)):
        if x != y:
            if start is None:
                start = i
        elif start is not None:
            ranges.append((start, i - start))
            start = None
    if start is not None:
        ranges.append((start, len(data_a) - start))
    return ranges


def write_pair(tmp_path, name, size, mutations, seed=0):
    rng = random.Random(seed)
    base = rng.randbytes(size)
    a = tmp_path / f"{name}_a.img"
    b = tmp_path / f"{name}_b.img"
    a.write_bytes(base)
    mutated = bytearray(base)
    for off, length in mutations:
        for i in range(off, off + length):
            mutated[i] ^= 0xFF  # always an actual change
    b.write_bytes(bytes(mutated))
    return a, b


def test_identity_diff_is_empty(tmp_path):
    a, b = write_pair(tmp_path, "id", 64 * 512, [])
    with open_image(a) as ha, open_image(a) as hb:
        report = diff_images(ha, hb, block_size=4096)
    assert report.ranges == [] and report.total_differing_bytes == 0


def test_single_known_range(tmp_path):
    # Mutate [100, 110); exactly one maximal range must come back.
    a, b = write_pair(tmp_path, "one", 16 * 512, [(100, 10)])
    with open_image(a) as ha, open_image(b) as hb:
        report = diff_images(ha, hb, block_size=512)
    assert [(r.abs_offset, r.length) for r in report.ranges] == [(100, 10)]
    assert report.total_differing_bytes == 10
    assert len(report.ranges[0].sample_a) == 10


def test_ranges_are_maximal(tmp_path):
    a, b = write_pair(tmp_path, "max", 8 * 512, [(500, 30)])
    with open_image(a) as ha, open_image(b) as hb:
        report = diff_images(ha, hb, block_size=512)
    (rng,) = report.ranges
    data_a = a.read_bytes()
    data_b = b.read_bytes()
    assert data_a[rng.abs_offset - 1] == data_b[rng.abs_offset - 1]
    assert data_a[rng.end] == data_b[rng.end]
    # The run crosses the 512-byte block boundary without splitting.
    assert rng.abs_offset < 512 < rng.end


def test_block_size_independence(tmp_path):
    rng = random.Random(11)
    mutations = [(rng.randrange(0, 200_000), rng.randrange(1, 400))
                 for _ in range(25)]
    a, b = write_pair(tmp_path, "bsi", 512 * 512, mutations, seed=3)
    results = []
    for block_size in (512, 4096, 1 << 20):
        with open_image(a) as ha, open_image(b) as hb:
            report = diff_images(ha, hb, block_size=block_size)
        results.append([(r.abs_offset, r.length) for r in report.ranges])
        assert report.total_differing_bytes == sum(
            length for _, length in results[-1])
    assert results[0] == results[1] == results[2]


def test_matches_naive_byte_loop(tmp_path):
    rng = random.Random(12)
    mutations = [(rng.randrange(0, 60_000), rng.randrange(1, 64))
                 for _ in range(12)]
    a, b = write_pair(tmp_path, "oracle", 128 * 512, mutations, seed=5)
    expected = naive_ranges(a.read_bytes(), b.read_bytes())
    with open_image(a) as ha, open_image(b) as hb:
        report = diff_images(ha, hb, block_size=4096)
    assert [(r.abs_offset, r.length) for r in report.ranges] == expected


def test_symmetry_with_samples_swapped(tmp_path):
    a, b = write_pair(tmp_path, "sym", 32 * 512, [(777, 5), (9000, 40)])
    with open_image(a) as ha, open_image(b) as hb:
        fwd = diff_images(ha, hb, block_size=4096)
        rev = diff_images(hb, ha, block_size=4096)
    assert [(r.abs_offset, r.length) for r in fwd.ranges] == \
        [(r.abs_offset, r.length) for r in rev.ranges]
    for f, r in zip(fwd.ranges, rev.ranges):
        assert f.sample_a == r.sample_b and f.sample_b == r.sample_a


def test_coalesce_gap_merges_but_total_stays(tmp_path):
    a, b = write_pair(tmp_path, "gap", 16 * 512, [(100, 4), (110, 4)])
    with open_image(a) as ha, open_image(b) as hb:
        exact = diff_images(ha, hb, block_size=512)
        merged = diff_images(ha, hb, block_size=512, coalesce_gap=8)
    assert len(exact.ranges) == 2
    assert len(merged.ranges) == 1
    assert merged.ranges[0].length == 14
    assert exact.total_differing_bytes == merged.total_differing_bytes == 8


def test_unequal_sizes(tmp_path):
    a = tmp_path / "a.img"
    b = tmp_path / "b.img"
    a.write_bytes(b"\x01" * 1024)
    b.write_bytes(b"\x01" * 1024 + b"\x02" * 512)
    with open_image(a) as ha, open_image(b) as hb:
        with pytest.raises(UnequalSize):
            diff_images(ha, hb)
        report = diff_images(ha, hb, allow_unequal=True)
    assert report.size_mismatch == (1024, 1536)
    assert report.ranges == [] and report.compared_bytes == 1024


def test_formatting_diff_clusters_in_metadata_regions(tmp_path, recorded):
    # Formatted vs recorded: changes appear in the start sectors and the
    # partition-1 metadata regions, never in the fixed-value region or
    # the video data.
    pre_path, pre_gt = recorded
    spec = two_window_spec(deletion=DeletionAction(kind="formatting"))
    synthesize(spec, tmp_path / "post.img")
    with open_image(pre_path) as ha, open_image(tmp_path / "post.img") as hb:
        layout = None
        handle, layout, profile, _ = parse_image(pre_path)
        report = diff_images(ha, hb, block_size=4096, layout=layout)
        handle.close()
    assert report.ranges, "formatting must change something"
    base = layout.partition1_range.offset
    tail_start = ha.size_bytes - profile.tail_len
    for rng in report.ranges:
        if rng.abs_offset < base:
            continue  # start sectors: GUID and checksum changes
        if rng.abs_offset >= tail_start:
            continue  # secondary GPT backup: GUID and checksum changes
        rel = rng.abs_offset - base
        region = profile.region_name(rel)
        assert region in ("header", "block-list", "channel-list",
                          "record-state"), f"unexpected diff in {region}"
        assert rng.partition == 1
        assert rng.rel_offset == rel


def test_partition_annotation(tmp_path, recorded):
    pre_path, _ = recorded
    spec = two_window_spec(deletion=DeletionAction(kind="formatting"))
    synthesize(spec, tmp_path / "post2.img")
    handle, layout, profile, _ = parse_image(pre_path)
    with open_image(pre_path) as ha, open_image(tmp_path / "post2.img") as hb:
        report = diff_images(ha, hb, layout=layout)
    in_p1 = [r for r in report.ranges if r.partition == 1]
    assert in_p1
    for rng in in_p1:
        assert rng.rel_offset == rng.abs_offset - layout.partition1_range.offset
    handle.close()
