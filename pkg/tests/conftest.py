import pytest

from nvrfs import LayoutProfile, open_image, parse_gpt
from nvrfs.deletion import scan_video_frames
from nvrfs.metadata import parse_partition1_header
from nvrfs.synth import DeletionAction, RecordingRound, SynthSpec, synthesize

# 2025-11-26 21:48:19, the first recording instant used throughout the
# recorder's own metadata examples.
T0 = 1764193699
# 2025-12-03 21:18:00, start of the second recording window.
T1 = 1764796680

SHRINK = 1024


def two_window_spec(seed=7, channels=2, deletion=None, post_rounds=(),
                    **kwargs):
    """Recording on Nov 26 then a week later, the base deletion scenario."""
    return SynthSpec(
        num_channels=channels,
        rounds=[
            RecordingRound(start_time=T0, duration_s=20, fps=1.0, fps_keyint=5),
            RecordingRound(start_time=T1, duration_s=20, fps=1.0, fps_keyint=5),
        ],
        deletion=deletion,
        post_rounds=list(post_rounds),
        shrink_factor=SHRINK,
        seed=seed,
        **kwargs,
    )


def parse_image(path):
    """(handle, layout, profile, p1 header) for a synthesized image."""
    handle = open_image(path)
    profile = LayoutProfile.for_image(path)
    layout = parse_gpt(handle, profile)
    header = parse_partition1_header(handle, layout.partition1_range.offset,
                                     profile)
    return handle, layout, profile, header


def scan_all(handle, layout, profile):
    return scan_video_frames(handle, layout, profile)


@pytest.fixture(scope="session")
def recorded(tmp_path_factory):
    """Plain two-window recording, no deletion."""
    path = tmp_path_factory.mktemp("images") / "recorded.img"
    gt = synthesize(two_window_spec(), path)
    return str(path), gt


@pytest.fixture(scope="session")
def formatted(tmp_path_factory):
    path = tmp_path_factory.mktemp("images") / "formatted.img"
    gt = synthesize(two_window_spec(deletion=DeletionAction(kind="formatting")),
                    path)
    return str(path), gt


@pytest.fixture(scope="session")
def expired(tmp_path_factory):
    path = tmp_path_factory.mktemp("images") / "expired.img"
    action = DeletionAction(kind="expiration", retention_s=86400,
                            now=T1 + 86400)
    gt = synthesize(two_window_spec(deletion=action), path)
    return str(path), gt


@pytest.fixture(scope="session")
def overwritten(tmp_path_factory):
    path = tmp_path_factory.mktemp("images") / "overwritten.img"
    action = DeletionAction(
        kind="overwrite",
        extra=RecordingRound(start_time=T1 + 86400 * 2, duration_s=10,
                             fps=1.0, fps_keyint=5))
    gt = synthesize(two_window_spec(deletion=action, block_size=0x8000), path)
    return str(path), gt
