"""The shipped scenario spec files must synthesize and classify correctly."""

import pathlib

import pytest

from nvrfs.cli import main
from nvrfs.synth import load_spec_file, synthesize

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

EXPECTED_VERDICT_EXIT = {
    "recording_8cam_5min": 0,
    "anchors_47": 0,
    "f_deletion": 3,
    "f_deletion_rerecord": 3,
    "e_deletion": 3,
    "o_deletion": 3,
}


def test_all_scenarios_parse():
    specs = sorted(SCENARIOS.glob("*.spec"))
    assert {p.stem for p in specs} == set(EXPECTED_VERDICT_EXIT)
    for path in specs:
        spec = load_spec_file(path)
        assert spec.rounds


@pytest.mark.parametrize("name,expected_exit",
                         sorted(EXPECTED_VERDICT_EXIT.items()))
def test_scenario_synthesizes_and_classifies(name, expected_exit, tmp_path):
    img = tmp_path / f"{name}.img"
    gt = synthesize(load_spec_file(SCENARIOS / f"{name}.spec"), img)
    assert gt.frames
    code = main(["classify", str(img), "--channels", str(gt.num_channels)])
    assert code == expected_exit
    if expected_exit == 3:
        assert gt.recoverable_deleted_spans(), \
            "deletion scenarios must leave recoverable residue"
