import numpy as np
import pytest

from mot_fuzz import corpus, mutate
from srdetbench.core import BoundingBox, ObjectClass
from srdetbench.dataio import (
    ROLES,
    DatasetManifest,
    SequenceEntry,
    Split,
    format_mot_gt,
    load_ground_truth,
    load_manifest,
    map_role_to_class,
    parse_mot_gt,
    parse_mot_lines,
    parse_role_file,
    validate_manifest,
    write_manifest,
    write_mot_gt,
    write_role_file,
)
from srdetbench.errors import EmptyFile, MalformedLine, ManifestUnreadable, MissingFile, TrackWithoutRole, UnknownRole
from srdetbench.imaging import frame_filename, save_image
from srdetbench.core import ImageBuffer


def test_role_vocabulary():
    assert map_role_to_class("ball") is ObjectClass.BALL
    assert all(map_role_to_class(r) is ObjectClass.PERSON for r in ROLES if r != "ball")
    assert map_role_to_class("  Player   Team Left ") is ObjectClass.PERSON
    with pytest.raises(UnknownRole):
        map_role_to_class("linesman")
    with pytest.raises(KeyError):  # UnknownRole is also a KeyError
        map_role_to_class("")


def test_parse_basic_and_extra_fields():
    frames = parse_mot_lines(["1,1,914,855,55,172,1,-1,-1,-1", "1,2,10.5,20,3,4", "", "2,1,0,0,0,0,x,y\r"])
    assert frames[1] == [(1, BoundingBox(914, 855, 55, 172)), (2, BoundingBox(10.5, 20, 3, 4))]
    assert frames[2] == [(1, BoundingBox(0, 0, 0, 0))]


@pytest.mark.parametrize(
    "line, reason",
    [
        ("1,2,3,4,5", "fields"),
        ("a,1,0,0,1,1", "integer"),
        ("0,1,0,0,1,1", "frame"),
        ("1,-1,0,0,1,1", "negative track"),
        ("1,1,0,0,-1,1", "negative box"),
        ("1,1,nan,0,1,1", "non-finite"),
        ("1.5,1,0,0,1,1", "integer"),
    ],
)
def test_malformed_lines_report_line_number(line, reason):
    with pytest.raises(MalformedLine) as info:
        parse_mot_lines(["1,1,0,0,1,1", "", line])
    assert info.value.lineno == 3
    assert reason in info.value.reason


def test_empty_file(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("\n\n")
    with pytest.raises(EmptyFile):
        parse_mot_gt(p)
    with pytest.raises(MissingFile):
        parse_mot_gt(tmp_path / "none.txt")


def test_vertical_tab_does_not_split_lines(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_bytes(b"1,1,0,0,1,1\x0b\n1,1,0,0,1\n")
    with pytest.raises(MalformedLine) as info:
        parse_mot_gt(p)
    assert info.value.lineno == 2


@pytest.mark.parametrize("seed", range(3))
def test_fuzzed_round_trip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    text, expected = corpus(rng, 300)
    p = tmp_path / "gt.txt"
    p.write_bytes(text.encode())
    frames = parse_mot_gt(p)
    flat = [(f, t, b.as_tuple()) for f in frames for t, b in frames[f]]
    assert sorted(flat, key=lambda r: r[0]) == sorted(expected, key=lambda r: r[0])
    again = parse_mot_gt(write_mot_gt(tmp_path / "out.txt", frames))
    assert again == frames
    assert format_mot_gt(again) == format_mot_gt(frames)


@pytest.mark.parametrize("seed", range(3))
def test_mutations_are_rejected(seed):
    rng = np.random.default_rng(50 + seed)
    text, _ = corpus(rng, 50)
    for _ in range(40):
        bad, lineno, name = mutate(text, rng)
        with pytest.raises(MalformedLine) as info:
            parse_mot_lines(bad.split("\n"))
        assert info.value.lineno == lineno, name


def test_role_file(tmp_path):
    p = tmp_path / "roles.txt"
    p.write_text("# roles\n\n1=Player team left\n2 = ball\n")
    assert parse_role_file(p) == {1: "player team left", 2: "ball"}
    assert parse_role_file(write_role_file(tmp_path / "r2.txt", {2: "ball", 1: "staff"})) == {1: "staff", 2: "ball"}
    p.write_text("1 player\n")
    with pytest.raises(MalformedLine):
        parse_role_file(p)
    p.write_text("1=coach\n")
    with pytest.raises(UnknownRole):
        parse_role_file(p)


def _tiny_sequence(root, gt_text, roles, frame_count=2, shape=(16, 8), frames=None):
    (root / "img1").mkdir(parents=True)
    for f in frames if frames is not None else range(1, frame_count + 1):
        save_image(ImageBuffer.filled(*shape), root / "img1" / frame_filename(f))
    (root / "gt.txt").write_text(gt_text)
    (root / "roles.txt").write_text(roles)
    return SequenceEntry("S1", root / "img1", root / "gt.txt", root / "roles.txt", shape, frame_count)


def test_load_ground_truth(tmp_path):
    entry = _tiny_sequence(tmp_path, "1,1,0,0,2,2\n1,2,3,3,1,1\n", "1=ball\n2=player team right\n", frame_count=3)
    gt = load_ground_truth(entry)
    assert [g.cls for g in gt[1]] == [ObjectClass.BALL, ObjectClass.PERSON]
    assert gt[2] == [] and gt[3] == []
    (tmp_path / "gt.txt").write_text("1,99,0,0,2,2\n")
    with pytest.raises(TrackWithoutRole):
        load_ground_truth(entry)


def test_manifest_round_trip_and_validation(toy_manifest, tmp_path):
    m = load_manifest(toy_manifest)
    assert len(m.sequences) == 3 and m.split is Split.TEST
    assert validate_manifest(m).ok
    copy = tmp_path / "copy.toml"
    write_manifest(copy, m)
    m2 = load_manifest(copy)
    assert [s.frame_dir for s in m2.sequences] == [s.frame_dir for s in m.sequences]
    assert m2.sequences[0].native_shape == m.sequences[0].native_shape


def test_validation_lists_each_violation(tmp_path):
    entry = _tiny_sequence(tmp_path, "1,1,0,0,1,1\n5,1,0,0,1,1\n1,7,0,0,1,1\n", "1=ball\n", frames=[1])
    report = validate_manifest(DatasetManifest((entry,), Split.TEST))
    text = "\n".join(report.violations)
    assert len(report.violations) == 3
    assert "frame 2 missing" in text and "frame 5 beyond" in text and "track 7 has no role" in text


def test_validation_detects_shape_mismatch(tmp_path):
    entry = _tiny_sequence(tmp_path, "1,1,0,0,1,1\n", "1=ball\n", frame_count=1)
    bad = SequenceEntry(entry.seq_id, entry.frame_dir, entry.gt_file, entry.role_file, (20, 8), 1)
    report = validate_manifest(DatasetManifest((bad,), Split.TEST))
    assert len(report.violations) == 1 and "16x8" in report.violations[0]


def test_unreadable_manifest(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text("sequences = [ {id = 1} ]\n")
    with pytest.raises(ManifestUnreadable):
        load_manifest(p)
    p.write_text("not toml = = \n")
    with pytest.raises(ManifestUnreadable):
        validate_manifest(p)
    with pytest.raises(ManifestUnreadable):
        load_manifest(tmp_path / "absent.toml")
