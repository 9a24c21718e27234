import numpy as np
import pytest

from srdetbench.dataio import load_ground_truth, load_manifest, validate_manifest
from srdetbench.synth import make_toy_dataset, textures


def test_textures_are_seeded_and_sized():
    a = textures(3, 40, 24, seed=4)
    b = textures(3, 40, 24, seed=4)
    assert a == b and len(a) == 3 and a[0].shape == (40, 24)
    assert textures(1, 40, 24, seed=5)[0] != a[0]
    px = a[0].pixels.astype(float)
    assert 90 < px.mean() < 170 and px.std() > 15
    assert textures(1, 16, 16, seed=0, kind="shapes")[0].shape == (16, 16)
    with pytest.raises(ValueError):
        textures(1, 8, 8, seed=0, kind="clouds")


def test_toy_dataset_is_valid_and_deterministic(tmp_path):
    m1 = make_toy_dataset(tmp_path / "a", n_sequences=2, frames_per_sequence=2, seed=3)
    m2 = make_toy_dataset(tmp_path / "b", n_sequences=2, frames_per_sequence=2, seed=3)
    assert validate_manifest(m1).ok
    man = load_manifest(m1)
    for s1, s2 in zip(man.sequences, load_manifest(m2).sequences):
        assert s1.gt_file.read_bytes() == s2.gt_file.read_bytes()
        assert s1.frame_path(1).read_bytes() == s2.frame_path(1).read_bytes()
    gt = load_ground_truth(man.sequences[0])
    w, h = man.sequences[0].native_shape
    classes = {g.cls.value for boxes in gt.values() for g in boxes}
    assert classes == {"ball", "person"}
    for boxes in gt.values():
        for g in boxes:
            assert 0 <= g.box.x and g.box.x2 <= w and 0 <= g.box.y and g.box.y2 <= h
