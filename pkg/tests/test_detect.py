import numpy as np
import pytest

from srdetbench.core import BoundingBox, Detection, GroundTruthBox, ImageBuffer, ObjectClass, iou
from srdetbench.detect import (
    WEIGHTS_ENV,
    BackendKind,
    DetectorBackend,
    ExternalModelDetector,
    detect,
    detections_to_reference_frame,
    read_detections,
    write_detections,
)
from srdetbench.errors import BackendMisconfigured, DataError, InvalidShape, ModelAssetMissing

IMG = ImageBuffer.filled(200, 100, 40)
GT = [
    GroundTruthBox(BoundingBox(10, 10, 20, 40), ObjectClass.PERSON, 1, 1),
    GroundTruthBox(BoundingBox(100, 50, 6, 6), ObjectClass.BALL, 2, 1),
    GroundTruthBox(BoundingBox(190, 80, 30, 30), ObjectClass.PERSON, 3, 1),
]


def test_noiseless_oracle_returns_clipped_ground_truth():
    dets = detect(DetectorBackend("oracle"), IMG, GT, key=1)
    assert len(dets) == 3
    assert all(d.score == 1.0 for d in dets)
    assert {d.box for d in dets} == {GT[0].box, GT[1].box, BoundingBox(190, 80, 10, 20)}


def test_noisy_oracle_is_deterministic_per_key():
    backend = DetectorBackend("oracle", {"center_jitter_std": 0.1, "size_jitter_std": 0.1, "seed": 4})
    a = detect(backend, IMG, GT, key=("s", 1))
    b = detect(backend, IMG, GT, key=("s", 1))
    c = detect(backend, IMG, GT, key=("s", 2))
    assert a == b and a != c


def test_oracle_scores_are_monotone_in_iou():
    backend = DetectorBackend("oracle", {"center_jitter_std": 0.2, "seed": 1}, score_threshold=0.0)
    gt = [GroundTruthBox(BoundingBox(50, 20, 30, 30), ObjectClass.PERSON, 1, 1)]
    pairs = []
    for k in range(40):
        (d,) = detect(backend, IMG, gt, key=k)
        pairs.append((iou(d.box, gt[0].box), d.score))
    pairs.sort()
    assert all(s1 <= s2 for (_, s1), (_, s2) in zip(pairs, pairs[1:]))


def test_drop_and_false_positives():
    drop_all = DetectorBackend("oracle", {"drop_prob": 1.0})
    assert detect(drop_all, IMG, GT, key=0) == []
    fp = DetectorBackend("oracle", {"false_positive_rate": 5.0, "seed": 2}, score_threshold=0.0)
    counts = [len(detect(fp, IMG, GT, key=k)) for k in range(20)]
    assert np.mean(counts) > 3


def test_threshold_cap_and_ordering():
    backend = DetectorBackend("random", {"rate": 50, "seed": 0}, score_threshold=0.3, max_detections=10)
    dets = detect(backend, IMG, key=7)
    assert len(dets) <= 10
    assert all(d.score >= 0.3 for d in dets)
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)
    for d in dets:
        assert 0 <= d.box.x and d.box.x2 <= IMG.width + 1e-9
        assert 0 <= d.box.y and d.box.y2 <= IMG.height + 1e-9


def test_null_backend_and_oracle_needs_gt():
    assert detect(DetectorBackend("null"), IMG) == []
    with pytest.raises(BackendMisconfigured):
        detect(DetectorBackend("oracle"), IMG)
    with pytest.raises(BackendMisconfigured):
        DetectorBackend("oracle", {"blur": 3})
    with pytest.raises(BackendMisconfigured):
        DetectorBackend.from_dict({"params": {}})
    with pytest.raises(ValueError):
        BackendKind.parse("yolo")


def test_external_backend_needs_weights(monkeypatch, tmp_path):
    monkeypatch.delenv(WEIGHTS_ENV, raising=False)
    with pytest.raises(ModelAssetMissing):
        detect(DetectorBackend("external"), IMG)
    monkeypatch.setenv(WEIGHTS_ENV, str(tmp_path / "absent.pth"))
    with pytest.raises(ModelAssetMissing):
        detect(DetectorBackend("external"), IMG)


def test_external_adapter_maps_coco_labels():
    def predict(pixels):
        boxes = np.array([[0, 0, 10, 20], [5, 5, 8, 8], [1, 1, 2, 2]], float)
        return boxes, np.array([1, 37, 3]), np.array([0.9, 0.6, 0.99])

    backend = DetectorBackend("external", {"predict": predict})
    assert not backend.concurrent
    dets = detect(backend, IMG)
    assert [(d.cls, d.box.as_tuple()) for d in dets] == [
        (ObjectClass.PERSON, (0, 0, 10, 20)),
        (ObjectClass.BALL, (5, 5, 3, 3)),
    ]
    assert ExternalModelDetector(predict)(IMG)[0].score == 0.9


def test_map_back_to_reference_frame():
    d = [Detection(BoundingBox(10, 10, 20, 20), ObjectClass.BALL, 0.7)]
    out = detections_to_reference_frame(d, (320, 240), (1920, 1080))
    assert out[0].box == BoundingBox(60, 45, 120, 90)
    assert out[0].score == 0.7
    assert detections_to_reference_frame(d, (50, 50), (50, 50)) == d
    with pytest.raises(InvalidShape):
        detections_to_reference_frame(d, (0, 240), (1920, 1080))


def test_interchange_round_trip(tmp_path):
    dets = detect(DetectorBackend("random", {"rate": 6, "seed": 1}), IMG, key=1)
    path = write_detections(tmp_path / "d.jsonl", [("SEQ", 1, dets), ("SEQ", 2, [])], meta={"note": "x"})
    meta, loaded = read_detections(path)
    assert meta["note"] == "x"
    assert loaded.get(("SEQ", 1), []) == dets
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"frame_id": 1, "class": "ball"}\n')
    with pytest.raises(DataError):
        read_detections(bad)
