import json
import math

import pytest

from srdetbench import pipeline
from srdetbench.dataio import load_ground_truth, load_manifest
from srdetbench.detect import DetectorBackend, detect
from srdetbench.errors import (
    ConfigError,
    DecodeError,
    IncomparableRuns,
    InvalidConfig,
    ScaleMismatch,
    SchemaVersionMismatch,
)
from srdetbench.evalmetrics import evaluate
from srdetbench.imaging import load_image
from srdetbench.pipeline import (
    TABLE_COLUMNS,
    ExperimentConfig,
    ExperimentReport,
    compare_runs,
    format_delta_table,
    load_config,
    read_report,
    run_experiment,
    table_text,
    write_report,
)

NOISY = {"kind": "oracle", "params": {"center_jitter_std": 0.08, "size_jitter_std": 0.05, "drop_prob": 0.1}}


def cfg(manifest, **kw):
    return ExperimentConfig(dataset=str(manifest), **kw)


def test_identity_pipeline_is_perfect(toy_manifest):
    r = run_experiment(cfg(toy_manifest))
    assert r.evaluation.map_50_95 == 100.0
    assert all(v == 100.0 for v in r.evaluation.mean_iou_at.values())
    assert r.quality is None
    assert r.table_row()["sr"] == "-"


def test_composition_law_matches_direct_detection(toy_manifest):
    seed = 11
    r = run_experiment(cfg(toy_manifest, detector=NOISY, seed=seed))
    manifest = load_manifest(toy_manifest)
    backend = DetectorBackend.from_dict({**NOISY, "params": {**NOISY["params"], "seed": seed}})
    dets, gts = {}, {}
    for entry in manifest.sequences:
        for f, boxes in load_ground_truth(entry).items():
            key = (entry.seq_id, f)
            gts[key] = boxes
            dets[key] = detect(backend, load_image(entry.frame_path(f)), boxes, key)
    assert r.evaluation == evaluate(dets, gts)


def test_rlfn_run_reports_quality_and_detection(toy_manifest, tiny_checkpoint):
    r = run_experiment(cfg(toy_manifest, degrade_factor=2, restoration="rlfn", checkpoint=str(tiny_checkpoint)))
    assert r.quality is not None and math.isfinite(r.quality.psnr_db)
    assert len(r.quality.per_image) == 9
    assert 0 <= r.evaluation.map_50_95 <= 100
    row = r.table_row()
    assert row["sr"] == "RLFN" and row["scale"] == "x2" and row["output_shape"] == "(384, 216)"


def test_scale_mismatch_before_frame_work(toy_manifest, tiny_checkpoint, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("frame was touched")

    monkeypatch.setattr(pipeline, "load_image", boom)
    with pytest.raises(ScaleMismatch):
        run_experiment(cfg(toy_manifest, degrade_factor=4, restoration="rlfn", checkpoint=str(tiny_checkpoint)))


@pytest.mark.parametrize(
    "extra",
    [
        dict(degrade_factor=3, restoration="bicubic"),
        dict(degrade_factor=4, restoration="none", detector_input_shape=(320, 240)),
        dict(degrade_factor=2, restoration="bicubic", detector_input_shape=(300, 300), fit="letterbox"),
        dict(input_shape=(160, 120), restoration="bicubic", restore_scale=2),
        dict(degrade_factor=6, restoration="none"),
    ],
)
def test_detections_live_in_native_frame(toy_manifest, extra, monkeypatch):
    captured = {}
    real = pipeline.evaluate

    def spy(dets, gts, *a, **k):
        captured.update(dets)
        return real(dets, gts, *a, **k)

    monkeypatch.setattr(pipeline, "evaluate", spy)
    r = run_experiment(cfg(toy_manifest, detector=NOISY, **extra))
    w, h = r.shapes["native"]
    assert captured
    for dets in captured.values():
        for d in dets:
            assert 0 <= d.box.x and d.box.x2 <= w + 1e-9
            assert 0 <= d.box.y and d.box.y2 <= h + 1e-9
    assert r.evaluation.map_50_95 > 10


def test_degraded_runs_score_against_native_ground_truth(toy_manifest):
    base = run_experiment(cfg(toy_manifest, detector=NOISY))
    low = run_experiment(cfg(toy_manifest, detector=NOISY, degrade_factor=4))
    assert base.evaluation.n_ground_truth == low.evaluation.n_ground_truth
    assert low.shapes["input"] == (96, 54) and low.shapes["native"] == (384, 216)


def test_workers_do_not_change_results(toy_manifest):
    c = cfg(toy_manifest, detector=NOISY, degrade_factor=2, restoration="bicubic", seed=3)
    serial = run_experiment(c)
    parallel = run_experiment(c, workers=4)
    assert table_text([serial]) == table_text([parallel])
    assert serial.evaluation == parallel.evaluation


def test_seed_changes_noisy_results(toy_manifest):
    a = run_experiment(cfg(toy_manifest, detector=NOISY, seed=1))
    b = run_experiment(cfg(toy_manifest, detector=NOISY, seed=2))
    assert a.evaluation != b.evaluation


def test_timings_sum_to_total(toy_manifest):
    t = run_experiment(cfg(toy_manifest, degrade_factor=2, restoration="bicubic")).timings
    phases = t["setup"] + t["frames"] + t["evaluate"] + t["assemble"]
    assert abs(phases - t["total"]) <= 0.05 * t["total"]


def test_report_round_trip(toy_manifest, tmp_path):
    r = run_experiment(cfg(toy_manifest, degrade_factor=2, restoration="bicubic", detector=NOISY))
    json_path, csv_path = write_report(r, tmp_path / "out")
    assert csv_path.read_text().splitlines()[0] == ",".join(TABLE_COLUMNS)
    back = read_report(tmp_path / "out")
    assert back == r
    assert read_report(json_path).to_dict() == r.to_dict()
    doc = json.loads(json_path.read_text())
    doc["schema_version"] = 99
    json_path.write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionMismatch):
        read_report(json_path)


def test_report_is_reproducible_from_echoed_config(toy_manifest):
    r = run_experiment(cfg(toy_manifest, detector=NOISY, degrade_factor=3, restoration="bicubic", seed=5))
    again = run_experiment(ExperimentConfig.from_dict(r.config))
    assert table_text([again]) == table_text([r])
    assert again.provenance == r.provenance


def _report_with_map(value, dataset="d"):
    from srdetbench.evalmetrics import EvalResult

    ev = EvalResult(value, value, {0.5: 80.0, 0.7: 85.0, 0.9: 95.0}, {})
    return ExperimentReport(config={"restoration": "none"}, evaluation=ev, provenance={"dataset_id": dataset})


def test_compare_relative_delta():
    rows = compare_runs([_report_with_map(24.3), _report_with_map(27.3)], labels=["base", "sr_x4"])
    d = rows[0].metrics["mAP@IoU=0.50:0.95"]
    assert d.abs_delta == pytest.approx(3.0)
    assert 100 * d.rel_delta == pytest.approx(12.3457, abs=1e-3)
    assert "+12.3%" in format_delta_table(rows)


def test_compare_identical_and_many():
    a = _report_with_map(30.0)
    (row,) = compare_runs([a, a])
    assert all(m.abs_delta == 0 and m.rel_delta == 0 for m in row.metrics.values())
    rows = compare_runs([a, _report_with_map(31.0), _report_with_map(29.0)])
    assert len(rows) == 2
    with pytest.raises(IncomparableRuns):
        compare_runs([a, _report_with_map(30.0, dataset="other")])
    with pytest.raises(ConfigError):
        compare_runs([a])


def test_config_validation(toy_manifest, tmp_path):
    for bad in (
        dict(degrade_factor=5),
        dict(restoration="rlfn"),
        dict(restoration="super"),
        dict(detector_input_shape=(0, 10)),
        dict(workers=0),
        dict(fit="crop"),
        dict(input_shape=(10, 10), degrade_factor=2),
    ):
        with pytest.raises(InvalidConfig):
            cfg(toy_manifest, **bad)
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({"dataset": "x", "colour": 1})
    p = tmp_path / "c.toml"
    p.write_text('dataset = "data/manifest.toml"\ndegrade_factor = 2\nrestoration = "bicubic"\n')
    c = load_config(p, seed=9)
    assert c.dataset == str(tmp_path / "data/manifest.toml") and c.seed == 9 and c.scale == 2
    p.write_text("dataset = \n")
    with pytest.raises(InvalidConfig):
        load_config(p)


def test_frame_errors_carry_context(toy_manifest, tmp_path):
    import shutil

    root = tmp_path / "copy"
    shutil.copytree(toy_manifest.parent, root)
    manifest = load_manifest(root / toy_manifest.name)
    frame = manifest.sequences[1].frame_path(2)
    frame.write_bytes(b"garbage")
    monkey = pytest.MonkeyPatch()
    # the manifest validator only reads headers, so make it pass to reach frame processing
    monkey.setattr(pipeline, "validate_manifest", lambda m: type("R", (), {"ok": True, "violations": []})())
    try:
        with pytest.raises(DecodeError) as info:
            run_experiment(cfg(root / toy_manifest.name))
    finally:
        monkey.undo()
    assert f"{manifest.sequences[1].seq_id}/frame 2" in str(info.value)
