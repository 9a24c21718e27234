"""Config-driven degrade -> restore -> detect -> evaluate runs and their reports.

Detections are always mapped back to, and scored in, the native annotation
frame of each sequence.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .core import BoundingBox, Detection, GroundTruthBox, ImageBuffer, clip_box, scale_box
from .dataio import DatasetManifest, load_ground_truth, load_manifest, validate_manifest
from .detect import BackendKind, DetectorBackend, detect, detections_to_reference_frame
from .errors import (
    BenchError,
    ConfigError,
    DataError,
    IncomparableRuns,
    InvalidConfig,
    ReportIOError,
    ScaleMismatch,
    SchemaVersionMismatch,
)
from .evalmetrics import (
    COLUMN_MAP_50,
    COLUMN_MAP_50_95,
    IOU_THRESHOLDS,
    MEAN_IOU_THRESHOLDS,
    EvalResult,
    evaluate,
    mean_iou_column,
)
from .imaging import (
    PSNR_COLOR_SPACE,
    QualityReport,
    ResampleKernel,
    downscale,
    load_image,
    modcrop,
    mse,
    quality_from_errors,
    resize_to,
    upscale,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

SCHEMA_VERSION = 1
DEGRADE_FACTORS = (1, 2, 3, 4, 6)
TABLE_COLUMNS = (
    "input_shape",
    "train_dataset",
    "sr",
    "output_shape",
    "scale",
    COLUMN_MAP_50_95,
    COLUMN_MAP_50,
    mean_iou_column(0.5),
    mean_iou_column(0.9),
)
LETTERBOX_FILL = 114


class Restoration(enum.Enum):
    NONE = "none"
    BICUBIC_BASELINE = "bicubic"
    RLFN = "rlfn"

    @classmethod
    def parse(cls, value) -> Restoration:
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"bicubic_baseline": "bicubic", "-": "none"}
        return cls(aliases.get(v, v))


class FitMode(enum.Enum):
    STRETCH = "stretch"
    LETTERBOX = "letterbox"


def _shape(v, name) -> tuple[int, int] | None:
    if v is None:
        return None
    try:
        w, h = (int(x) for x in v)
    except (TypeError, ValueError):
        raise InvalidConfig(f"{name} must be a [width, height] pair, got {v!r}") from None
    if w < 1 or h < 1:
        raise InvalidConfig(f"{name} must be positive, got {v!r}")
    return (w, h)


@dataclass(frozen=True)
class ExperimentConfig:
    """One pipeline run.

    Either ``degrade_factor`` shrinks every frame (after cropping to a multiple
    of the factor), or ``input_shape`` resizes it to a fixed low-resolution
    shape, then upscaling uses ``restore_scale``. ``detector["params"]["seed"]``
    is always overridden by ``seed``.
    """

    dataset: str
    degrade_factor: int = 1
    restoration: Restoration = Restoration.NONE
    checkpoint: str | None = None
    input_shape: tuple[int, int] | None = None
    restore_scale: int | None = None
    detector: Mapping = field(default_factory=lambda: {"kind": "oracle"})
    detector_input_shape: tuple[int, int] | None = None
    fit: FitMode = FitMode.STRETCH
    degrade_kernel: ResampleKernel = ResampleKernel.BICUBIC
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    mean_iou_thresholds: tuple[float, ...] = MEAN_IOU_THRESHOLDS
    train_dataset: str = "-"
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        try:
            set_("restoration", Restoration.parse(self.restoration))
            set_("fit", FitMode(str(getattr(self.fit, "value", self.fit)).lower()))
            set_("degrade_kernel", ResampleKernel.parse(self.degrade_kernel))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        set_("input_shape", _shape(self.input_shape, "input_shape"))
        set_("detector_input_shape", _shape(self.detector_input_shape, "detector_input_shape"))
        set_("iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        set_("mean_iou_thresholds", tuple(float(t) for t in self.mean_iou_thresholds))
        set_("detector", dict(self.detector))
        if self.degrade_factor not in DEGRADE_FACTORS:
            raise InvalidConfig(f"degrade_factor must be one of {DEGRADE_FACTORS}, got {self.degrade_factor!r}")
        if self.input_shape is not None and self.degrade_factor != 1:
            raise InvalidConfig("input_shape and degrade_factor are mutually exclusive")
        if self.restoration is Restoration.RLFN and not self.checkpoint:
            raise InvalidConfig("restoration 'rlfn' needs a checkpoint")
        if self.workers < 1:
            raise InvalidConfig(f"workers must be >= 1, got {self.workers}")
        if not all(0 < t <= 1 for t in self.iou_thresholds + self.mean_iou_thresholds):
            raise InvalidConfig("IoU thresholds must lie in (0, 1]")

    @property
    def scale(self) -> int:
        """Upscaling factor applied by the restoration stage."""
        if self.restoration is Restoration.NONE:
            return 1
        if self.input_shape is not None:
            return int(self.restore_scale or 1)
        return self.degrade_factor

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, Mapping):
                v = json.loads(json.dumps(v, sort_keys=True, default=str))
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None) -> ExperimentConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d:
            raise InvalidConfig("config needs a 'dataset' manifest path")
        if base_dir is not None:
            for key in ("dataset", "checkpoint", "output_dir"):
                if d.get(key) and not Path(d[key]).is_absolute():
                    d[key] = str(base_dir / d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a TOML experiment config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"invalid TOML in {path}: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    for k in ("output_dir", "workers"):
        d.pop(k, None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def _shape_str(shape) -> str:
    return "-" if shape is None else f"({shape[0]}, {shape[1]})"


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{v:.4f}"


@dataclass
class ExperimentReport:
    config: dict
    evaluation: EvalResult
    quality: QualityReport | None = None
    shapes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def table_row(self) -> dict[str, str]:
        restoration = Restoration.parse(self.config.get("restoration", "none"))
        restored = restoration is not Restoration.NONE
        sr = {"rlfn": "RLFN", "bicubic": "bicubic", "none": "-"}[restoration.value]
        row = {
            "input_shape": _shape_str(self.shapes.get("input")),
            "train_dataset": self.config.get("train_dataset", "-") if restoration is Restoration.RLFN else "-",
            "sr": sr,
            "output_shape": _shape_str(self.shapes.get("output")) if restored else "-",
            "scale": f"x{self.shapes.get('scale')}" if restored else "-",
        }
        cols = self.evaluation.columns()
        for c in TABLE_COLUMNS[5:]:
            row[c] = _num(cols.get(c))
        return row

    def metrics(self) -> dict[str, float]:
        out = {k: v for k, v in self.evaluation.columns().items() if v is not None}
        if self.quality is not None:
            if math.isfinite(self.quality.psnr_db):
                out["psnr"] = self.quality.psnr_db
            out["mse"] = self.quality.mse
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "shapes": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.shapes.items()},
            "evaluation": self.evaluation.to_dict(),
            "quality": None if self.quality is None else self.quality.to_dict(),
            "table_row": self.table_row(),
            "timings": self.timings,
            "provenance": self.provenance,
            "conventions": self.conventions,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ExperimentReport:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(f"report schema version {version!r}, expected {SCHEMA_VERSION}")
        shapes = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.get("shapes", {}).items()}
        return cls(
            config=dict(d["config"]),
            evaluation=EvalResult.from_dict(d["evaluation"]),
            quality=None if d.get("quality") is None else QualityReport.from_dict(d["quality"]),
            shapes=shapes,
            timings=dict(d.get("timings", {})),
            provenance=dict(d.get("provenance", {})),
            conventions=dict(d.get("conventions", {})),
            schema_version=version,
        )


# -- frame geometry ---------------------------------------------------------


@dataclass(frozen=True)
class _Placement:
    """Where the restored image sits inside the detector input."""

    det_shape: tuple[int, int]
    content_shape: tuple[float, float]
    offset: tuple[float, float] = (0.0, 0.0)


def _fit(img: ImageBuffer, target, mode: FitMode) -> tuple[ImageBuffer, _Placement]:
    if target is None or tuple(target) == img.shape:
        return img, _Placement(img.shape, img.shape)
    tw, th = target
    if mode is FitMode.STRETCH:
        return resize_to(img, tw, th), _Placement((tw, th), (tw, th))
    s = min(tw / img.width, th / img.height)
    cw, ch = max(1, round(img.width * s)), max(1, round(img.height * s))
    ox, oy = (tw - cw) // 2, (th - ch) // 2
    canvas = np.full((th, tw, 3), LETTERBOX_FILL, dtype=np.uint8)
    canvas[oy : oy + ch, ox : ox + cw] = resize_to(img, cw, ch).pixels
    return ImageBuffer(canvas), _Placement((tw, th), (cw, ch), (float(ox), float(oy)))


def _to_detector_frame(g: GroundTruthBox, anno_shape, place: _Placement) -> GroundTruthBox:
    b = scale_box(g.box, place.content_shape[0] / anno_shape[0], place.content_shape[1] / anno_shape[1])
    if place.offset != (0.0, 0.0):
        b = BoundingBox(b.x + place.offset[0], b.y + place.offset[1], b.w, b.h)
    return GroundTruthBox(b, g.cls, g.track_id, g.frame_id)


def _to_annotation_frame(dets: Sequence[Detection], anno_shape, place: _Placement) -> list[Detection]:
    if place.offset != (0.0, 0.0):
        ox, oy = place.offset
        dets = [Detection(BoundingBox(d.box.x - ox, d.box.y - oy, d.box.w, d.box.h), d.cls, d.score) for d in dets]
    return detections_to_reference_frame(dets, place.content_shape, anno_shape)


# -- running ----------------------------------------------------------------


@dataclass
class _FrameResult:
    key: tuple[str, int]
    detections: list[Detection]
    mse: float | None
    input_shape: tuple[int, int]
    output_shape: tuple[int, int]
    detector_shape: tuple[int, int]
    seconds: dict[str, float]


class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.manifest: DatasetManifest = load_manifest(cfg.dataset)
        report = validate_manifest(self.manifest)
        if not report.ok:
            shown = "; ".join(report.violations[:5])
            raise DataError(f"manifest {cfg.dataset} failed validation ({len(report.violations)} problems): {shown}")
        self.model = None
        if cfg.restoration is Restoration.RLFN:
            from .rlfn import load_checkpoint, read_checkpoint_config

            ck_cfg = read_checkpoint_config(cfg.checkpoint)
            if ck_cfg.scale != cfg.scale:
                raise ScaleMismatch(f"checkpoint {cfg.checkpoint} is x{ck_cfg.scale}, run needs x{cfg.scale}")
            self.model = load_checkpoint(cfg.checkpoint, expected_scale=cfg.scale)
            self.model.eval()
        if cfg.restoration is not Restoration.NONE and cfg.scale < 1:
            raise InvalidConfig("restore_scale must be >= 1")
        spec = dict(cfg.detector)
        params = dict(spec.get("params", {}))
        kind = BackendKind.parse(spec.get("kind", "oracle"))
        if kind in (BackendKind.ORACLE, BackendKind.RANDOM):
            params["seed"] = cfg.seed
        spec["params"] = params
        self.backend = DetectorBackend.from_dict(spec)
        self.entries = {s.seq_id: s for s in self.manifest.sequences}
        self.gts: dict[tuple[str, int], list[GroundTruthBox]] = {}
        for s in self.manifest.sequences:
            for frame_id, boxes in load_ground_truth(s).items():
                self.gts[(s.seq_id, frame_id)] = boxes

    def frames(self) -> list[tuple[str, int]]:
        return [(s.seq_id, f) for s in self.manifest.sequences for f in range(1, s.frame_count + 1)]

    def process(self, key: tuple[str, int]) -> _FrameResult:
        try:
            return self._process(key)
        except BenchError as exc:
            exc.args = (f"{key[0]}/frame {key[1]}: {exc}",) + exc.args[1:]
            raise

    def _process(self, key) -> _FrameResult:
        cfg = self.cfg
        seq_id, frame_id = key
        entry = self.entries[seq_id]
        sec = {}
        t = time.perf_counter()
        native = load_image(entry.frame_path(frame_id))
        sec["load"] = time.perf_counter() - t

        t = time.perf_counter()
        if cfg.input_shape is not None:
            reference = None
            anno_shape = native.shape
            lr = resize_to(native, *cfg.input_shape, kernel=cfg.degrade_kernel)
        else:
            reference = modcrop(native, cfg.degrade_factor)
            anno_shape = reference.shape
            lr = downscale(reference, cfg.degrade_factor, cfg.degrade_kernel)
        sec["degrade"] = time.perf_counter() - t

        t = time.perf_counter()
        if cfg.restoration is Restoration.NONE:
            restored = lr
        elif cfg.restoration is Restoration.BICUBIC_BASELINE:
            restored = upscale(lr, cfg.scale, ResampleKernel.BICUBIC)
        else:
            from .rlfn import sr_forward

            restored = sr_forward(self.model, lr)
        sec["restore"] = time.perf_counter() - t

        err = None
        if cfg.restoration is not Restoration.NONE and reference is not None and restored.shape == reference.shape:
            err = mse(restored, reference)

        t = time.perf_counter()
        det_img, place = _fit(restored, cfg.detector_input_shape, cfg.fit)
        sec["fit"] = time.perf_counter() - t

        t = time.perf_counter()
        gts = self.gts.get(key, [])
        det_gts = [_to_detector_frame(g, anno_shape, place) for g in gts]
        dets = detect(self.backend, det_img, det_gts if self.backend.kind is BackendKind.ORACLE else None, key)
        mapped = _to_annotation_frame(dets, anno_shape, place)
        native_w, native_h = native.shape
        mapped = [Detection(clip_box(d.box, native_w, native_h), d.cls, d.score) for d in mapped]
        sec["detect"] = time.perf_counter() - t
        return _FrameResult(key, mapped, err, lr.shape, restored.shape, det_img.shape, sec)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    """Run one configuration end to end and assemble its report."""
    t_start = time.perf_counter()
    runner = _Runner(cfg)
    frames = runner.frames()
    t_setup = time.perf_counter()

    n_workers = workers or cfg.workers
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(runner.process, frames))
    else:
        results = [runner.process(k) for k in frames]
    t_frames = time.perf_counter()

    dets = {r.key: r.detections for r in results}
    evaluation = evaluate(dets, runner.gts, cfg.iou_thresholds, cfg.mean_iou_thresholds)
    quality = None
    errs = [(f"{r.key[0]}/{r.key[1]:06d}", r.mse) for r in results if r.mse is not None]
    if errs:
        quality = quality_from_errors(errs)
    t_eval = time.perf_counter()

    first = results[0] if results else None
    stage_seconds: dict[str, float] = {}
    for r in results:
        for k, v in r.seconds.items():
            stage_seconds[k] = stage_seconds.get(k, 0.0) + v
    shapes = {
        "native": runner.manifest.sequences[0].native_shape if runner.manifest.sequences else None,
        "input": first.input_shape if first else None,
        "output": first.output_shape if first else None,
        "detector_input": first.detector_shape if first else None,
        "scale": cfg.scale,
    }
    conventions = {
        "detections_frame": "native annotation frame",
        "psnr_color_space": PSNR_COLOR_SPACE,
        "psnr_aggregate": "mean of per-image PSNR (exact reconstructions excluded)",
        "degrade_kernel": cfg.degrade_kernel.value,
        "detector_fit": cfg.fit.value,
        "detector": runner.backend.describe(),
        **{f"metric_{k}": v for k, v in evaluation.conventions.items()},
    }
    provenance = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "code_version": __version__,
        "dataset_id": _dataset_id(cfg.dataset),
        "split": runner.manifest.split.value,
    }
    report = ExperimentReport(
        config=cfg.to_dict(),
        evaluation=evaluation,
        quality=quality,
        shapes=shapes,
        provenance=provenance,
        conventions=conventions,
    )
    t_end = time.perf_counter()
    report.timings = {
        "setup": t_setup - t_start,
        "frames": t_frames - t_setup,
        "evaluate": t_eval - t_frames,
        "assemble": t_end - t_eval,
        "total": t_end - t_start,
        "workers": n_workers,
        "stage_seconds": stage_seconds,
    }
    return report


def _dataset_id(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return str(path)


# -- report files -----------------------------------------------------------


def table_text(reports: Sequence[ExperimentReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.table_row())
    return buf.getvalue()


def write_report(report: ExperimentReport, directory) -> tuple[Path, Path]:
    """Write ``report.json`` and the one-row ``table.csv`` into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / "report.json"
        json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        csv_path = directory / "table.csv"
        csv_path.write_text(table_text([report]), encoding="utf-8", newline="")
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {directory}: {exc}") from exc
    return json_path, csv_path


def read_report(path) -> ExperimentReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReportIOError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"report {path} is not valid JSON: {exc}") from exc
    try:
        return ExperimentReport.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, BenchError):
            raise
        raise DataError(f"report {path} is malformed: {exc!r}") from exc


# -- comparisons ------------------------------------------------------------


@dataclass(frozen=True)
class MetricDelta:
    base: float
    new: float

    @property
    def abs_delta(self) -> float:
        return self.new - self.base

    @property
    def rel_delta(self) -> float | None:
        """``(new - base) / base``; undefined for a zero baseline."""
        return None if self.base == 0 else (self.new - self.base) / self.base

    def to_dict(self) -> dict:
        return {"base": self.base, "new": self.new, "abs_delta": self.abs_delta, "rel_delta": self.rel_delta}


@dataclass(frozen=True)
class DeltaRow:
    """One compared run: its metric changes against the baseline."""

    run: str
    baseline: str
    metrics: dict[str, MetricDelta]

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "baseline": self.baseline,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
        }


def compare_runs(
    reports: Sequence[ExperimentReport], baseline: int = 0, labels: Sequence[str] | None = None
) -> list[DeltaRow]:
    """Metric changes of every report against ``reports[baseline]``, one row per other report.

    Only metrics present in both reports are compared.
    """
    if len(reports) < 2:
        raise ConfigError("compare needs at least two reports")
    labels = list(labels) if labels is not None else [f"run{i}" for i in range(len(reports))]
    base = reports[baseline]
    base_ds = (base.provenance.get("dataset_id"), base.provenance.get("split"))
    base_m = base.metrics()
    rows = []
    for i, r in enumerate(reports):
        if i == baseline:
            continue
        ds = (r.provenance.get("dataset_id"), r.provenance.get("split"))
        if ds != base_ds:
            raise IncomparableRuns(f"{labels[i]} was run on a different dataset split than {labels[baseline]}")
        new_m = r.metrics()
        deltas = {m: MetricDelta(base_m[m], new_m[m]) for m in base_m if m in new_m}
        rows.append(DeltaRow(labels[i], labels[baseline], deltas))
    return rows


def format_delta_table(rows: Sequence[DeltaRow]) -> str:
    lines = [f"{'run':<16} {'metric':<20} {'base':>10} {'new':>10} {'delta':>10} {'relative':>10}"]
    for row in rows:
        for metric, d in row.metrics.items():
            rel = "n/a" if d.rel_delta is None else f"{100 * d.rel_delta:+.1f}%"
            lines.append(f"{row.run:<16} {metric:<20} {d.base:>10.4f} {d.new:>10.4f} {d.abs_delta:>+10.4f} {rel:>10}")
    return "\n".join(lines) + "\n"
