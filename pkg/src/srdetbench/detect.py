"""Detector backends and the detection interchange file.

Synthetic backends (``ORACLE``, ``RANDOM``, ``NULL``) make the pipeline testable
without a GPU model. ``EXTERNAL_MODEL`` wraps a pretrained two-stage detector
(torchvision Faster R-CNN, ResNet-50 FPN) whose weights are supplied by the
environment.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import BoundingBox, Detection, GroundTruthBox, ImageBuffer, ObjectClass, clip_box, iou, scale_box
from .errors import BackendMisconfigured, DataError, InvalidShape, ModelAssetMissing

WEIGHTS_ENV = "SRDETBENCH_DETECTOR_WEIGHTS"
INTERCHANGE_VERSION = 1

# COCO category ids used by torchvision detection models
COCO_LABELS = {1: "person", 37: "sports ball"}
DEFAULT_LABEL_MAP = {"person": ObjectClass.PERSON, "sports ball": ObjectClass.BALL}


class BackendKind(enum.Enum):
    ORACLE = "oracle"
    RANDOM = "random"
    NULL = "null"
    EXTERNAL_MODEL = "external_model"

    @classmethod
    def parse(cls, value) -> BackendKind:
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower().replace("-", "_")
        if v == "external":
            v = "external_model"
        return cls(v)


@dataclass(frozen=True)
class OracleNoise:
    """Perturbation model turning ground truth into synthetic detections.

    Jitter standard deviations are fractions of the box width/height. Scores
    are ``score_floor + (1 - score_floor) * IoU`` of the emitted box against its
    source (false positives: best IoU with any same-class ground truth), which is
    monotone in the realized IoU.
    """

    center_jitter_std: float = 0.0
    size_jitter_std: float = 0.0
    drop_prob: float = 0.0
    false_positive_rate: float = 0.0
    score_floor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.center_jitter_std < 0 or self.size_jitter_std < 0:
            raise BackendMisconfigured("jitter standard deviations must be >= 0")
        if not 0 <= self.drop_prob <= 1:
            raise BackendMisconfigured(f"drop_prob must lie in [0, 1], got {self.drop_prob}")
        if self.false_positive_rate < 0:
            raise BackendMisconfigured("false_positive_rate must be >= 0")
        if not 0 <= self.score_floor < 1:
            raise BackendMisconfigured("score_floor must lie in [0, 1)")

    def score(self, realized_iou: float) -> float:
        return self.score_floor + (1.0 - self.score_floor) * realized_iou


@dataclass
class DetectorBackend:
    kind: BackendKind
    params: dict = field(default_factory=dict)
    score_threshold: float = 0.05
    max_detections: int = 100

    def __post_init__(self):
        self.kind = BackendKind.parse(self.kind)
        if not 0 <= self.score_threshold <= 1:
            raise BackendMisconfigured(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.max_detections < 1:
            raise BackendMisconfigured(f"max_detections must be >= 1, got {self.max_detections}")
        self._lock = threading.Lock()
        self._model = None
        if self.kind is BackendKind.ORACLE:
            known = {f for f in OracleNoise.__dataclass_fields__}
            unknown = set(self.params) - known
            if unknown:
                raise BackendMisconfigured(f"unknown oracle parameters: {sorted(unknown)}")
            self.noise = OracleNoise(**self.params)

    @property
    def concurrent(self) -> bool:
        """Whether one instance may be called from several threads at once."""
        return self.kind is not BackendKind.EXTERNAL_MODEL

    @property
    def seed(self) -> int:
        return int(self.params.get("seed", 0))

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": {k: v for k, v in sorted(self.params.items()) if not callable(v)},
            "score_threshold": self.score_threshold,
            "max_detections": self.max_detections,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> DetectorBackend:
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise BackendMisconfigured("detector settings need a 'kind'") from None
        params = dict(d.pop("params", {}))
        allowed = {"score_threshold", "max_detections"}
        unknown = set(d) - allowed
        if unknown:
            raise BackendMisconfigured(f"unknown detector settings: {sorted(unknown)}")
        try:
            return cls(kind, params, **d)
        except ValueError as exc:
            if isinstance(exc, BackendMisconfigured):
                raise
            raise BackendMisconfigured(str(exc)) from exc


def frame_rng(seed: int, key: Hashable) -> np.random.Generator:
    """Independent generator for one frame, derived from ``hash(seed, key)``."""
    digest = hashlib.sha256(repr((int(seed), key)).encode("utf-8")).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint32).tolist())


def order_detections(dets: Iterable[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.score, d.box.x, d.box.y, d.box.w, d.box.h, d.cls.value))


def _finalize(backend: DetectorBackend, dets: Iterable[Detection], width: int, height: int) -> list[Detection]:
    out = []
    for d in dets:
        if d.score < backend.score_threshold:
            continue
        out.append(Detection(clip_box(d.box, width, height), d.cls, d.score))
    return order_detections(out)[: backend.max_detections]


def _oracle(noise: OracleNoise, image: ImageBuffer, gt: Sequence[GroundTruthBox], rng) -> list[Detection]:
    w_img, h_img = image.width, image.height
    dets = []
    for g in gt:
        # draw all variates so one box's outcome never shifts another's
        drop, dc, ds = rng.random(), rng.normal(size=2), rng.normal(size=2)
        if drop < noise.drop_prob:
            continue
        b = g.box
        w = max(0.0, b.w * (1.0 + noise.size_jitter_std * ds[0]))
        h = max(0.0, b.h * (1.0 + noise.size_jitter_std * ds[1]))
        cx = b.x + b.w / 2 + noise.center_jitter_std * b.w * dc[0]
        cy = b.y + b.h / 2 + noise.center_jitter_std * b.h * dc[1]
        if noise.center_jitter_std == 0 and noise.size_jitter_std == 0:
            box = b
        else:
            box = BoundingBox(cx - w / 2, cy - h / 2, w, h)
        box = clip_box(box, w_img, h_img)
        # realized IoU against the visible part, so a noiseless oracle always scores 1
        dets.append(Detection(box, g.cls, min(1.0, noise.score(iou(box, clip_box(g.box, w_img, h_img))))))
    n_fp = int(rng.poisson(noise.false_positive_rate)) if noise.false_positive_rate > 0 else 0
    for _ in range(n_fp):
        cls = ObjectClass.BALL if rng.random() < 0.5 else ObjectClass.PERSON
        frac = rng.uniform(0.01, 0.03) if cls is ObjectClass.BALL else rng.uniform(0.03, 0.15)
        bw = max(1.0, frac * w_img)
        bh = bw if cls is ObjectClass.BALL else 2.2 * bw
        box = clip_box(BoundingBox(rng.uniform(0, w_img), rng.uniform(0, h_img), bw, bh), w_img, h_img)
        best = max((iou(box, g.box) for g in gt if g.cls == cls), default=0.0)
        dets.append(Detection(box, cls, min(1.0, noise.score(best))))
    return dets


def _random(params: Mapping, image: ImageBuffer, rng) -> list[Detection]:
    n = int(rng.poisson(float(params.get("rate", 10.0))))
    w_img, h_img = image.width, image.height
    dets = []
    for _ in range(n):
        x, y = rng.uniform(0, w_img), rng.uniform(0, h_img)
        bw, bh = rng.uniform(1, w_img / 4), rng.uniform(1, h_img / 4)
        cls = ObjectClass.BALL if rng.random() < 0.5 else ObjectClass.PERSON
        dets.append(Detection(BoundingBox(x, y, bw, bh), cls, float(rng.random())))
    return dets


def detect(
    backend: DetectorBackend,
    image: ImageBuffer,
    gt: Sequence[GroundTruthBox] | None = None,
    key: Hashable = None,
) -> list[Detection]:
    """Run ``backend`` on ``image``.

    ``gt`` must be expressed in ``image``'s pixel frame; it is required by the
    oracle and ignored otherwise. ``key`` identifies the frame and seeds the
    per-frame random stream of the synthetic backends.
    """
    kind = backend.kind
    if kind is BackendKind.NULL:
        return []
    if kind is BackendKind.ORACLE:
        if gt is None:
            raise BackendMisconfigured("the oracle backend needs ground truth")
        rng = frame_rng(backend.noise.seed, key)
        return _finalize(backend, _oracle(backend.noise, image, gt, rng), image.width, image.height)
    if kind is BackendKind.RANDOM:
        rng = frame_rng(backend.seed, key)
        return _finalize(backend, _random(backend.params, image, rng), image.width, image.height)
    with backend._lock:
        if backend._model is None:
            backend._model = ExternalModelDetector.from_params(backend.params)
        dets = backend._model(image)
    return _finalize(backend, dets, image.width, image.height)


class ExternalModelDetector:
    """Adapter around a pretrained detector returning torchvision-style outputs.

    ``predict`` maps an ``HxWx3`` uint8 array to ``(boxes_xyxy, labels, scores)``.
    Labels are translated through ``label_names`` (id -> name) and
    ``label_map`` (name -> class); anything unmapped is discarded.
    """

    def __init__(
        self,
        predict: Callable[[np.ndarray], tuple],
        label_names: Mapping[int, str] = COCO_LABELS,
        label_map: Mapping[str, ObjectClass] = DEFAULT_LABEL_MAP,
    ):
        self.predict = predict
        self.label_names = dict(label_names)
        self.label_map = {k: ObjectClass.parse(v) for k, v in label_map.items()}

    def __call__(self, image: ImageBuffer) -> list[Detection]:
        boxes, labels, scores = self.predict(image.pixels)
        out = []
        for (x1, y1, x2, y2), lab, s in zip(np.asarray(boxes, dtype=float), labels, scores):
            name = self.label_names.get(int(lab))
            cls = self.label_map.get(name) if name is not None else None
            if cls is None:
                continue
            box = BoundingBox(float(x1), float(y1), max(0.0, float(x2 - x1)), max(0.0, float(y2 - y1)))
            out.append(Detection(box, cls, float(min(1.0, max(0.0, s)))))
        return out

    @classmethod
    def from_params(cls, params: Mapping) -> ExternalModelDetector:
        label_map = params.get("label_map", DEFAULT_LABEL_MAP)
        if "predict" in params:
            return cls(params["predict"], params.get("label_names", COCO_LABELS), label_map)
        weights = params.get("weights") or os.environ.get(WEIGHTS_ENV)
        if not weights:
            raise ModelAssetMissing(f"no detector weights configured (set params.weights or ${WEIGHTS_ENV})")
        path = Path(weights)
        if not path.is_file():
            raise ModelAssetMissing(f"detector weights not found: {path}")
        return cls(_torchvision_predictor(path, params), params.get("label_names", COCO_LABELS), label_map)


def _torchvision_predictor(path: Path, params: Mapping):
    import torch
    from torchvision.models.detection import fasterrcnn_resnet50_fpn

    model = fasterrcnn_resnet50_fpn(weights=None, weights_backbone=None, box_score_thresh=0.0)
    model.load_state_dict(torch.load(path, map_location="cpu"))
    model.eval()
    device = torch.device(params.get("device", "cpu"))
    model.to(device)

    @torch.no_grad()
    def predict(pixels: np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).float().div(255.0).to(device)
        out = model([t])[0]
        return out["boxes"].cpu().numpy(), out["labels"].cpu().numpy(), out["scores"].cpu().numpy()

    return predict


def _check_shape(shape, name):
    if len(shape) != 2 or not all(v > 0 for v in shape):
        raise InvalidShape(f"{name} must be a positive (w, h) pair, got {shape!r}")


def detections_to_reference_frame(
    dets: Sequence[Detection], from_shape: tuple[float, float], to_shape: tuple[float, float]
) -> list[Detection]:
    """Rescale boxes from a ``from_shape`` image to a ``to_shape`` image; scores unchanged."""
    _check_shape(from_shape, "from_shape")
    _check_shape(to_shape, "to_shape")
    if tuple(from_shape) == tuple(to_shape):
        return list(dets)
    sx, sy = to_shape[0] / from_shape[0], to_shape[1] / from_shape[1]
    return [Detection(scale_box(d.box, sx, sy), d.cls, d.score) for d in dets]


# -- interchange file -------------------------------------------------------


def write_detections(path, records: Iterable[tuple[str | None, int, Sequence[Detection]]], meta: Mapping | None = None):
    """Write newline-delimited JSON: one metadata line, then one line per detection.

    ``records`` yields ``(sequence id, frame id, detections)``.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = {"meta": {"format": "srdetbench-detections", "version": INTERCHANGE_VERSION, **dict(meta or {})}}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for seq, frame_id, dets in records:
            for d in dets:
                rec = {
                    "frame_id": int(frame_id),
                    "class": d.cls.value,
                    "score": d.score,
                    "x": d.box.x,
                    "y": d.box.y,
                    "w": d.box.w,
                    "h": d.box.h,
                }
                if seq is not None:
                    rec["sequence"] = seq
                fh.write(json.dumps(rec) + "\n")
    return path


def read_detections(path) -> tuple[dict, dict[tuple[str | None, int], list[Detection]]]:
    """Inverse of :func:`write_detections`: ``(meta, {(sequence, frame_id): detections})``."""
    path = Path(path)
    meta: dict = {}
    out: dict[tuple[str | None, int], list[Detection]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read detections file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
                continue
            det = Detection(
                BoundingBox(float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"])),
                ObjectClass.parse(rec["class"]),
                float(rec["score"]),
            )
            key = (rec.get("sequence"), int(rec["frame_id"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad detection record ({exc})") from exc
        out.setdefault(key, []).append(det)
    return meta, out
