"""Detection metrics: greedy IoU matching, 101-point interpolated AP, mAP, mean IoU.

Conventions, recorded in every :class:`EvalResult`:

* AP uses COCO-style 101-point interpolation on the precision envelope.
* mAP@0.50:0.95 averages over classes and the thresholds 0.50, 0.55, ..., 0.95.
* Mean IoU at a threshold is pooled over matched pairs only; with no pairs it
  is undefined (``None``).
* A class with neither detections nor ground truth anywhere in the split is
  left out of the class average.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import Detection, GroundTruthBox, ObjectClass, iou
from .errors import FrameMismatch

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
MEAN_IOU_THRESHOLDS = (0.5, 0.7, 0.9)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETECTIONS = 100

COLUMN_MAP_50_95 = "mAP@IoU=0.50:0.95"
COLUMN_MAP_50 = "mAP@IoU=0.50"

CONVENTIONS = {
    "ap_interpolation": "101-point",
    "iou_thresholds": "0.50:0.05:0.95",
    "mean_iou": "matched pairs only, pooled over frames and classes",
    "class_average": "classes absent from both detections and ground truth are excluded",
    "max_detections": MAX_DETECTIONS,
}


def mean_iou_column(tau: float) -> str:
    return f"meanIoU@{tau:g}"


@dataclass
class Matching:
    pairs: list[tuple[int, int, float]]
    unmatched_dets: list[int]
    unmatched_gts: list[int]
    tau: float


def _det_order_key(d: Detection):
    return (-d.score, d.box.x, d.box.y)


def _greedy(dets: Sequence[Detection], det_idx: list[int], gts: Sequence[GroundTruthBox], gt_idx: list[int], tau: float):
    taken: set[int] = set()
    pairs = []
    for di in det_idx:
        best, best_iou = -1, -1.0
        for gi in gt_idx:
            if gi in taken:
                continue
            v = iou(dets[di].box, gts[gi].box)
            if v >= tau and v > best_iou:
                best, best_iou = gi, v
        if best >= 0:
            taken.add(best)
            pairs.append((di, best, best_iou))
    return pairs


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], tau: float, cls: ObjectClass
) -> Matching:
    """Greedy one-to-one matching of class-``cls`` detections to ground truth.

    Detections are visited by descending score (ties: box x, then y). Each takes
    the unmatched ground truth with the highest IoU, provided it is at least
    ``tau``; equal IoUs go to the lower ground-truth index.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    det_idx = sorted((i for i, d in enumerate(dets) if d.cls == cls), key=lambda i: _det_order_key(dets[i]))
    gt_idx = [i for i, g in enumerate(gts) if g.cls == cls]
    pairs = _greedy(dets, det_idx, gts, gt_idx, tau)
    matched_d = {p[0] for p in pairs}
    matched_g = {p[1] for p in pairs}
    return Matching(
        pairs=pairs,
        unmatched_dets=[i for i in det_idx if i not in matched_d],
        unmatched_gts=[i for i in gt_idx if i not in matched_g],
        tau=tau,
    )


def interpolated_ap(scores: Sequence[float], is_tp: Sequence[bool], n_gt: int, order_keys=None) -> float:
    """101-point AP from per-detection TP flags.

    ``order_keys`` give the tie-broken ranking (default: descending score).
    """
    n = len(scores)
    if n_gt == 0:
        return 0.0
    if n == 0:
        return 0.0
    if order_keys is None:
        order_keys = [(-s,) for s in scores]
    order = sorted(range(n), key=lambda i: order_keys[i])
    tp = np.array([1.0 if is_tp[i] else 0.0 for i in order])
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < n, envelope[np.minimum(idx, n - 1)], 0.0)
    return float(np.mean(sampled))


def average_precision(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], tau: float, cls: ObjectClass
) -> float:
    """AP for one class on a single frame."""
    m = match_detections(dets, gts, tau, cls)
    tp = {p[0] for p in m.pairs}
    det_idx = [i for i, d in enumerate(dets) if d.cls == cls]
    n_gt = sum(1 for g in gts if g.cls == cls)
    return interpolated_ap(
        [dets[i].score for i in det_idx],
        [i in tp for i in det_idx],
        n_gt,
        [_det_order_key(dets[i]) + (i,) for i in det_idx],
    )


@dataclass
class EvalResult:
    """Detection quality on one split; all headline values are percentages.

    ``mean_iou_at[tau]`` is ``None`` when no pair matched at ``tau``.
    """

    map_50_95: float
    map_50: float
    mean_iou_at: dict[float, float | None]
    per_class_ap: dict[str, dict[float, float]]
    matched_pairs: dict[float, int] = field(default_factory=dict)
    evaluated_classes: list[str] = field(default_factory=list)
    n_frames: int = 0
    n_detections: int = 0
    n_ground_truth: int = 0
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def columns(self) -> dict[str, float | None]:
        row = {COLUMN_MAP_50_95: self.map_50_95, COLUMN_MAP_50: self.map_50}
        for tau, v in sorted(self.mean_iou_at.items()):
            row[mean_iou_column(tau)] = v
        return row

    def to_dict(self) -> dict:
        return {
            "columns": self.columns(),
            "map_50_95": self.map_50_95,
            "map_50": self.map_50,
            "mean_iou_at": {f"{t:g}": v for t, v in sorted(self.mean_iou_at.items())},
            "matched_pairs": {f"{t:g}": v for t, v in sorted(self.matched_pairs.items())},
            "per_class_ap": {
                c: {f"{t:g}": v for t, v in sorted(aps.items())} for c, aps in sorted(self.per_class_ap.items())
            },
            "evaluated_classes": list(self.evaluated_classes),
            "n_frames": self.n_frames,
            "n_detections": self.n_detections,
            "n_ground_truth": self.n_ground_truth,
            "conventions": dict(self.conventions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalResult:
        return cls(
            map_50_95=float(d["map_50_95"]),
            map_50=float(d["map_50"]),
            mean_iou_at={float(t): (None if v is None else float(v)) for t, v in d["mean_iou_at"].items()},
            per_class_ap={c: {float(t): float(v) for t, v in aps.items()} for c, aps in d["per_class_ap"].items()},
            matched_pairs={float(t): int(v) for t, v in d.get("matched_pairs", {}).items()},
            evaluated_classes=list(d.get("evaluated_classes", [])),
            n_frames=int(d.get("n_frames", 0)),
            n_detections=int(d.get("n_detections", 0)),
            n_ground_truth=int(d.get("n_ground_truth", 0)),
            conventions=dict(d.get("conventions", CONVENTIONS)),
        )


def _frame_sort_key(key):
    return key if isinstance(key, tuple) else (key,)


def evaluate(
    dets_per_frame: Mapping[Hashable, Sequence[Detection]],
    gts_per_frame: Mapping[Hashable, Sequence[GroundTruthBox]],
    iou_thresholds: Iterable[float] = IOU_THRESHOLDS,
    mean_iou_thresholds: Iterable[float] = MEAN_IOU_THRESHOLDS,
    classes: Iterable[ObjectClass] = tuple(ObjectClass),
) -> EvalResult:
    """mAP and mean IoU over a split.

    Keys identify frames (e.g. ``(sequence, frame_id)``) and must be mutually
    sortable; frames present in ``gts_per_frame`` but not in ``dets_per_frame``
    simply have no detections. Boxes must share one reference frame.
    """
    extra = [k for k in dets_per_frame if k not in gts_per_frame]
    if extra:
        raise FrameMismatch(f"detections reference frames without ground truth: {sorted(extra, key=_frame_sort_key)[:5]}")
    iou_thresholds = tuple(iou_thresholds)
    mean_iou_thresholds = tuple(mean_iou_thresholds)
    taus = sorted(set(iou_thresholds) | set(mean_iou_thresholds))
    classes = tuple(classes)
    frames = sorted(gts_per_frame, key=_frame_sort_key)

    # per (class, tau): scores, tp flags, ranking keys; plus pooled matched ious per tau
    scores: dict[ObjectClass, list[float]] = defaultdict(list)
    keys: dict[ObjectClass, list[tuple]] = defaultdict(list)
    tps: dict[tuple[ObjectClass, float], list[bool]] = defaultdict(list)
    pair_ious: dict[float, list[float]] = defaultdict(list)
    n_gt: dict[ObjectClass, int] = defaultdict(int)
    n_det_total = n_gt_total = 0

    for frame in frames:
        dets = list(dets_per_frame.get(frame, ()))
        gts = list(gts_per_frame[frame])
        n_det_total += len(dets)
        n_gt_total += len(gts)
        for cls in classes:
            det_idx = sorted((i for i, d in enumerate(dets) if d.cls == cls), key=lambda i: _det_order_key(dets[i]))
            gt_idx = [i for i, g in enumerate(gts) if g.cls == cls]
            n_gt[cls] += len(gt_idx)
            for rank, i in enumerate(det_idx):
                d = dets[i]
                scores[cls].append(d.score)
                keys[cls].append((-d.score, _frame_sort_key(frame), d.box.x, d.box.y, rank))
            if not det_idx:
                continue
            ious = np.array([[iou(dets[i].box, gts[j].box) for j in gt_idx] for i in det_idx]).reshape(
                len(det_idx), len(gt_idx)
            )
            for tau in taus:
                matched = _greedy_matrix(ious, tau)
                tps[(cls, tau)].extend(m >= 0 for m in matched)
                pair_ious[tau].extend(ious[r, m] for r, m in enumerate(matched) if m >= 0)

    evaluated = [c for c in classes if n_gt[c] > 0 or scores[c]]
    per_class: dict[str, dict[float, float]] = {}
    for cls in evaluated:
        per_class[cls.value] = {
            tau: interpolated_ap(scores[cls], tps[(cls, tau)], n_gt[cls], keys[cls]) for tau in iou_thresholds
        }

    def mean_ap(ts):
        if not evaluated:
            return 0.0
        vals = [per_class[c.value][t] for c in evaluated for t in ts]
        return 100.0 * float(np.mean(vals))

    map_50 = mean_ap([0.5]) if 0.5 in iou_thresholds else mean_ap(iou_thresholds[:1])
    mean_iou_at = {
        tau: (100.0 * float(np.mean(pair_ious[tau])) if pair_ious[tau] else None) for tau in mean_iou_thresholds
    }
    return EvalResult(
        map_50_95=mean_ap(iou_thresholds),
        map_50=map_50,
        mean_iou_at=mean_iou_at,
        per_class_ap=per_class,
        matched_pairs={tau: len(pair_ious[tau]) for tau in mean_iou_thresholds},
        evaluated_classes=[c.value for c in evaluated],
        n_frames=len(frames),
        n_detections=n_det_total,
        n_ground_truth=n_gt_total,
    )


def _greedy_matrix(ious: np.ndarray, tau: float) -> list[int]:
    # rows are already in visiting order; returns the matched column per row or -1
    taken = np.zeros(ious.shape[1], dtype=bool)
    out = []
    for row in ious:
        cand = np.where(taken | (row < tau), -1.0, row)
        j = int(np.argmax(cand)) if cand.size else -1
        if j >= 0 and cand[j] >= tau:
            taken[j] = True
            out.append(j)
        else:
            out.append(-1)
    return out
