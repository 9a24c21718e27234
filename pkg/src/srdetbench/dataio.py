"""Tracking-dataset ingestion: MOT ground truth, role files and manifests.

Ground truth stays in the native annotation frame; any rescaling happens
downstream.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from PIL import Image

from .core import BoundingBox, GroundTruthBox, ObjectClass
from .errors import EmptyFile, MalformedLine, ManifestUnreadable, MissingFile, TrackWithoutRole, UnknownRole
from .imaging import frame_filename

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ROLES = (
    "player team left",
    "player team right",
    "goalkeeper team left",
    "goalkeeper team right",
    "main referee",
    "side referee",
    "staff",
    "ball",
)


def map_role_to_class(role: str) -> ObjectClass:
    """Collapse a dataset role into ``BALL`` or ``PERSON``."""
    r = " ".join(role.strip().lower().split())
    if r not in ROLES:
        raise UnknownRole(f"unknown role {role!r}")
    return ObjectClass.BALL if r == "ball" else ObjectClass.PERSON


# -- MOT ground truth -------------------------------------------------------


def _parse_int(tok: str) -> int:
    try:
        v = float(tok)
    except ValueError:
        raise ValueError(f"{tok!r} is not an integer") from None
    if not v.is_integer():
        raise ValueError(f"{tok!r} is not an integer")
    return int(v)


def parse_mot_lines(lines, source=None) -> dict[int, list[tuple[int, BoundingBox]]]:
    frames: dict[int, list[tuple[int, BoundingBox]]] = {}
    seen = False
    for lineno, raw in enumerate(lines, 1):
        line = raw[:-1] if raw.endswith("\r") else raw
        if not line.strip():
            continue
        seen = True
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 6:
            raise MalformedLine(lineno, line, f"expected >= 6 fields, got {len(fields)}", source)
        try:
            frame_id = _parse_int(fields[0])
            track_id = _parse_int(fields[1])
            x, y, w, h = (float(f) for f in fields[2:6])
        except ValueError as exc:
            raise MalformedLine(lineno, line, str(exc), source) from None
        if not all(math.isfinite(v) for v in (x, y, w, h)):
            raise MalformedLine(lineno, line, "non-finite coordinate", source)
        if frame_id < 1:
            raise MalformedLine(lineno, line, "frame ids start at 1", source)
        if track_id < 0:
            raise MalformedLine(lineno, line, "negative track id", source)
        if w < 0 or h < 0:
            raise MalformedLine(lineno, line, "negative box size", source)
        frames.setdefault(frame_id, []).append((track_id, BoundingBox(x, y, w, h)))
    if not seen:
        raise EmptyFile(f"no annotations in {source or 'input'}")
    return frames


def parse_mot_gt(path) -> dict[int, list[tuple[int, BoundingBox]]]:
    """Parse ``frame,track_id,x,y,w,h[,...]`` lines; extra fields are ignored."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"ground-truth file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    # only LF / CRLF terminate lines; str.splitlines would also split on \v, \f, U+2028, ...
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return parse_mot_lines(lines, source=str(path))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def format_mot_gt(frames: Mapping[int, list[tuple[int, BoundingBox]]]) -> str:
    """Serialize to MOT text (``conf=1`` and three ``-1`` placeholders per line)."""
    out = []
    for frame_id in sorted(frames):
        for track_id, b in frames[frame_id]:
            out.append(f"{frame_id},{track_id},{_fmt(b.x)},{_fmt(b.y)},{_fmt(b.w)},{_fmt(b.h)},1,-1,-1,-1\n")
    return "".join(out)


def write_mot_gt(path, frames) -> Path:
    path = Path(path)
    path.write_text(format_mot_gt(frames), encoding="utf-8", newline="\n")
    return path


# -- role files -------------------------------------------------------------


def parse_role_file(path) -> dict[int, str]:
    """Read ``track_id=role`` lines, skipping blanks and ``#`` comments."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"role file not found: {path}")
    roles: dict[int, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, role = line.partition("=")
        if not sep:
            raise MalformedLine(lineno, raw, "expected track_id=role", str(path))
        try:
            track_id = _parse_int(key.strip())
        except ValueError:
            raise MalformedLine(lineno, raw, "track id is not an integer", str(path)) from None
        role = " ".join(role.strip().lower().split())
        if role not in ROLES:
            raise UnknownRole(f"{path}:{lineno}: unknown role {role!r}")
        roles[track_id] = role
    return roles


def write_role_file(path, roles: Mapping[int, str]) -> Path:
    path = Path(path)
    lines = [f"{tid}={roles[tid]}\n" for tid in sorted(roles)]
    path.write_text("".join(lines), encoding="utf-8", newline="\n")
    return path


# -- manifests --------------------------------------------------------------


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SequenceEntry:
    seq_id: str
    frame_dir: Path
    gt_file: Path
    role_file: Path
    native_shape: tuple[int, int]
    frame_count: int
    frame_ext: str = "png"

    def frame_path(self, frame_id: int) -> Path:
        return self.frame_dir / frame_filename(frame_id, self.frame_ext)


@dataclass(frozen=True)
class DatasetManifest:
    sequences: tuple[SequenceEntry, ...]
    split: Split
    source: Path | None = None


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_manifest(path) -> DatasetManifest:
    """Read a TOML manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ManifestUnreadable(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    try:
        split = Split(str(doc.get("split", "test")).lower())
        seqs = []
        for s in doc["sequences"]:
            w, h = (int(v) for v in s["native_shape"])
            seqs.append(
                SequenceEntry(
                    seq_id=str(s["id"]),
                    frame_dir=_resolve(base, s["frames"]),
                    gt_file=_resolve(base, s["gt"]),
                    role_file=_resolve(base, s["roles"]),
                    native_shape=(w, h),
                    frame_count=int(s["frame_count"]),
                    frame_ext=str(s.get("frame_ext", "png")),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestUnreadable(f"malformed manifest {path}: {exc!r}") from exc
    return DatasetManifest(tuple(seqs), split, path)


def _rel(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


def write_manifest(path, manifest: DatasetManifest) -> Path:
    path = Path(path)
    base = path.parent
    lines = [f'split = "{manifest.split.value}"\n']
    for s in manifest.sequences:
        lines += [
            "\n[[sequences]]\n",
            f"id = {json.dumps(s.seq_id)}\n",
            f"frames = {json.dumps(_rel(s.frame_dir, base))}\n",
            f"gt = {json.dumps(_rel(s.gt_file, base))}\n",
            f"roles = {json.dumps(_rel(s.role_file, base))}\n",
            f"native_shape = [{s.native_shape[0]}, {s.native_shape[1]}]\n",
            f"frame_count = {s.frame_count}\n",
            f'frame_ext = "{s.frame_ext}"\n',
        ]
    path.write_text("".join(lines), encoding="utf-8")
    return path


def load_ground_truth(entry: SequenceEntry) -> dict[int, list[GroundTruthBox]]:
    """Class-labelled ground truth for frames ``1..frame_count`` (plus any annotated beyond)."""
    frames = parse_mot_gt(entry.gt_file)
    roles = parse_role_file(entry.role_file)
    out: dict[int, list[GroundTruthBox]] = {f: [] for f in range(1, entry.frame_count + 1)}
    for frame_id in sorted(frames):
        boxes = out.setdefault(frame_id, [])
        for track_id, box in frames[frame_id]:
            if track_id not in roles:
                raise TrackWithoutRole(f"{entry.seq_id}: track {track_id} has no role in {entry.role_file}")
            boxes.append(GroundTruthBox(box, map_role_to_class(roles[track_id]), track_id, frame_id))
    return out


@dataclass
class ValidationReport:
    manifest: str
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"manifest": self.manifest, "ok": self.ok, "violations": list(self.violations)}


def _image_size(path: Path) -> tuple[int, int] | None:
    try:
        with Image.open(path) as im:
            return im.size
    except OSError:
        return None


def validate_manifest(manifest) -> ValidationReport:
    """Check files, frame counts and frame shapes; content problems become violations."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    report = ValidationReport(str(manifest.source) if manifest.source else "<memory>")
    v = report.violations
    for s in manifest.sequences:
        if s.native_shape[0] <= 0 or s.native_shape[1] <= 0:
            v.append(f"{s.seq_id}: native shape must be positive, got {s.native_shape}")
        if not s.frame_dir.is_dir():
            v.append(f"{s.seq_id}: frame directory missing: {s.frame_dir}")
        else:
            for frame_id in range(1, s.frame_count + 1):
                p = s.frame_path(frame_id)
                if not p.is_file():
                    v.append(f"{s.seq_id}: frame {frame_id} missing ({p.name})")
                    continue
                size = _image_size(p)
                if size is None:
                    v.append(f"{s.seq_id}: frame {frame_id} cannot be decoded")
                elif tuple(size) != tuple(s.native_shape):
                    v.append(f"{s.seq_id}: frame {frame_id} is {size[0]}x{size[1]}, manifest says "
                             f"{s.native_shape[0]}x{s.native_shape[1]}")
        frames = roles = None
        try:
            frames = parse_mot_gt(s.gt_file)
        except (MissingFile, EmptyFile, MalformedLine) as exc:
            v.append(f"{s.seq_id}: ground truth: {exc}")
        try:
            roles = parse_role_file(s.role_file)
        except (MissingFile, MalformedLine, UnknownRole) as exc:
            v.append(f"{s.seq_id}: roles: {exc}")
        if frames is not None:
            for frame_id in sorted(f for f in frames if f > s.frame_count):
                v.append(f"{s.seq_id}: ground truth frame {frame_id} beyond frame count {s.frame_count}")
            if roles is not None:
                missing = sorted({t for boxes in frames.values() for t, _ in boxes} - set(roles))
                for t in missing:
                    v.append(f"{s.seq_id}: track {t} has no role")
    return report
