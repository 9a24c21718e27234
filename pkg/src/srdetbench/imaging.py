"""Image I/O, resolution degradation, interpolation upscaling and PSNR/MSE."""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ImageBuffer
from .errors import (
    DecodeError,
    EmptyInput,
    InvalidDimensions,
    InvalidFactor,
    MissingFile,
    ShapeMismatch,
    UnsupportedChannelCount,
)

LOSSLESS_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".ppm")
PSNR_COLOR_SPACE = "RGB"


class ResampleKernel(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"

    @classmethod
    def parse(cls, value) -> ResampleKernel:
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


_PIL_FILTERS = {
    ResampleKernel.NEAREST: Image.Resampling.NEAREST,
    ResampleKernel.BILINEAR: Image.Resampling.BILINEAR,
    ResampleKernel.BICUBIC: Image.Resampling.BICUBIC,
}


def frame_filename(frame_id: int, ext: str = "png") -> str:
    return f"{frame_id:06d}.{ext.lstrip('.')}"


def list_frames(directory) -> list[Path]:
    """Lossless image files in ``directory``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(f"frame directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in LOSSLESS_EXTENSIONS)


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P" and "transparency" not in im.info:
                im = im.convert("RGB")
                mode = "RGB"
            if mode != "RGB":
                raise UnsupportedChannelCount(
                    f"{path}: expected 3 channels, got mode {mode!r} ({len(im.getbands())} channels)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, UnsupportedChannelCount):
            raise
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    return ImageBuffer(arr)


def save_image(img: ImageBuffer, path) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise MissingFile(f"parent directory does not exist: {path.parent}")
    if path.suffix.lower() not in LOSSLESS_EXTENSIONS:
        raise ValueError(f"refusing lossy or unknown image container {path.suffix!r}")
    Image.fromarray(np.ascontiguousarray(img.pixels), mode="RGB").save(path)
    return path


def _resample(values: np.ndarray, width: int, height: int, kernel: ResampleKernel) -> np.ndarray:
    # Per-channel float resampling; PIL's convolution resizer antialiases when shrinking.
    out = np.empty((height, width, values.shape[2]), dtype=np.float64)
    for c in range(values.shape[2]):
        plane = Image.fromarray(np.ascontiguousarray(values[..., c], dtype=np.float32), mode="F")
        out[..., c] = np.asarray(plane.resize((width, height), _PIL_FILTERS[kernel]), dtype=np.float64)
    return out


def resize_float(values: np.ndarray, width: int, height: int, kernel=ResampleKernel.BICUBIC) -> np.ndarray:
    """Resize an ``HxWxC`` float array without quantizing."""
    kernel = ResampleKernel.parse(kernel)
    if width < 1 or height < 1:
        raise InvalidDimensions(f"target size must be positive, got {width}x{height}")
    values = np.asarray(values, dtype=np.float64)
    if values.shape[1] == width and values.shape[0] == height:
        return values.copy()
    return _resample(values, width, height, kernel)


def resize_to(img: ImageBuffer, width: int, height: int, kernel=ResampleKernel.BICUBIC) -> ImageBuffer:
    """Resize to exactly ``width x height``; the aspect ratio is not preserved."""
    if width < 1 or height < 1:
        raise InvalidDimensions(f"target size must be positive, got {width}x{height}")
    if img.shape == (width, height):
        return img
    return ImageBuffer.from_float(resize_float(img.to_float(), width, height, kernel))


def downscale(img: ImageBuffer, factor: int, kernel=ResampleKernel.BICUBIC) -> ImageBuffer:
    """Shrink both dimensions by an integer factor (floor division)."""
    if int(factor) != factor or factor < 1:
        raise InvalidFactor(f"degradation factor must be an integer >= 1, got {factor!r}")
    factor = int(factor)
    if factor == 1:
        return img
    w, h = img.width // factor, img.height // factor
    if w < 1 or h < 1:
        raise InvalidDimensions(f"{img.width}x{img.height} is too small for factor {factor}")
    return resize_to(img, w, h, kernel)


def upscale(img: ImageBuffer, factor: int, kernel=ResampleKernel.BICUBIC) -> ImageBuffer:
    """Interpolation baseline: enlarge both dimensions by ``factor``."""
    if int(factor) != factor or factor < 1:
        raise InvalidFactor(f"upscale factor must be an integer >= 1, got {factor!r}")
    return resize_to(img, img.width * int(factor), img.height * int(factor), kernel)


def modcrop(img: ImageBuffer, factor: int) -> ImageBuffer:
    """Crop the bottom/right edge so both dimensions are multiples of ``factor``."""
    w = img.width - img.width % factor
    h = img.height - img.height % factor
    if (w, h) == img.shape:
        return img
    return ImageBuffer(img.pixels[:h, :w])


def _check_same_shape(a: ImageBuffer, b: ImageBuffer):
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean squared error over all pixels and RGB channels, in 8-bit units."""
    _check_same_shape(a, b)
    d = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(err: float, peak: float = 255.0) -> float:
    if err <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr(a: ImageBuffer, b: ImageBuffer, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    return psnr_from_mse(mse(a, b), peak)


@dataclass
class QualityReport:
    """Per-image and aggregate fidelity of restored frames.

    ``psnr_db`` is the mean of the finite per-image PSNR values; pairs with
    zero error are left out of that mean and counted in ``n_exact``. It is
    ``math.inf`` only when every pair is exact.
    """

    psnr_db: float
    mse: float
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    n_exact: int = 0
    color_space: str = PSNR_COLOR_SPACE
    peak: float = 255.0

    def to_dict(self) -> dict:
        return {
            "psnr_db": _encode_float(self.psnr_db),
            "mse": self.mse,
            "n_exact": self.n_exact,
            "color_space": self.color_space,
            "peak": self.peak,
            "per_image": [[i, _encode_float(p), m] for i, p, m in self.per_image],
        }

    @classmethod
    def from_dict(cls, d: dict) -> QualityReport:
        return cls(
            psnr_db=_decode_float(d["psnr_db"]),
            mse=float(d["mse"]),
            per_image=[(str(i), _decode_float(p), float(m)) for i, p, m in d["per_image"]],
            n_exact=int(d.get("n_exact", 0)),
            color_space=d.get("color_space", PSNR_COLOR_SPACE),
            peak=float(d.get("peak", 255.0)),
        )


def _encode_float(v: float):
    return "inf" if math.isinf(v) else v


def _decode_float(v) -> float:
    return math.inf if v == "inf" else float(v)


def quality_from_errors(errors: Iterable[tuple[str, float]], peak: float = 255.0) -> QualityReport:
    """Aggregate precomputed per-image MSE values into a :class:`QualityReport`."""
    rows = [(str(image_id), psnr_from_mse(err, peak), float(err)) for image_id, err in errors]
    if not rows:
        raise EmptyInput("quality report needs at least one image pair")
    finite = [p for _, p, _ in rows if math.isfinite(p)]
    agg_psnr = math.fsum(finite) / len(finite) if finite else math.inf
    agg_mse = math.fsum(m for _, _, m in rows) / len(rows)
    return QualityReport(agg_psnr, agg_mse, rows, n_exact=len(rows) - len(finite), peak=peak)


def quality_report(
    pairs: Sequence[tuple[ImageBuffer, ImageBuffer]],
    ids: Sequence[str] | None = None,
    peak: float = 255.0,
) -> QualityReport:
    """PSNR/MSE of ``(restored, reference)`` pairs plus their aggregates."""
    pairs = list(pairs)
    if ids is None:
        ids = [str(i) for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ValueError("ids and pairs differ in length")
    return quality_from_errors(((i, mse(r, ref)) for i, (r, ref) in zip(ids, pairs)), peak)


def read_frames(directory) -> dict[str, ImageBuffer]:
    return {p.stem: load_image(p) for p in list_frames(directory)}


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
