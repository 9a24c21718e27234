"""Procedural test data: texture images and toy tracking datasets.

Everything here is seeded and reproducible so the benchmark runs without the
real footage.
"""

from __future__ import annotations

import numpy as np

from .core import ImageBuffer

TEXTURE_KINDS = ("bandlimited", "shapes")


def bandlimited_texture(
    width: int, height: int, rng: np.random.Generator, exponent: float = 1.0, max_freq: float = 0.35
) -> ImageBuffer:
    """Random-phase colour noise with a ``1/f**exponent`` amplitude spectrum.

    Frequencies above ``max_freq`` cycles/pixel are removed; the result is
    rescaled to mean 128 and standard deviation 40 before quantization.
    """
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    amp = np.zeros_like(f)
    band = (f > 0) & (f < max_freq)
    amp[band] = f[band] ** -exponent
    planes = np.empty((height, width, 3))
    for c in range(3):
        phase = rng.uniform(0, 2 * np.pi, size=(height, width))
        z = np.real(np.fft.ifft2(amp * np.exp(1j * phase)))
        planes[..., c] = z / z.std()
    mix = rng.normal(size=(3, 3)) * 0.5 + np.eye(3)
    out = planes @ mix
    return ImageBuffer.from_float(128.0 + 40.0 * out / out.std())


def shapes_texture(width: int, height: int, rng: np.random.Generator, noise: float = 1.0) -> ImageBuffer:
    """Flat background with sharp-edged rectangles, disks and lines."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.broadcast_to(rng.uniform(0, 255, size=3), (height, width, 3)).copy()
    for _ in range(int(rng.integers(6, 14))):
        color = rng.uniform(0, 255, size=3)
        kind = rng.integers(3)
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        if kind == 0:
            rw, rh = rng.uniform(4, width / 2), rng.uniform(4, height / 2)
            mask = (np.abs(xx - cx) < rw / 2) & (np.abs(yy - cy) < rh / 2)
        elif kind == 1:
            rad = rng.uniform(3, min(width, height) / 4)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < rad * rad
        else:
            ang = rng.uniform(0, np.pi)
            thick = rng.uniform(1.5, 5.0)
            mask = np.abs((xx - cx) * np.sin(ang) - (yy - cy) * np.cos(ang)) < thick / 2
        img = np.where(mask[..., None], color, img)
    if noise > 0:
        img = img + rng.normal(0, noise, size=img.shape)
    return ImageBuffer.from_float(img)


def textures(n: int, width: int, height: int, seed: int, kind: str = "bandlimited") -> list[ImageBuffer]:
    if kind not in TEXTURE_KINDS:
        raise ValueError(f"unknown texture kind {kind!r}; choose from {TEXTURE_KINDS}")
    gen = bandlimited_texture if kind == "bandlimited" else shapes_texture
    rng = np.random.default_rng(seed)
    return [gen(width, height, rng) for _ in range(n)]


def _pitch(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    band = (np.floor(xx / max(8, width // 12)) % 2)[..., None]
    img = np.array([52.0, 128.0, 48.0]) + band * np.array([8.0, 14.0, 6.0])
    img = img + rng.normal(0, 3.0, size=(height, width, 3))
    white = np.array([235.0, 235.0, 235.0])
    lw = max(1, width // 200)
    img[:, width // 2 - lw : width // 2 + lw] = white
    r = height / 5
    ring = np.abs(np.hypot(xx - width / 2, yy - height / 2) - r) < lw
    img[ring] = white
    img[lw * 2 : lw * 3, :] = white
    img[height - lw * 3 : height - lw * 2, :] = white
    return img


def toy_frame_objects(
    width: int, height: int, n_players: int, rng: np.random.Generator
) -> list[tuple[int, str, tuple[int, int, int, int]]]:
    """Random integer boxes ``(track_id, role, (x, y, w, h))`` fully inside the frame."""
    from .dataio import ROLES

    objs = []
    pw = max(4, width // 40)
    ph = int(round(pw * 2.4))
    for t in range(1, n_players + 1):
        role = ROLES[(t - 1) % 7]
        x = int(rng.integers(0, width - pw))
        y = int(rng.integers(0, height - ph))
        objs.append((t, role, (x, y, pw, ph)))
    bs = max(3, width // 100)
    objs.append((n_players + 1, "ball", (int(rng.integers(0, width - bs)), int(rng.integers(0, height - bs)), bs, bs)))
    return objs


_KIT = {
    "player team left": (200, 30, 30),
    "player team right": (30, 60, 200),
    "goalkeeper team left": (240, 200, 20),
    "goalkeeper team right": (250, 120, 200),
    "main referee": (20, 20, 20),
    "side referee": (60, 60, 60),
    "staff": (150, 110, 60),
}


def render_toy_frame(width: int, height: int, objects, rng: np.random.Generator) -> ImageBuffer:
    img = _pitch(width, height, rng)
    yy, xx = np.mgrid[0:height, 0:width]
    for _, role, (x, y, w, h) in objects:
        if role == "ball":
            cx, cy, r = x + w / 2, y + h / 2, w / 2
            img[(xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r] = (250, 250, 250)
        else:
            kit = np.array(_KIT[role], dtype=np.float64)
            img[y : y + h, x : x + w] = kit
            img[y : y + h // 4, x + w // 4 : x + w - w // 4] = (225, 180, 150)
            img[y + (3 * h) // 4 : y + h, x : x + w] = kit * 0.4
    return ImageBuffer.from_float(img)


def make_toy_dataset(
    root,
    n_sequences: int = 3,
    frames_per_sequence: int = 3,
    shape: tuple[int, int] = (384, 216),
    n_players: int = 8,
    seed: int = 0,
    split: str = "test",
):
    """Write a small tracking-style dataset under ``root`` and return its manifest path.

    Layout per sequence: ``<id>/img1/<frame:06d>.png``, ``<id>/gt/gt.txt`` and
    ``<id>/roles.txt``, plus ``root/manifest.toml``.
    """
    from pathlib import Path

    from .core import BoundingBox
    from .dataio import DatasetManifest, SequenceEntry, Split, write_manifest, write_mot_gt, write_role_file
    from .imaging import frame_filename, save_image

    root = Path(root)
    rng = np.random.default_rng(seed)
    width, height = shape
    entries = []
    for s in range(n_sequences):
        seq_id = f"TOY-{s + 1:03d}"
        seq_dir = root / seq_id
        (seq_dir / "img1").mkdir(parents=True, exist_ok=True)
        (seq_dir / "gt").mkdir(exist_ok=True)
        gt = {}
        roles = {}
        for f in range(1, frames_per_sequence + 1):
            objs = toy_frame_objects(width, height, n_players, rng)
            save_image(render_toy_frame(width, height, objs, rng), seq_dir / "img1" / frame_filename(f))
            gt[f] = [(t, BoundingBox(*map(float, box))) for t, _, box in objs]
            roles.update({t: role for t, role, _ in objs})
        write_mot_gt(seq_dir / "gt" / "gt.txt", gt)
        write_role_file(seq_dir / "roles.txt", roles)
        entries.append(
            SequenceEntry(
                seq_id,
                seq_dir / "img1",
                seq_dir / "gt" / "gt.txt",
                seq_dir / "roles.txt",
                (width, height),
                frames_per_sequence,
            )
        )
    return write_manifest(root / "manifest.toml", DatasetManifest(tuple(entries), Split(split)))
