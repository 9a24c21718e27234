"""Patch-based L1 training with Adam under the warmup/cosine schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core import ImageBuffer
from ..errors import EmptyDataset, InvalidConfig, NonFiniteLoss, PatchLargerThanImage
from ..imaging import ResampleKernel, downscale, modcrop, psnr, read_frames
from .checkpoint import save_checkpoint
from .model import SRModel, sr_forward
from .schedule import lr_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    total_steps: int = 15000
    lr_floor: float = 1e-5
    lr_peak: float = 1e-2
    warmup_fraction: float = 0.05
    patch_size: int = 64
    loss: str = "L1"
    seed: int = 0
    augment_flips: bool = True
    augment_rot90: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    val_every: int = 0

    def __post_init__(self):
        if not 0 < self.lr_floor <= self.lr_peak:
            raise InvalidConfig(f"need 0 < lr_floor <= lr_peak, got {self.lr_floor}, {self.lr_peak}")
        if not 0 < self.warmup_fraction < 1:
            raise InvalidConfig(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 2:
            raise InvalidConfig(f"total_steps must be >= 2, got {self.total_steps}")
        if self.patch_size < 8:
            raise InvalidConfig(f"patch_size must be >= 8, got {self.patch_size}")
        if self.loss.upper() != "L1":
            raise InvalidConfig(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)

    def record(self, step: int, lr: float, loss: float):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("history steps must be strictly increasing")
        self.steps.append(step)
        self.learning_rates.append(lr)
        self.losses.append(loss)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_images(hr_images) -> list[ImageBuffer]:
    if isinstance(hr_images, (str, Path)):
        return list(read_frames(hr_images).values())
    return list(hr_images)


class EpochSampler:
    """Yields image indices in a fresh random permutation every epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._queue: list[int] = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self._queue:
                self._queue = list(self.rng.permutation(self.n))
            out.append(int(self._queue.pop()))
        return out


def sample_batch(
    images: Sequence[ImageBuffer],
    indices: Sequence[int],
    scale: int,
    patch: int,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Random HR crops with their bicubic-degraded LR counterparts, as float tensors in [0, 1]."""
    hr_size = patch * scale
    lr_list, hr_list = [], []
    for i in indices:
        img = images[i]
        y = int(rng.integers(img.height - hr_size + 1))
        x = int(rng.integers(img.width - hr_size + 1))
        crop = img.pixels[y : y + hr_size, x : x + hr_size]
        if cfg.augment_flips:
            if rng.random() < 0.5:
                crop = crop[:, ::-1]
            if rng.random() < 0.5:
                crop = crop[::-1, :]
        if cfg.augment_rot90 and rng.random() < 0.5:
            crop = crop.transpose(1, 0, 2)
        hr = ImageBuffer(np.ascontiguousarray(crop))
        lr = downscale(hr, scale, ResampleKernel.BICUBIC)
        hr_list.append(hr.pixels)
        lr_list.append(lr.pixels)

    def stack(arrs):
        t = np.stack(arrs).astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        return torch.from_numpy(np.ascontiguousarray(t))

    return stack(lr_list), stack(hr_list)


def evaluate_psnr(model: SRModel, hr_images: Sequence[ImageBuffer]) -> float:
    """Mean PSNR of the model on bicubic-degraded copies of ``hr_images``."""
    vals = []
    for hr in hr_images:
        ref = modcrop(hr, model.scale)
        vals.append(psnr(sr_forward(model, downscale(ref, model.scale)), ref))
    return float(np.mean(vals))


def train(
    model: SRModel,
    hr_images,
    cfg: TrainConfig,
    val_images: Sequence[ImageBuffer] | None = None,
) -> tuple[SRModel, TrainHistory]:
    images = _as_images(hr_images)
    if not images:
        raise EmptyDataset("no training images")
    scale = model.scale
    hr_size = cfg.patch_size * scale
    for i, img in enumerate(images):
        if img.width < hr_size or img.height < hr_size:
            raise PatchLargerThanImage(
                f"image {i} is {img.width}x{img.height}, smaller than the {hr_size}px HR patch"
            )

    rng = np.random.default_rng(cfg.seed)
    sampler = EpochSampler(len(images), rng)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_floor)
    history = TrainHistory()
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    dtype = next(model.parameters()).dtype
    model.train()

    for step in range(cfg.total_steps):
        lr = lr_at(step, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = sampler.take(cfg.batch_size)
        lr_batch, hr_batch = sample_batch(images, idx, scale, cfg.patch_size, rng, cfg)
        out = model(lr_batch.to(dtype))
        loss = F.l1_loss(out, hr_batch.to(dtype))
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at step {step} (lr={lr:.3g})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if not all(bool(torch.isfinite(p).all()) for p in model.parameters()):
            raise NonFiniteLoss(f"parameters became non-finite after step {step} (lr={lr:.3g})")
        history.record(step, lr, value)

        done = step + 1
        if cfg.val_every and val_images and (done % cfg.val_every == 0 or done == cfg.total_steps):
            history.validation.append((done, evaluate_psnr(model, val_images)))
            model.train()
        if ckpt_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(model, ckpt_dir / f"rlfn_x{scale}_step{done:06d}.srdb")
        if done % 100 == 0:
            log.info("step %d/%d lr=%.3g loss=%.5f", done, cfg.total_steps, lr, value)

    if ckpt_dir is not None:
        save_checkpoint(model, ckpt_dir / f"rlfn_x{scale}_final.srdb")
    model.eval()
    return model, history
