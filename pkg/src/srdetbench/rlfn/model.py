"""Residual local feature network for single-image super-resolution.

Layout: 3x3 stem -> N residual local feature blocks -> 3x3 fusion conv with a
global skip from the stem -> conv to ``3 * scale**2`` channels -> pixel shuffle.
Each block runs three 3x3 conv + LeakyReLU stages with a local skip, a 1x1
mixing conv, and an enhanced spatial attention unit that gates the features
through a sigmoid mask computed on a strided, max-pooled copy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..core import ImageBuffer
from ..errors import InputTooSmall, InvalidConfig

SCALES = (2, 3, 4, 6)
MIN_INPUT_SIZE = 8
TINY_CHANNELS = 16
TINY_BLOCKS = 2


@dataclass(frozen=True)
class SRModelConfig:
    """Architecture hyperparameters.

    ``attention_reduction`` is the channel width of the attention bottleneck
    (capped at ``feature_channels``). ``tiny_preset`` overrides the channel and
    block counts with a small test-sized network.
    """

    scale: int = 2
    feature_channels: int = 52
    num_blocks: int = 4
    attention_reduction: int = 16
    tiny_preset: bool = False

    def __post_init__(self):
        if self.tiny_preset:
            object.__setattr__(self, "feature_channels", TINY_CHANNELS)
            object.__setattr__(self, "num_blocks", TINY_BLOCKS)
        if self.scale not in SCALES:
            raise InvalidConfig(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.feature_channels < 4:
            raise InvalidConfig(f"feature_channels must be >= 4, got {self.feature_channels}")
        if self.num_blocks < 1:
            raise InvalidConfig(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.attention_reduction < 1:
            raise InvalidConfig(f"attention_reduction must be >= 1, got {self.attention_reduction}")

    @property
    def attention_channels(self) -> int:
        return min(self.attention_reduction, self.feature_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SRModelConfig:
        keys = ("scale", "feature_channels", "num_blocks", "attention_reduction", "tiny_preset")
        return cls(**{k: d[k] for k in keys if k in d})

    @classmethod
    def tiny(cls, scale: int = 2, **kw) -> SRModelConfig:
        return cls(scale=scale, tiny_preset=True, **kw)


class StridedMaxPool(nn.Module):
    """7x7/stride-3 max pooling, shrinking the window for small feature maps."""

    def __init__(self, kernel_size: int = 7, stride: int = 3):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride

    def window(self, x: torch.Tensor) -> int:
        return min(self.kernel_size, x.shape[-2], x.shape[-1])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.max_pool2d(x, kernel_size=self.window(x), stride=self.stride)


class SpatialAttention(nn.Module):
    def __init__(self, channels: int, attn_channels: int):
        super().__init__()
        f = attn_channels
        self.conv1 = nn.Conv2d(channels, f, 1)
        self.conv_f = nn.Conv2d(f, f, 1)
        self.conv2 = nn.Conv2d(f, f, 3, stride=2, padding=0)
        self.conv3 = nn.Conv2d(f, f, 3, padding=1)
        self.conv4 = nn.Conv2d(f, channels, 1)
        self.pool = StridedMaxPool()

    def mask(self, x: torch.Tensor) -> torch.Tensor:
        c1_ = self.conv1(x)
        c1 = self.conv2(c1_)
        v_max = self.pool(c1)
        c3 = self.conv3(v_max)
        c3 = F.interpolate(c3, size=x.shape[-2:], mode="bilinear", align_corners=False)
        cf = self.conv_f(c1_)
        return torch.sigmoid(self.conv4(c3 + cf))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.mask(x)


class ResidualLocalFeatureBlock(nn.Module):
    def __init__(self, channels: int, attn_channels: int):
        super().__init__()
        self.c1_r = nn.Conv2d(channels, channels, 3, padding=1)
        self.c2_r = nn.Conv2d(channels, channels, 3, padding=1)
        self.c3_r = nn.Conv2d(channels, channels, 3, padding=1)
        self.c5 = nn.Conv2d(channels, channels, 1)
        self.esa = SpatialAttention(channels, attn_channels)
        self.act = nn.LeakyReLU(0.05)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.act(self.c1_r(x))
        out = self.act(self.c2_r(out))
        out = self.act(self.c3_r(out))
        out = out + x
        return self.esa(self.c5(out))


class SRModel(nn.Module):
    """The network plus its config; works on ``(N, 3, H, W)`` tensors in ``[0, 1]``."""

    def __init__(self, config: SRModelConfig):
        super().__init__()
        self.config = config
        c = config.feature_channels
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.blocks = nn.ModuleList(
            ResidualLocalFeatureBlock(c, config.attention_channels) for _ in range(config.num_blocks)
        )
        self.fusion = nn.Conv2d(c, c, 3, padding=1)
        # replicate padding keeps the interpolation path from darkening borders
        self.upsampler = nn.Conv2d(c, 3 * config.scale**2, 3, padding=1, padding_mode="replicate")
        self.shuffle = nn.PixelShuffle(config.scale)

    @property
    def scale(self) -> int:
        return self.config.scale

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.stem(x)
        out = feat
        for block in self.blocks:
            out = block(out)
        out = self.fusion(out) + feat
        return self.shuffle(self.upsampler(out))


def count_parameters(config: SRModelConfig) -> int:
    """Closed-form parameter count from layer dimensions."""
    c, f, s = config.feature_channels, config.attention_channels, config.scale

    def conv(cin, cout, k):
        return cin * cout * k * k + cout

    esa = conv(c, f, 1) + conv(f, f, 1) + conv(f, f, 3) + conv(f, f, 3) + conv(f, c, 1)
    block = 3 * conv(c, c, 3) + conv(c, c, 1) + esa
    return conv(3, c, 3) + config.num_blocks * block + conv(c, c, 3) + conv(c, 3 * s * s, 3)


INIT_MODES = ("interp", "default")


def build_model(config: SRModelConfig, seed: int = 0, init: str = "interp", dtype=torch.float32) -> SRModel:
    """Construct a model with parameters drawn from a private seeded generator.

    ``init="default"`` keeps PyTorch's layer initialization. ``"interp"`` then
    overlays a cubic-interpolation path (see :func:`init_interp`) so training
    starts at an interpolation baseline instead of noise.
    """
    if not isinstance(config, SRModelConfig):
        raise InvalidConfig(f"expected SRModelConfig, got {type(config).__name__}")
    if init not in INIT_MODES:
        raise InvalidConfig(f"init must be one of {INIT_MODES}, got {init!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SRModel(config)
        if init == "interp":
            init_interp(model)
    return model.to(dtype)


def _cubic(x: float, a: float = -0.5) -> float:
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def interp_taps(scale: int) -> np.ndarray:
    """3-tap cubic interpolation weights, one row per output sub-pixel.

    ``taps[k, j]`` weighs LR neighbour ``j - 1`` for sub-pixel ``k`` (half-pixel
    centres). The cubic kernel's fourth tap is dropped and the rest renormalized.
    """
    taps = np.zeros((scale, 3))
    for k in range(scale):
        d = (k + 0.5) / scale - 0.5
        row = np.array([_cubic(d + 1), _cubic(d), _cubic(d - 1)])
        taps[k] = row / row.sum()
    return taps


@torch.no_grad()
def init_interp(model: SRModel, residual_gain: float = 0.1) -> SRModel:
    """Route RGB through stem channels 0-2 into a cubic-interpolating upsampler.

    The other stem channels keep their random values; the fusion layer and the
    upsampler weights reading those channels are scaled by ``residual_gain`` so
    the learned branch starts small.
    """
    s = model.scale
    taps = torch.from_numpy(interp_taps(s)).to(model.stem.weight.dtype)
    model.stem.weight[:3] = 0.0
    model.stem.bias[:3] = 0.0
    for ch in range(3):
        model.stem.weight[ch, ch, 1, 1] = 1.0
    model.fusion.weight.mul_(residual_gain)
    model.fusion.bias.mul_(residual_gain)
    up = model.upsampler
    up.weight.mul_(residual_gain)
    up.weight[:, :3] = 0.0
    up.bias.zero_()
    for ch in range(3):
        for ky in range(s):
            for kx in range(s):
                out = ch * s * s + ky * s + kx
                up.weight[out, ch] = torch.outer(taps[ky], taps[kx])
    return model


@torch.no_grad()
def init_identity(model: SRModel) -> SRModel:
    """Set weights so the network performs nearest-neighbour upsampling.

    The stem copies RGB into the first three feature channels, the blocks and
    fusion layer contribute zero to the global skip, and the upsampler copies
    each colour channel into its ``scale**2`` sub-pixel slots.
    """
    for p in model.parameters():
        p.zero_()
    for ch in range(3):
        model.stem.weight[ch, ch, 1, 1] = 1.0
    s2 = model.scale**2
    for ch in range(3):
        model.upsampler.weight[ch * s2 : (ch + 1) * s2, ch, 1, 1] = 1.0
    return model


def image_to_tensor(img: ImageBuffer, dtype=torch.float32) -> torch.Tensor:
    arr = img.pixels.astype(np.float32 if dtype == torch.float32 else np.float64) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None].to(dtype)


def tensor_to_image(t: torch.Tensor) -> ImageBuffer:
    arr = t.detach().to(torch.float64).cpu().numpy()[0].transpose(1, 2, 0) * 255.0
    return ImageBuffer.from_float(arr)


def sr_forward(model: SRModel, lr_image: ImageBuffer) -> ImageBuffer:
    """Upscale one image by ``model.scale``; output values are clamped to ``[0, 255]``."""
    if min(lr_image.width, lr_image.height) < MIN_INPUT_SIZE:
        raise InputTooSmall(
            f"input {lr_image.width}x{lr_image.height} is below the {MIN_INPUT_SIZE}px minimum"
        )
    dtype = next(model.parameters()).dtype
    was_training = model.training
    # Only touch the mode when needed so concurrent callers on an eval model never race.
    if was_training:
        model.eval()
    try:
        with torch.no_grad():
            out = model(image_to_tensor(lr_image, dtype))
    finally:
        if was_training:
            model.train()
    return tensor_to_image(out)
