"""Learning-rate schedule: linear warmup from the floor to the peak, then cosine decay back."""

from __future__ import annotations

import math

from ..errors import StepOutOfRange


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    # at least one warmup step and one decay step
    return min(max(1, round(warmup_fraction * total_steps)), total_steps - 1)


def lr_at(step: int, cfg) -> float:
    total = cfg.total_steps
    if not 0 <= step <= total:
        raise StepOutOfRange(f"step {step} outside [0, {total}]")
    lo, hi = cfg.lr_floor, cfg.lr_peak
    w = warmup_steps(total, cfg.warmup_fraction)
    if step <= w:
        return lo + (hi - lo) * step / w
    t = (step - w) / (total - w)
    return lo + (hi - lo) * 0.5 * (1.0 + math.cos(math.pi * t))
