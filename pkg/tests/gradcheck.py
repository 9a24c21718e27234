"""Central-difference gradient check for the RLFN network.

The network is piecewise smooth (LeakyReLU, max pooling, L1 loss). A
coordinate is only compared when neither the +h nor the -h evaluation changes
which piece is active, so every comparison is made where the loss is
differentiable.
"""

import numpy as np
import torch
import torch.nn.functional as F

from srdetbench.rlfn import SRModelConfig, build_model
from srdetbench.rlfn.model import StridedMaxPool


def _pattern_recorder(model):
    record = []

    def on_act(mod, inputs, output):
        record.append(inputs[0] > 0)

    def on_pool(mod, inputs, output):
        x = inputs[0]
        _, idx = F.max_pool2d(x, mod.window(x), mod.stride, return_indices=True)
        record.append(idx)

    for mod in model.modules():
        if isinstance(mod, torch.nn.LeakyReLU):
            mod.register_forward_hook(on_act)
        elif isinstance(mod, StridedMaxPool):
            mod.register_forward_hook(on_pool)
    return record


def gradient_check(n_params=120, step=1e-3, seed=3, channels=8, blocks=1, size=8):
    """Returns (relative errors, skipped count)."""
    cfg = SRModelConfig(scale=2, feature_channels=channels, num_blocks=blocks)
    model = build_model(cfg, seed=seed, init="default", dtype=torch.float64)
    record = _pattern_recorder(model)
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, size, size, generator=g, dtype=torch.float64)
    with torch.no_grad():
        y0 = model(x)
    # keep the target well away from the output so the L1 sign is stable
    offset = torch.rand(y0.shape, generator=g, dtype=torch.float64) * 0.2 + 0.1
    sign = torch.where(torch.rand(y0.shape, generator=g) > 0.5, 1.0, -1.0).to(torch.float64)
    target = y0 + offset * sign

    def evaluate():
        record.clear()
        out = model(x)
        loss = F.l1_loss(out, target)
        return loss, [r.clone() for r in record] + [out > target]

    def same(p, q):
        return len(p) == len(q) and all(torch.equal(a, b) for a, b in zip(p, q))

    model.zero_grad()
    loss, pattern = evaluate()
    loss.backward()
    params = list(model.parameters())
    rng = np.random.default_rng(seed)
    errors, skipped = [], 0
    while len(errors) < n_params:
        p = params[int(rng.integers(len(params)))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + step
            lp, pp = evaluate()
            p[idx] = orig - step
            lm, pm = evaluate()
            p[idx] = orig
        if not (same(pattern, pp) and same(pattern, pm)):
            skipped += 1
            continue
        numeric = (lp.item() - lm.item()) / (2 * step)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return errors, skipped
