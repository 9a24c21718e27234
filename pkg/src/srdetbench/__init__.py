"""Benchmark harness: degrade footage, restore it with RLFN super-resolution,
detect balls and people, and score fidelity (PSNR/MSE) and detection (mAP/IoU)."""

__version__ = "0.1.0"
