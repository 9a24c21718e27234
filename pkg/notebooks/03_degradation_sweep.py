# %% [markdown]
# # Degradation sweep
#
# Shrink the toy frames by 2, 3, 4 and 6, restore them with bicubic
# interpolation, and score both picture fidelity and detection. The oracle's
# jitter is relative to box size and it never looks at pixels, so its
# detection columns stay put; only a real detector (backend "external")
# reacts to the lost detail. Picture fidelity falls steadily.

# %%
import tempfile
from pathlib import Path

from srdetbench.pipeline import ExperimentConfig, compare_runs, format_delta_table, run_experiment, table_text
from srdetbench.synth import make_toy_dataset

root = Path(tempfile.mkdtemp())
manifest = make_toy_dataset(root, n_sequences=2, frames_per_sequence=3, shape=(480, 270), seed=4)
detector = {"kind": "oracle", "params": {"center_jitter_std": 0.05, "drop_prob": 0.05}}

# %%
reports = []
for factor in (2, 3, 4, 6):
    cfg = ExperimentConfig(dataset=str(manifest), degrade_factor=factor, restoration="bicubic", detector=detector)
    r = run_experiment(cfg)
    reports.append(r)
    print(f"x{factor}: PSNR {r.quality.psnr_db:.2f} dB, MSE {r.quality.mse:.1f}")

# %%
print(table_text(reports))

# %% [markdown]
# Relative changes against the x2 run, the way results tables usually report gains.

# %%
print(format_delta_table(compare_runs(reports, labels=["x2", "x3", "x4", "x6"])))
