"""Window plans, the wraparound stitch block, and coverage weights.

Walks through the geometry underneath blended sampling: how windows tile an
extended canvas, where the stitch block sits, and what the per-column
normalization weights look like.  Saves a coverage plot to demos/output/.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stitchpano import StitchPlan, coverage_map, plan_windows

OUT = pathlib.Path(__file__).resolve().parent / "output"
OUT.mkdir(exist_ok=True)

# Production-scale geometry (image space): 512-tall panorama, 1024-wide
# windows sliding by 128 over a 2048-wide extended canvas.
plan = plan_windows(canvas_width=2048, window_width=1024, stride=128)
print(f"image-space plan: {plan.n} windows, starts {plan.starts}")

# The same geometry in latent space (everything divided by 8).
latent_plan = plan_windows(canvas_width=256, window_width=128, stride=16)
print(f"latent-space plan: {latent_plan.n} windows, starts {latent_plan.starts}")

# The stitch block pairs the outermost half-windows so the wraparound seam
# sits at the center of one denoised patch.
stitch = StitchPlan.for_window(1024, passes=2)
print(
    f"stitch block: {stitch.block_width} wide = rightmost {stitch.half} columns "
    f"++ leftmost {stitch.half} columns, denoised {stitch.passes}x per step"
)

# Coverage = how many denoised patches contribute to each column; it is the
# normalizer of the per-cell weighted average.
plain = coverage_map(plan)
stitched = coverage_map(plan, stitch)
print(f"coverage without stitch: min {plain.columns.min():.0f}, max {plain.columns.max():.0f}")
print(f"coverage with stitch:    min {stitched.columns.min():.0f}, max {stitched.columns.max():.0f}")
for col in (0, 512, 1024, 1536, 2047):
    print(f"  column {col:>4}: {plain.columns[col]:.0f} windows, "
          f"{stitched.columns[col]:.0f} total with stitch passes")

fig, ax = plt.subplots(figsize=(10, 3.2))
ax.step(np.arange(2048), plain.columns, where="post", label="windows only")
ax.step(np.arange(2048), stitched.columns, where="post", label="windows + 2 stitch passes")
ax.axvspan(0, 512, alpha=0.12, color="tab:red", label="stitch-covered columns")
ax.axvspan(1536, 2048, alpha=0.12, color="tab:red")
ax.set_xlabel("canvas column")
ax.set_ylabel("accumulated weight")
ax.set_title("Per-column blend weights, 2048-wide canvas, 1024-wide windows, stride 128")
ax.legend(loc="upper center")
fig.tight_layout()
fig.savefig(OUT / "coverage_profile.png", dpi=120)
print(f"wrote {OUT / 'coverage_profile.png'}")
