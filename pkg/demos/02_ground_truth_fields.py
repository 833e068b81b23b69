"""Compute per-pixel training targets for one sample and render them.

The bundle holds four maps: text/non-text classification, a distance
field normalized so each instance peaks at exactly 1, a unit direction
field pointing from the nearest boundary point into the text, and the
segment size used to weight the direction loss. Each map is saved as a
grayscale or RGB PNG under demos/out/fields.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from textdeform.fields import compute_ground_truth
from textdeform.synthdata import SynthConfig, generate

out = Path(__file__).parent / "out" / "fields"
out.mkdir(parents=True, exist_ok=True)

sample = generate(SynthConfig(image_size=128), 1, seed=11)[0]
bundle = compute_ground_truth(sample)


def save_gray(arr, name):
    lo, hi = float(arr.min()), float(arr.max())
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    Image.fromarray((scaled * 255).astype(np.uint8)).save(out / name)


Image.fromarray((sample.image.values * 255).astype(np.uint8)).save(out / "image.png")
save_gray(bundle.cls, "cls.png")
save_gray(bundle.dist, "dist.png")
save_gray(bundle.segment_size, "segment_size.png")

# direction as an RGB map: x in red, y in green, both remapped to [0, 1]
rgb = np.zeros(bundle.dir.shape[:2] + (3,))
rgb[..., 0] = (bundle.dir[..., 0] + 1) / 2
rgb[..., 1] = (bundle.dir[..., 1] + 1) / 2
Image.fromarray((rgb * 255).astype(np.uint8)).save(out / "dir.png")
print(f"wrote channel renders to {out}")

inside = bundle.instance_id >= 0
print(f"text pixels: {int(inside.sum())} of {inside.size}")
print(f"max normalized distance: {bundle.dist.max():.6f} (1.0 by construction)")
norms = np.linalg.norm(bundle.dir[inside], axis=1)
print(f"direction norms on text pixels: min {norms.min():.6f}, max {norms.max():.6f}")
for k in np.unique(bundle.instance_id[inside]):
    seg = bundle.segment_size[bundle.instance_id == k]
    print(f"instance {k}: {int((bundle.instance_id == k).sum())} px, segment size {seg[0]:.0f}")
