"""Trace coarse boundary proposals from a distance field.

Thresholding the normalized distance field at 0.3 leaves one connected
blob per text instance, well inside the true boundary. Border following
turns each blob into a closed contour, which is resampled to a fixed
number of control points. Here the fields are the ground truth, so the
pipeline's behavior is isolated from model quality.
"""

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from textdeform.fields import compute_ground_truth
from textdeform.proposals import (
    FieldMaps,
    ProposalConfig,
    extract_candidates,
    filter_by_confidence,
)
from textdeform.synthdata import SynthConfig, generate

out = Path(__file__).parent / "out"
out.mkdir(parents=True, exist_ok=True)

sample = generate(SynthConfig(image_size=128, min_instances=2, max_instances=3), 1, seed=5)[0]
bundle = compute_ground_truth(sample)
fields = FieldMaps(cls=bundle.cls, dist=bundle.dist, dir=bundle.dir)

pcfg = ProposalConfig()
candidates = extract_candidates(fields, pcfg)
proposals = filter_by_confidence(candidates, pcfg)
print(f"instances: {len(sample.instances)}, proposals: {len(proposals)}")
for i, prop in enumerate(proposals):
    pts = prop.contour.points
    print(
        f"proposal {i}: confidence {prop.confidence:.3f}, "
        f"{len(pts)} control points, bbox x [{pts[:, 0].min():.1f}, {pts[:, 0].max():.1f}]"
    )

img = Image.fromarray((sample.image.values * 255).astype(np.uint8))
draw = ImageDraw.Draw(img)
for inst in sample.instances:
    draw.polygon([tuple(p) for p in inst.boundary.points], outline=(200, 40, 40))
for prop in proposals:
    draw.polygon([tuple(p) for p in prop.contour.points], outline=(40, 90, 255))
img.save(out / "proposals.png")
print(f"wrote {out / 'proposals.png'} (red = truth, blue = proposal)")

# proposals sit strictly inside the instance they were traced from, so
# the deformation stage always starts from the inside and grows outward
shrink = []
for prop in proposals:
    center = prop.contour.points.mean(axis=0)
    owner = min(
        sample.instances,
        key=lambda inst: np.linalg.norm(inst.boundary.points.mean(axis=0) - center),
    )
    shrink.append(np.ptp(owner.boundary.points[:, 0]) - np.ptp(prop.contour.points[:, 0]))
print("x-extent shrink per proposal (px):", [f"{s:.1f}" for s in shrink])
