"""Rasterize the two ground-truth regimes: round and square masks.

Membership is a closed predicate on pixel centers:
  round : (x-cx)^2 + (y-cy)^2 <= r^2
  square: max(|x-cx|, |y-cy|) <= s
Overlaps between the two landmarks merge by union.

Run:  python3 demos/02_dual_shape_masks.py
"""
from pathlib import Path

from mfseg.dataset import AnnotationRecord, Landmark
from mfseg.maskgen import (
    MaskSpec,
    default_mask_spec,
    render_round_mask,
    render_square_mask,
    save_mask_png,
    validate_mask,
)

out_dir = Path(__file__).parent / "output" / "masks"
out_dir.mkdir(parents=True, exist_ok=True)

dims = (64, 32)
annotation = AnnotationRecord(
    "demo",
    (
        Landmark("left", 16.0, 22.0, extent=5.0),
        Landmark("right", 48.0, 24.0, extent=4.0),
    ),
)

round_mask = render_round_mask(annotation, dims, MaskSpec("round", 4.0))
square_mask = render_square_mask(annotation, dims, MaskSpec("square", 4.0))
print(f"round mask pixels : {int(round_mask.data.sum())}")
print(f"square mask pixels: {int(square_mask.data.sum())}")

# a closed disk of radius 3 around an interior integer center covers 29 pixels
probe = AnnotationRecord("probe", (Landmark("left", 8.0, 8.0, 3.0),))
r3 = render_round_mask(probe, (16, 16), MaskSpec("round", 3.0))
print(f"r=3 disk pixel count: {int(r3.data.sum())} (analytic: 29)")

# validation report: binarity, pixel count, 4-connected components
for mask in (round_mask, square_mask):
    rep = validate_mask(mask, max_components=2)
    print(f"{mask.shape_kind:>6}: components={rep.component_count} ok={rep.ok}")
    save_mask_png(mask, out_dir)

# when a landmark has no extent, the spec default applies; the default
# scales with the working width (16 px at width 512)
print("default extent at 512x256:", default_mask_spec("round", (512, 256)).default_extent)
print("default extent at 64x32  :", default_mask_spec("round", (64, 32)).default_extent)
print(f"wrote PNGs to {out_dir}")
