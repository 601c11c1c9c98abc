"""
Synthesizing moire training pairs
=================================

The capture simulator photographs a clean image off a striped emitter grid
through a tilted camera, which is where the interference pattern comes from.
This script contaminates one reference and then builds a tiny dataset.
"""
from pathlib import Path

import numpy as np

from demoire.image_io import write_image
from demoire.metrics import psnr
from demoire.synth import (
    contaminate,
    draw_moire_params,
    make_dataset,
    random_reference,
    simulate_capture,
)

out_dir = Path(__file__).parent / "out" / "synthetic_pairs"
out_dir.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(7)

# %%
# A reference image: smooth blobs and gradients, nothing repetitive. The
# stripes that cause the interference come from the simulated screen, not
# from the content.
ref = random_reference(rng, 128, 128)
write_image(out_dir / "reference.png", ref)

# %%
# One draw of capture parameters and the simulated photo. The sample rate
# sits away from 1 on purpose; near 1 the beat wavelength outgrows the image
# and nothing visible happens.
params = draw_moire_params(rng)
sim = simulate_capture(ref, params)
print(f"rate {params.camera_sample_rate:.3f}  bayer {params.bayer}  "
      f"strength {params.strength:.2f}  psnr {psnr(sim, ref):.1f} dB")
write_image(out_dir / "contaminated.png", sim)

# %%
# contaminate() redraws until the pair is degraded enough to be worth
# training on (a floor on how subtle the pattern may be).
sim, params, value = contaminate(ref, rng)
print(f"kept a pair at {value:.1f} dB")

# %%
# A small on-disk dataset: train/val/test manifests plus one PNG pair per
# sample. The splits hold 90/5/5 percent.
manifests = make_dataset(out_dir / "mini", 20, seed=1)
for split, path in manifests.items():
    n = sum(1 for line in path.read_text().splitlines() if not line.startswith("#"))
    print(f"{split}: {n} pairs  ({path.name})")
