"""
Registering a screen photograph
===============================

To collect real training pairs you display the reference inside a black
frame, photograph the screen, and warp the photo back onto the reference
grid. This script fakes the photograph with a known homography so every
stage of the pipeline can be checked against ground truth.
"""
from pathlib import Path

import numpy as np

from demoire.image_io import write_image
from demoire.metrics import psnr
from demoire.registration import (
    FrameSpec,
    align_pair,
    apply_homography,
    estimate_homography,
    synthesize_frame,
    warp,
)
from demoire.synth import random_reference

out_dir = Path(__file__).parent / "out" / "registration"
out_dir.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(3)

# %%
# The displayed frame: reference content inside a black band with tick
# blocks on the outside. The 20 outer corners are the registration targets.
spec = FrameSpec()
ref = random_reference(rng, 96, 96)
frame, corners = synthesize_frame(ref, spec)
write_image(out_dir / "displayed.png", frame)
print("frame", frame.shape, "with", corners.points.shape[0], "corner targets")

# %%
# A fake photograph: rotate a few degrees, add a pinch of perspective and a
# brightness shift, as a handheld capture would.
ch, cw = spec.canvas_size
c = np.array([(cw - 1) / 2, (ch - 1) / 2])
theta = np.deg2rad(6.0)
rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
src = np.array([[0.0, 0.0], [cw - 1.0, 0.0], [cw - 1.0, ch - 1.0], [0.0, ch - 1.0]])
dst = (src - c) @ rot.T * 0.97 + c + [2.0, -1.5]
h_true = estimate_homography(src, dst)
h_true = h_true @ np.array([[1, 0, 0], [0, 1, 0], [4e-5, -3e-5, 1.0]])
photo = np.clip(warp(frame, h_true, (ch, cw), fill="black") + 0.04, 0, 1)
write_image(out_dir / "photo.png", photo)

# %%
# align_pair detects the photo's corners, matches them to the analytic
# frame layout, estimates the homography, and verifies the warped result
# against the reference.
result = align_pair(photo, ref, spec)
print(f"accepted {result.accepted}  psnr {result.psnr:.1f} dB  "
      f"residual {result.residual:.2f} px  candidates {result.candidate_count}")
write_image(out_dir / "aligned.png", result.aligned)

# %%
# Because the true homography is known here, the corner detections can be
# scored directly: map the analytic corners through it and compare.
truth = apply_homography(h_true, corners.points)
err = np.linalg.norm(np.sort(truth, axis=0) - np.sort(result.corners.points, axis=0), axis=1)
print(f"corner localization: mean {err.mean():.2f} px, worst {err.max():.2f} px")
print(f"aligned content scores {psnr(result.aligned, ref):.1f} dB against the reference")
