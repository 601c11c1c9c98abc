"""
A small training run
====================

Trains a narrow network on a fresh synthetic dataset for a couple of
minutes, then restores a held-out image. Numbers stay modest at this scale;
the point is to watch the full loop run.
"""
import time
from pathlib import Path

import numpy as np

from demoire.image_io import write_image
from demoire.metrics import psnr
from demoire.network import NetworkConfig, build_network, restore_image, save_checkpoint
from demoire.registration import correct_intensity
from demoire.synth import load_pairs, make_dataset
from demoire.training import TrainConfig, train

out_dir = Path(__file__).parent / "out" / "train_small"
out_dir.mkdir(parents=True, exist_ok=True)

# %%
# 120 pairs of 64x64. Splits come back as manifest paths.
manifests = make_dataset(out_dir / "data", 120, seed=5)
train_pairs = load_pairs(manifests["train"])
val_pairs = load_pairs(manifests["val"])
test_pairs = load_pairs(manifests["test"])

# %%
# A narrow float32 net. The "he" init keeps signal flowing through the deep
# branch stacks, which matters a lot on a budget this small.
net = build_network(NetworkConfig(cascade_channels=8), seed=1, dtype=np.float32, init="he")
config = TrainConfig(
    batch_size=8, learning_rate=1e-4, patch_size=64, max_epochs=60, plateau_patience=10, seed=2
)

t0 = time.time()
result = train(net, train_pairs, val_pairs, config, log=print)
print(f"trained in {time.time() - t0:.0f}s, stopped by {result.stopped}")
save_checkpoint(result.network, out_dir / "model.ckpt")

# %%
# Score the held-out pairs: the mean-matched input is the honest baseline.
gains = []
for moire, ref in test_pairs:
    restored = restore_image(result.network, moire)
    gains.append(psnr(restored, ref) - psnr(correct_intensity(moire, ref), ref))
print(f"mean held-out gain {np.mean(gains):+.2f} dB over {len(gains)} pairs")

moire, ref = test_pairs[0]
write_image(out_dir / "input.png", moire)
write_image(out_dir / "restored.png", restore_image(result.network, moire))
write_image(out_dir / "target.png", ref)
print("wrote input.png / restored.png / target.png")
