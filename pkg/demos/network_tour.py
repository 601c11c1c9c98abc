"""
A tour of the restoration network
=================================

Builds the multiresolution network, walks its variants, and exports the
per-branch contribution maps for a random input.
"""
import numpy as np

from demoire.network import (
    NetworkConfig,
    build_network,
    forward,
    inspect_branches,
    param_count,
    variant_config,
)

# %%
# Every variant is a NetworkConfig. The default stacks five branches, each
# working at half the resolution of the one above it.
for name in ("default", "v_concate", "v_skip", "v_b123", "v_b135", "v_b15", "v_c32"):
    cfg = variant_config(name)
    print(f"{name:10s} branches={cfg.branches} params={param_count(cfg):,}")

# %%
# Forward pass. Input is NCHW in [0, 1]; dims must divide by 2^(branches-1)
# because each branch halves the grid once more.
net = build_network(NetworkConfig(cascade_channels=16), seed=0)
x = np.random.default_rng(42).random((1, 3, 64, 64))
out = forward(net, x)
print("fused shape", out.fused.shape)
for i, shape in sorted(out.cascade_shapes.items()):
    print(f"branch {i}: cascade grid {shape}")

# %%
# The fused output is the exact elementwise sum of the branch maps.
total = sum(out.branch_maps[i] for i in sorted(out.branch_maps))
print("fusion is exact:", np.array_equal(total, out.fused))

# %%
# inspect_branches turns each branch map into an exportable image, offset to
# mid-gray and optionally amplified so faint coarse-scale maps become visible.
from pathlib import Path

from demoire.image_io import write_image

out_dir = Path(__file__).parent / "out" / "network_tour"
out_dir.mkdir(parents=True, exist_ok=True)
report = inspect_branches(net, x[0].transpose(1, 2, 0), amplification=8.0)
for b, maps in report.items():
    write_image(out_dir / f"branch_{b}.png", maps["amplified"])
print("wrote", ", ".join(f"branch_{b}.png" for b in sorted(report)))
