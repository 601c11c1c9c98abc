"""The multiresolution restoration network.

The network evaluates an input image at up to five scales. A shared pyramid of
stride-2 convolution pairs produces the per-scale features, each enabled branch
refines its scale with a cascade of stride-1 convolutions, transposed
convolutions bring every branch back to full resolution, and the per-branch
maps are fused into the output, by elementwise sum in the default topology or
by concatenation followed by a small fusion stack in the variant.

Channel widths follow one knob: layers tabulated at 64 channels use
``cascade_channels`` and layers tabulated at 32 use half of it, so the default
configuration reproduces the published layer tables exactly and a reduced
configuration scales the whole network down uniformly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    ConvParams,
    Tensor4,
    _conv2d,
    _conv2d_input_grad,
    _conv2d_kernel_grad,
    _deconv2d,
    _deconv2d_grads,
)
from .errors import ConfigError, DataError, ShapeError

_FUSIONS = ("sum", "concatenate")
_VARIANTS = ("default", "v_concate", "v_skip", "v_c32", "v_b123", "v_b135", "v_b15")

_CHECKPOINT_MAGIC = "demoire-net"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    branches: tuple[int, ...] = (1, 2, 3, 4, 5)
    cascade_depth: int = 5
    cascade_channels: int = 64
    fusion: str = "sum"
    skip_in_branch: bool = False
    input_channels: int = 3
    narrow_channels: bool = False

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(sorted(set(int(b) for b in self.branches))))
        if not self.branches or any(b < 1 or b > 5 for b in self.branches):
            raise ConfigError(f"branches must be a nonempty subset of 1..5, got {self.branches}")
        if 1 not in self.branches:
            raise ConfigError("branch 1 (full resolution) must be enabled")
        if self.cascade_depth < 1:
            raise ConfigError(f"cascade_depth must be >= 1, got {self.cascade_depth}")
        if self.cascade_channels < 2 or self.cascade_channels % 2:
            raise ConfigError(f"cascade_channels must be even and >= 2, got {self.cascade_channels}")
        if self.fusion not in _FUSIONS:
            raise ConfigError(f"fusion must be one of {_FUSIONS}, got {self.fusion!r}")
        if self.input_channels not in (1, 3):
            raise ConfigError(f"input_channels must be 1 or 3, got {self.input_channels}")

    @property
    def wide(self) -> int:
        """Width of layers tabulated at 64 channels."""
        return self.cascade_channels // 2 if self.narrow_channels else self.cascade_channels

    @property
    def half(self) -> int:
        """Width of layers tabulated at 32 channels."""
        return self.cascade_channels // 2

    @property
    def max_branch(self) -> int:
        return self.branches[-1]

    @property
    def divisor(self) -> int:
        """Spatial dims of forward inputs must divide by this."""
        return 1 << (self.max_branch - 1)


def variant_config(
    name: str,
    grayscale: bool = False,
    cascade_channels: int = 64,
    cascade_depth: int = 5,
) -> NetworkConfig:
    """Map a published variant name onto a NetworkConfig."""
    key = name.strip().lower().replace("-", "_")
    base = dict(
        input_channels=1 if grayscale else 3,
        cascade_channels=cascade_channels,
        cascade_depth=cascade_depth,
    )
    if key == "default":
        return NetworkConfig(**base)
    if key == "v_concate":
        return NetworkConfig(fusion="concatenate", **base)
    if key == "v_skip":
        return NetworkConfig(skip_in_branch=True, **base)
    if key == "v_c32":
        return NetworkConfig(narrow_channels=True, **base)
    if key == "v_b123":
        return NetworkConfig(branches=(1, 2, 3), **base)
    if key == "v_b135":
        return NetworkConfig(branches=(1, 3, 5), **base)
    if key == "v_b15":
        return NetworkConfig(branches=(1, 5), **base)
    raise ConfigError(f"unknown variant {name!r}; expected one of {_VARIANTS}")


@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str  # "conv" | "deconv"
    in_channels: int
    out_channels: int
    ksize: int
    stride: int
    padding: int
    relu: bool

    @property
    def kernel_shape(self):
        return (self.out_channels, self.in_channels, self.ksize, self.ksize)

    @property
    def n_params(self):
        return self.out_channels * self.in_channels * self.ksize * self.ksize + self.out_channels


def layer_plan(config: NetworkConfig) -> list[LayerPlan]:
    """Enumerate every layer of a configuration in checkpoint order."""
    wide, half = config.wide, config.half
    plan: list[LayerPlan] = []

    def conv(name, ic, oc, k=3, stride=1, pad=1, act=True):
        plan.append(LayerPlan(name, "conv", ic, oc, k, stride, pad, act))

    def deconv(name, ic, oc):
        plan.append(LayerPlan(name, "deconv", ic, oc, 4, 2, 1, True))

    # shared downsampling pyramid: two convs per scale, stride 2 on entry
    conv("down1a", config.input_channels, half)
    conv("down1b", half, half)
    prev = half
    for s in range(2, config.max_branch + 1):
        entry = half if s == 2 else wide
        conv(f"down{s}a", prev, entry, stride=2)
        conv(f"down{s}b", entry, wide)
        prev = wide

    for b in config.branches:
        cin = half if b == 1 else wide
        for i in range(1, config.cascade_depth + 1):
            conv(f"branch{b}.cascade{i}", cin, wide)
            cin = wide

    concat = config.fusion == "concatenate"
    for b in config.branches:
        cin = wide
        for j in range(1, b):
            cout = wide if (j == 1 and b >= 3) else half
            deconv(f"branch{b}.up{j}", cin, cout)
            cin = cout
        if concat:
            if b == 1:
                conv("branch1.reduce", wide, half, k=1, pad=0)
        else:
            conv(f"branch{b}.out", cin, config.input_channels, act=False)

    if concat:
        conv("fuse.conv1", half * len(config.branches), half)
        conv("fuse.conv2", half, half)
        conv("fuse.out", half, config.input_channels, act=False)
    return plan


def param_count(config: NetworkConfig) -> int:
    """Total trainable parameters, computed from the layer plan alone."""
    return sum(p.n_params for p in layer_plan(config))


@dataclass
class Layer:
    plan: LayerPlan
    params: ConvParams


@dataclass
class Network:
    """An immutable bundle of configuration plus per-layer weights."""

    config: NetworkConfig
    seed: int
    layers: dict[str, Layer] = field(repr=False)

    @property
    def dtype(self):
        return next(iter(self.layers.values())).params.kernel.dtype

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Flat name->array view of every parameter block, in layer order."""
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers.items():
            out[f"{name}.kernel"] = layer.params.kernel
            out[f"{name}.bias"] = layer.params.bias
        return out

    def n_parameters(self) -> int:
        return sum(a.size for a in self.parameter_arrays().values())


def build_network(config: NetworkConfig, seed: int, dtype=np.float64, init: str = "gaussian") -> Network:
    """Initialize weights from one seeded generator; biases start at 0.

    init "gaussian" is the fixed-scale N(0, 0.01^2) draw; "he" scales each
    relu-followed kernel by sqrt(2 / fan_in), which preserves activation
    variance through deep relu stacks so a short training budget can move a
    many layer network off its initial point, while the linear output heads
    keep the small fixed scale so the summed prediction starts near zero.
    """
    if init not in ("gaussian", "he"):
        raise ConfigError(f"unknown init {init!r}; expected 'gaussian' or 'he'")
    rng = np.random.default_rng(seed)
    layers: dict[str, Layer] = {}
    for lp in layer_plan(config):
        if init == "he" and lp.relu:
            fan_in = lp.in_channels * lp.ksize * lp.ksize
            sigma = (2.0 / fan_in) ** 0.5
        else:
            sigma = 0.01
        kernel = rng.normal(0.0, sigma, lp.kernel_shape).astype(dtype)
        bias = np.zeros(lp.out_channels, dtype=dtype)
        layers[lp.name] = Layer(lp, ConvParams(kernel, bias, lp.stride, lp.padding))
    return Network(config, seed, layers)


def with_parameters(net: Network, arrays: dict[str, np.ndarray]) -> Network:
    """A new Network sharing the plan but holding the given parameter arrays."""
    layers: dict[str, Layer] = {}
    for name, layer in net.layers.items():
        layers[name] = Layer(
            layer.plan,
            ConvParams(
                arrays[f"{name}.kernel"],
                arrays[f"{name}.bias"],
                layer.plan.stride,
                layer.plan.padding,
            ),
        )
    return Network(net.config, net.seed, layers)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class BranchOutputs:
    """Forward results: per-branch full-resolution maps plus their fusion.

    In sum mode each branch map has input_channels channels and ``fused`` is
    their exact elementwise sum in ascending branch order. In concatenate mode
    the maps are the half-width pre-fusion features and ``fused`` is the fusion
    stack output. ``tape`` holds backward caches when the forward was run with
    want_tape=True.
    """

    branch_maps: dict[int, np.ndarray]
    fused: np.ndarray
    cascade_shapes: dict[int, tuple[int, int]]
    tape: dict | None = field(default=None, repr=False)


def _layer_forward(layer: Layer, x: np.ndarray, tape: dict | None, name: str) -> np.ndarray:
    p = layer.params
    if layer.plan.kind == "conv":
        z = _conv2d(x, p.kernel, p.bias, p.stride, p.padding)
    else:
        z = _deconv2d(x, p.kernel, p.bias, p.stride, p.padding)
    if layer.plan.relu:
        y = np.maximum(z, 0)
        if tape is not None:
            tape[name] = (x, z > 0)
        return y
    if tape is not None:
        tape[name] = (x, None)
    return z


def _as_batch(image, config: NetworkConfig, dtype) -> np.ndarray:
    x = image.data if isinstance(image, Tensor4) else np.asarray(image)
    if x.ndim != 4:
        raise ShapeError(f"forward input needs (batch, channel, height, width); got {x.ndim} axes")
    n, c, h, w = x.shape
    if c != config.input_channels:
        raise ShapeError(
            f"channel axis mismatch: input has {c} channels, network expects {config.input_channels}"
        )
    d = config.divisor
    if h % d or w % d:
        raise ShapeError(
            f"spatial dims {h}x{w} must be divisible by {d} for branches up to {config.max_branch}"
        )
    return x.astype(dtype, copy=False)


def forward(net: Network, image, want_tape: bool = False) -> BranchOutputs:
    """Run the network. ``image`` is a Tensor4 or (n, c, h, w) array."""
    cfg = net.config
    x = _as_batch(image, cfg, net.dtype)
    tape: dict | None = {} if want_tape else None

    levels: dict[int, np.ndarray] = {}
    cur = x
    for s in range(1, cfg.max_branch + 1):
        cur = _layer_forward(net.layers[f"down{s}a"], cur, tape, f"down{s}a")
        cur = _layer_forward(net.layers[f"down{s}b"], cur, tape, f"down{s}b")
        levels[s] = cur

    concat = cfg.fusion == "concatenate"
    branch_maps: dict[int, np.ndarray] = {}
    cascade_shapes: dict[int, tuple[int, int]] = {}
    for b in cfg.branches:
        feat = levels[b]
        for i in range(1, cfg.cascade_depth + 1):
            name = f"branch{b}.cascade{i}"
            feat = _layer_forward(net.layers[name], feat, tape, name)
        if cfg.skip_in_branch:
            skip = levels[b]
            if skip.shape[1] != feat.shape[1]:
                pad_c = feat.shape[1] - skip.shape[1]
                skip = np.concatenate([skip, np.zeros_like(feat[:, :pad_c])], axis=1)
            feat = feat + skip
        cascade_shapes[b] = feat.shape[2:]
        for j in range(1, b):
            name = f"branch{b}.up{j}"
            feat = _layer_forward(net.layers[name], feat, tape, name)
        if concat:
            if b == 1:
                feat = _layer_forward(net.layers["branch1.reduce"], feat, tape, "branch1.reduce")
            branch_maps[b] = feat
        else:
            name = f"branch{b}.out"
            branch_maps[b] = _layer_forward(net.layers[name], feat, tape, name)

    if concat:
        fused = np.concatenate([branch_maps[b] for b in cfg.branches], axis=1)
        for name in ("fuse.conv1", "fuse.conv2", "fuse.out"):
            fused = _layer_forward(net.layers[name], fused, tape, name)
    else:
        fused = branch_maps[cfg.branches[0]].copy()
        for b in cfg.branches[1:]:
            fused += branch_maps[b]
    return BranchOutputs(branch_maps, fused, cascade_shapes, tape)


def _layer_backward(net, name, tape, grad_y, grads, need_input_grad=True):
    layer = net.layers[name]
    x, mask = tape[name]
    p = layer.params
    g = np.where(mask, grad_y, 0) if mask is not None else grad_y
    if layer.plan.kind == "conv":
        gx = (
            _conv2d_input_grad(g, p.kernel, p.stride, p.padding, x.shape[2:])
            if need_input_grad
            else None
        )
        gk = _conv2d_kernel_grad(x, g, p.kernel.shape, p.stride, p.padding)
        gb = g.sum(axis=(0, 2, 3))
    else:
        gx, gk, gb = _deconv2d_grads(x, p.kernel, p.stride, p.padding, g, need_input_grad)
    if name in grads:
        old_k, old_b = grads[name]
        grads[name] = (old_k + gk, old_b + gb)
    else:
        grads[name] = (gk, gb)
    return gx


def backward(net: Network, outputs: BranchOutputs, grad_fused: np.ndarray):
    """Hand-derived backward pass.

    ``outputs`` must come from forward(..., want_tape=True). Returns a dict
    layer name -> (kernel grad, bias grad) covering every layer.
    """
    if outputs.tape is None:
        raise ConfigError("backward needs outputs recorded with want_tape=True")
    cfg = net.config
    tape = outputs.tape
    grad_fused = np.asarray(grad_fused, dtype=net.dtype)
    if grad_fused.shape != outputs.fused.shape:
        raise ShapeError(
            f"grad shape {grad_fused.shape} does not match fused output {outputs.fused.shape}"
        )
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    concat = cfg.fusion == "concatenate"

    branch_grads: dict[int, np.ndarray] = {}
    if concat:
        g = grad_fused
        for name in ("fuse.out", "fuse.conv2", "fuse.conv1"):
            g = _layer_backward(net, name, tape, g, grads)
        h = cfg.half
        for idx, b in enumerate(cfg.branches):
            branch_grads[b] = g[:, idx * h : (idx + 1) * h]
    else:
        # the sum broadcasts the fused gradient to every branch unchanged
        for b in cfg.branches:
            branch_grads[b] = grad_fused

    level_grads: dict[int, np.ndarray | None] = {s: None for s in range(1, cfg.max_branch + 1)}

    def add_level(s, g):
        level_grads[s] = g if level_grads[s] is None else level_grads[s] + g

    for b in cfg.branches:
        g = branch_grads[b]
        if concat:
            if b == 1:
                g = _layer_backward(net, "branch1.reduce", tape, g, grads)
        else:
            g = _layer_backward(net, f"branch{b}.out", tape, g, grads)
        for j in range(b - 1, 0, -1):
            g = _layer_backward(net, f"branch{b}.up{j}", tape, g, grads)
        if cfg.skip_in_branch:
            skip_g = g[:, : net.layers[f"down{b}b"].plan.out_channels]
            add_level(b, skip_g)
        for i in range(cfg.cascade_depth, 0, -1):
            g = _layer_backward(net, f"branch{b}.cascade{i}", tape, g, grads)
        add_level(b, g)

    for s in range(cfg.max_branch, 1, -1):
        g = level_grads[s]
        g = _layer_backward(net, f"down{s}b", tape, g, grads)
        g = _layer_backward(net, f"down{s}a", tape, g, grads)
        add_level(s - 1, g)
    g = level_grads[1]
    g = _layer_backward(net, "down1b", tape, g, grads)
    _layer_backward(net, "down1a", tape, g, grads, need_input_grad=False)
    return grads


def gradient_arrays(grads: dict[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, np.ndarray]:
    """Flatten backward() results into the same naming adam_step expects."""
    out: dict[str, np.ndarray] = {}
    for name, (gk, gb) in grads.items():
        out[f"{name}.kernel"] = gk
        out[f"{name}.bias"] = gb
    return out


# ---------------------------------------------------------------------------
# image-level conveniences


def restore_image(net: Network, image_hwc: np.ndarray) -> np.ndarray:
    """Run one (h, w, c) image through the network; output clamped to [0, 1]."""
    img = np.asarray(image_hwc)
    if img.ndim == 2:
        img = img[:, :, None]
    x = img.transpose(2, 0, 1)[None]
    out = forward(net, x).fused[0].transpose(1, 2, 0)
    return np.clip(out, 0.0, 1.0)


def inspect_branches(net: Network, image_hwc: np.ndarray, amplification: float = 1.0):
    """Per-branch contribution maps, offset to mid-gray for export.

    Returns branch -> {"raw": ..., "amplified": ...} with (h, w, c) arrays in
    [0, 1]. raw adds 0.5 and clamps; amplified scales the map first, so
    amplification 1 reproduces the raw maps. Sum-fusion networks only.
    """
    if net.config.fusion != "sum":
        raise ConfigError("branch inspection needs sum fusion; concatenate maps are not images")
    img = np.asarray(image_hwc)
    if img.ndim == 2:
        img = img[:, :, None]
    x = img.transpose(2, 0, 1)[None]
    outputs = forward(net, x)
    report: dict[int, dict[str, np.ndarray]] = {}
    for b, m in outputs.branch_maps.items():
        m = m[0].transpose(1, 2, 0)
        report[b] = {
            "raw": np.clip(0.5 + m, 0.0, 1.0),
            "amplified": np.clip(0.5 + amplification * m, 0.0, 1.0),
        }
    return report


# ---------------------------------------------------------------------------
# checkpoints


def _config_to_str(config: NetworkConfig) -> str:
    return (
        f"branches={','.join(str(b) for b in config.branches)};"
        f"cascade_depth={config.cascade_depth};"
        f"cascade_channels={config.cascade_channels};"
        f"fusion={config.fusion};"
        f"skip_in_branch={int(config.skip_in_branch)};"
        f"input_channels={config.input_channels};"
        f"narrow_channels={int(config.narrow_channels)}"
    )


def _config_from_str(text: str) -> NetworkConfig:
    fields: dict[str, str] = {}
    for item in text.strip().split(";"):
        key, _, val = item.partition("=")
        fields[key.strip()] = val.strip()
    try:
        return NetworkConfig(
            branches=tuple(int(b) for b in fields["branches"].split(",")),
            cascade_depth=int(fields["cascade_depth"]),
            cascade_channels=int(fields["cascade_channels"]),
            fusion=fields["fusion"],
            skip_in_branch=bool(int(fields["skip_in_branch"])),
            input_channels=int(fields["input_channels"]),
            narrow_channels=bool(int(fields["narrow_channels"])),
        )
    except KeyError as exc:
        raise DataError(f"checkpoint config line is missing field {exc}") from exc


def save_checkpoint(net: Network, path) -> None:
    """Self-describing container: text header, then little-endian float32 blocks."""
    header = io.StringIO()
    header.write(f"{_CHECKPOINT_MAGIC} {_CHECKPOINT_VERSION}\n")
    header.write(f"seed {net.seed}\n")
    header.write(f"config {_config_to_str(net.config)}\n")
    for name, layer in net.layers.items():
        lp = layer.plan
        header.write(
            f"layer {name} {lp.kind} stride={lp.stride} pad={lp.padding} relu={int(lp.relu)} "
            f"kernel={','.join(str(d) for d in lp.kernel_shape)} bias={lp.out_channels}\n"
        )
    header.write("end-header\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for layer in net.layers.values():
            fh.write(np.ascontiguousarray(layer.params.kernel, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.params.bias, dtype="<f4").tobytes())


def load_checkpoint(path) -> Network:
    """Rebuild a float32 network from save_checkpoint output."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"end-header\n"
    cut = blob.find(marker)
    if cut < 0:
        raise DataError(f"{path}: not a checkpoint (missing header terminator)")
    try:
        lines = blob[:cut].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: checkpoint header is not ASCII") from exc
    if not lines:
        raise DataError(f"{path}: empty checkpoint header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != _CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic line {lines[0]!r}")
    if int(magic[1]) != _CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {magic[1]}")

    seed = 0
    config: NetworkConfig | None = None
    declared: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        word, _, rest = line.partition(" ")
        if word == "seed":
            seed = int(rest)
        elif word == "config":
            config = _config_from_str(rest)
        elif word == "layer":
            parts = rest.split()
            name = parts[0]
            kv = dict(p.split("=", 1) for p in parts[2:])
            declared.append((name, tuple(int(d) for d in kv["kernel"].split(","))))
        else:
            raise DataError(f"{path}: unknown header line {line!r}")
    if config is None:
        raise DataError(f"{path}: checkpoint header has no config line")

    net = build_network(config, seed, dtype=np.float32)
    plan_shapes = [(name, layer.plan.kernel_shape) for name, layer in net.layers.items()]
    if declared != plan_shapes:
        raise DataError(f"{path}: layer manifest does not match the declared config")

    data = blob[cut + len(marker) :]
    offset = 0
    for name, layer in net.layers.items():
        for attr, shape in (("kernel", layer.plan.kernel_shape), ("bias", (layer.plan.out_channels,))):
            nbytes = int(np.prod(shape)) * 4
            chunk = data[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise DataError(f"{path}: truncated parameter block {name}.{attr}")
            arr = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
            setattr(layer.params, attr, arr)
            offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes after parameter blocks")
    return net
