"""Dense tensor engine for the restoration network.

Every value is a plain (batch, channel, height, width) ndarray and every layer
has an explicit forward plus a hand-derived backward; there is no autodiff
graph. Convolutions are evaluated as im2col matrix products, and the transposed
convolution reuses the same machinery as the adjoint of a strided convolution,
so one code path serves both directions. Functions preserve the dtype they are
given: float64 for gradient checking, float32 for training throughput.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

# im2col buffers are materialized in output-row blocks no bigger than this many
# elements, which keeps peak memory flat for full-resolution layers
_COL_BLOCK_ELEMS = 1 << 25


@dataclass
class Tensor4:
    """A dense 4-axis tensor (batch, channel, height, width) with optional grad."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4:
            raise ShapeError(
                f"Tensor4 needs (batch, channel, height, width); got {self.data.ndim} axes"
            )
        if self.grad is not None:
            self.grad = np.asarray(self.grad)
            if self.grad.shape != self.data.shape:
                raise ShapeError(
                    f"grad shape {self.grad.shape} does not match data shape {self.data.shape}"
                )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass
class ConvParams:
    """Weights of one (de)convolution layer.

    kernel is (out_channels, in_channels, kh, kw) for both directions; bias is
    (out_channels,). stride and padding apply per spatial side.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        self.bias = np.asarray(self.bias)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel needs 4 axes (oc, ic, kh, kw); got {self.kernel.ndim}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.kernel.shape[0]:
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} output channels"
            )
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")


# ---------------------------------------------------------------------------
# array-level primitives


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {what}")


def _conv_out_hw(h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"spatial input {h}x{w} too small for kernel {kh}x{kw} stride {stride} pad {pad}"
        )
    return ho, wo


def _row_blocks(n, ckk, ho, wo):
    """Yield (r0, r1) output-row ranges whose col buffer stays under the cap."""
    per_row = max(1, n * ckk * wo)
    rows = max(1, _COL_BLOCK_ELEMS // per_row)
    for r0 in range(0, ho, rows):
        yield r0, min(ho, r0 + rows)


def _cols_for_rows(xp, kh, kw, stride, wo, r0, r1):
    """im2col over output rows [r0, r1) of an already padded input."""
    n, c = xp.shape[:2]
    nr = r1 - r0
    cols = np.empty((n, c, kh, kw, nr, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            rs = r0 * stride + i
            cols[:, :, i, j] = xp[:, :, rs : rs + stride * nr : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, nr * wo)


def _scatter_cols_to_rows(xp_acc, gcols, kh, kw, stride, wo, r0, r1):
    """Adjoint of _cols_for_rows: accumulate column gradients into the padded grid."""
    n = xp_acc.shape[0]
    c = xp_acc.shape[1]
    nr = r1 - r0
    g = gcols.reshape(n, c, kh, kw, nr, wo)
    for i in range(kh):
        for j in range(kw):
            rs = r0 * stride + i
            xp_acc[:, :, rs : rs + stride * nr : stride, j : j + stride * wo : stride] += g[:, :, i, j]


def _conv2d(x, kernel, bias, stride, pad):
    """Cross-correlation with zero padding. x (n,c,h,w) -> (n,oc,ho,wo)."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(f"channel axis mismatch: input has {c} channels, kernel expects {ic}")
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wmat = kernel.reshape(oc, ic * kh * kw)
    out = np.empty((n, oc, ho, wo), dtype=x.dtype)
    for r0, r1 in _row_blocks(n, ic * kh * kw, ho, wo):
        cols = _cols_for_rows(xp, kh, kw, stride, wo, r0, r1)
        out[:, :, r0:r1, :] = np.matmul(wmat, cols).reshape(n, oc, r1 - r0, wo)
    if bias is not None:
        out += bias.reshape(1, oc, 1, 1)
    return out


def _conv2d_input_grad(grad_out, kernel, stride, pad, in_hw):
    """Gradient of _conv2d w.r.t. its input; also the transposed-conv forward map."""
    n, oc, ho, wo = grad_out.shape
    koc, ic, kh, kw = kernel.shape
    if oc != koc:
        raise ShapeError(f"channel axis mismatch: grad has {oc} channels, kernel expects {koc}")
    h, w = in_hw
    wmat = kernel.reshape(oc, ic * kh * kw)
    xp_acc = np.zeros((n, ic, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    for r0, r1 in _row_blocks(n, ic * kh * kw, ho, wo):
        go = grad_out[:, :, r0:r1, :].reshape(n, oc, -1)
        gcols = np.matmul(wmat.T, go)
        _scatter_cols_to_rows(xp_acc, gcols, kh, kw, stride, wo, r0, r1)
    if pad == 0:
        return xp_acc
    return xp_acc[:, :, pad : pad + h, pad : pad + w]


def _conv2d_kernel_grad(x, grad_out, kernel_shape, stride, pad):
    """Gradient of _conv2d w.r.t. its kernel."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel_shape
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, pad)
    if grad_out.shape != (n, oc, ho, wo):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output {(n, oc, ho, wo)}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gw = np.zeros((oc, ic * kh * kw), dtype=x.dtype)
    for r0, r1 in _row_blocks(n, ic * kh * kw, ho, wo):
        cols = _cols_for_rows(xp, kh, kw, stride, wo, r0, r1)
        go = grad_out[:, :, r0:r1, :].reshape(n, oc, -1)
        gw += np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(kernel_shape)


def _deconv_out_hw(h, w, kh, kw, stride, pad):
    ho = stride * (h - 1) + kh - 2 * pad
    wo = stride * (w - 1) + kw - 2 * pad
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"spatial input {h}x{w} too small for transposed kernel {kh}x{kw} stride {stride} pad {pad}"
        )
    return ho, wo


def _swap_io(kernel):
    # transposed-conv weights reinterpreted as the underlying conv's weights
    return np.ascontiguousarray(kernel.transpose(1, 0, 2, 3))


def _deconv2d(x, kernel, bias, stride, pad):
    """Transposed convolution: the adjoint of _conv2d with the same geometry."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(f"channel axis mismatch: input has {c} channels, kernel expects {ic}")
    out_hw = _deconv_out_hw(h, w, kh, kw, stride, pad)
    out = _conv2d_input_grad(x, _swap_io(kernel), stride, pad, out_hw)
    if bias is not None:
        out += bias.reshape(1, oc, 1, 1)
    return out


def _deconv2d_grads(x, kernel, stride, pad, grad_out, need_input_grad=True):
    """Gradients of _deconv2d w.r.t. input, kernel, bias."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    out_hw = _deconv_out_hw(h, w, kh, kw, stride, pad)
    if grad_out.shape != (n, oc) + out_hw:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match deconv output {(n, oc) + out_hw}"
        )
    kc = _swap_io(kernel)
    gb = grad_out.sum(axis=(0, 2, 3))
    gx = _conv2d(grad_out, kc, None, stride, pad) if need_input_grad else None
    gk = _conv2d_kernel_grad(grad_out, x, kc.shape, stride, pad)
    return gx, _swap_io(gk), gb


# ---------------------------------------------------------------------------
# public ops


def conv2d_forward(input: Tensor4, params: ConvParams) -> Tensor4:
    """Strided cross-correlation with zero padding plus bias."""
    out = _conv2d(input.data, params.kernel, params.bias, params.stride, params.padding)
    _check_finite(out, "conv2d_forward output")
    return Tensor4(out)


def conv2d_backward(input: Tensor4, params: ConvParams, grad_out: Tensor4):
    """Gradients of conv2d_forward.

    Returns (grad_input, grad_params) with grad_params shaped like params.
    """
    n, c, h, w = input.shape
    gx = _conv2d_input_grad(grad_out.data, params.kernel, params.stride, params.padding, (h, w))
    gk = _conv2d_kernel_grad(input.data, grad_out.data, params.kernel.shape, params.stride, params.padding)
    gb = grad_out.data.sum(axis=(0, 2, 3))
    for arr, what in ((gx, "input grad"), (gk, "kernel grad"), (gb, "bias grad")):
        _check_finite(arr, f"conv2d_backward {what}")
    return Tensor4(gx), ConvParams(gk, gb, params.stride, params.padding)


def deconv2d_forward(input: Tensor4, params: ConvParams) -> Tensor4:
    """Transposed convolution; kernel 4x4 stride 2 pad 1 doubles each spatial dim."""
    out = _deconv2d(input.data, params.kernel, params.bias, params.stride, params.padding)
    _check_finite(out, "deconv2d_forward output")
    return Tensor4(out)


def deconv2d_backward(input: Tensor4, params: ConvParams, grad_out: Tensor4):
    """Gradients of deconv2d_forward, shaped like (grad_input, grad_params)."""
    gx, gk, gb = _deconv2d_grads(
        input.data, params.kernel, params.stride, params.padding, grad_out.data
    )
    for arr, what in ((gx, "input grad"), (gk, "kernel grad"), (gb, "bias grad")):
        _check_finite(arr, f"deconv2d_backward {what}")
    return Tensor4(gx), ConvParams(gk, gb, params.stride, params.padding)


def relu(input: Tensor4) -> Tensor4:
    return Tensor4(np.maximum(input.data, 0))


def relu_backward(input: Tensor4, grad_out: Tensor4) -> Tensor4:
    # subgradient at exactly 0 is taken as 0
    return Tensor4(np.where(input.data > 0, grad_out.data, 0))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamHyper:
    """Adam hyperparameters; weight decay is the coupled additive-L2 form."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    step: int
    m: dict[str, np.ndarray] = field(repr=False)
    v: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def initial(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, hyper: AdamHyper):
    """One Adam update over a dict of parameter blocks.

    Pure: returns (new_params, new_state) without touching the inputs. Weight
    decay is added to the raw gradient before the moment updates. Non-finite
    gradients abort with the offending block named.
    """
    if set(params) != set(grads):
        raise ShapeError("parameter and gradient dicts list different blocks")
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match block '{name}' {p.shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter block '{name}'")
        if hyper.weight_decay != 0.0:
            g = g + hyper.weight_decay * p
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        new_params[name] = p - update
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(t, new_m, new_v)
