"""Network assembly: residual encoder/decoder variants and the plain U-Net baseline.

Three buildable architectures share one calling convention:

* ``proposed`` — residual encoder (3 units) + dilated bridge + residual
  decoder (3 units). Both bridge convolutions run at ``bridge_dilation``.
* ``resunet`` — identical wiring with bridge dilation 1. Parameter shapes
  match ``proposed`` exactly, so the two counts are always equal.
* ``unet`` — classic double-conv levels with max-pool descents and 2x2
  transposed-conv ascents.

Residual units are pre-activation: BN -> ReLU -> conv3x3 (stride s) ->
BN -> ReLU -> conv3x3, added to an identity (or 1x1 projection) shortcut.
The sum is passed through unchanged unless ``post_add_relu`` is set.

Parameters live in an ordered flat dict keyed by stable dotted names;
batch-norm running statistics are held separately and are not trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNormParams,
    Conv2dParams,
    ConvTranspose2xParams,
    batchnorm2d_backward,
    batchnorm2d_forward,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2x_backward,
    conv_transpose2x_forward,
    maxpool2x_backward,
    maxpool2x_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    upsample_nearest2x_backward,
    upsample_nearest2x_forward,
)
from .rng import DOMAIN_INIT, Rng
from .tensor import ShapeError, Tensor4, concat_channels, dtype_for

KINDS = ("proposed", "resunet", "unet")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
# Head bias starts at the background prior (sigmoid(-2) ~ 0.12) so early
# optimization is not spent suppressing the empty field.
HEAD_BIAS_INIT = -2.0


@dataclass
class ModelGraph:
    kind: str
    in_channels: int
    widths: list[int]
    bridge_dilation: int
    post_add_relu: bool = False
    precision: int = 64
    bn_eps: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM
    params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    bn_state: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def spatial_divisor(self) -> int:
        # Each stride-2 descent must be matched exactly by a 2x upsampling.
        return 16 if self.kind == "unet" else 8


class _Init:
    """He-normal draws on the portable generator, in construction order."""

    def __init__(self, seed: int, dtype: np.dtype):
        self.rng = Rng(seed, stream=DOMAIN_INIT)
        self.dtype = dtype

    def conv_weight(self, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        scale = math.sqrt(2.0 / fan_in)
        flat = self.rng.normal_array(int(np.prod(shape))) * scale
        return flat.reshape(shape).astype(self.dtype)

    def zeros(self, n: int) -> np.ndarray:
        return np.zeros(n, dtype=self.dtype)

    def ones(self, n: int) -> np.ndarray:
        return np.ones(n, dtype=self.dtype)


def _add_conv(g: ModelGraph, init: _Init, name: str, c_in: int, c_out: int, k: int) -> None:
    g.params[f"{name}.w"] = init.conv_weight((c_out, c_in, k, k), fan_in=c_in * k * k)
    g.params[f"{name}.b"] = init.zeros(c_out)


def _add_conv_transpose(g: ModelGraph, init: _Init, name: str, c_in: int, c_out: int) -> None:
    g.params[f"{name}.w"] = init.conv_weight((c_in, c_out, 2, 2), fan_in=c_in * 4)
    g.params[f"{name}.b"] = init.zeros(c_out)


def _add_bn(g: ModelGraph, init: _Init, name: str, c: int) -> None:
    g.params[f"{name}.gamma"] = init.ones(c)
    g.params[f"{name}.beta"] = init.zeros(c)
    g.bn_state[f"{name}.mean"] = init.zeros(c)
    g.bn_state[f"{name}.var"] = init.ones(c)


def _add_residual_unit(g: ModelGraph, init: _Init, prefix: str, c_in: int, c_out: int, stride: int) -> None:
    _add_bn(g, init, f"{prefix}.bn1", c_in)
    _add_conv(g, init, f"{prefix}.conv1", c_in, c_out, 3)
    _add_bn(g, init, f"{prefix}.bn2", c_out)
    _add_conv(g, init, f"{prefix}.conv2", c_out, c_out, 3)
    if c_in != c_out or stride != 1:
        _add_conv(g, init, f"{prefix}.sc", c_in, c_out, 1)


def _residual_blocks(g: ModelGraph) -> list[tuple[str, int, int, int, int]]:
    """(prefix, c_in, c_out, stride, dilation) per block, in execution order."""
    w = g.widths
    d = g.bridge_dilation
    return [
        ("enc1", g.in_channels, w[0], 1, 1),
        ("enc2", w[0], w[1], 2, 1),
        ("enc3", w[1], w[2], 2, 1),
        ("bridge", w[2], w[3], 2, d),
        ("dec1", w[3] + w[2], w[2], 1, 1),
        ("dec2", w[2] + w[1], w[1], 1, 1),
        ("dec3", w[1] + w[0], w[0], 1, 1),
    ]


def _build_residual(kind: str, in_channels: int, widths: list[int], bridge_dilation: int,
                    seed: int, precision: int, post_add_relu: bool) -> ModelGraph:
    if len(widths) != 4:
        raise ShapeError(f"{kind}: widths must have 4 entries, got {len(widths)}")
    if any(w < 1 for w in widths) or in_channels < 1:
        raise ShapeError(f"{kind}: channel counts must be >= 1")
    if bridge_dilation < 1:
        raise ShapeError(f"{kind}: bridge_dilation must be >= 1, got {bridge_dilation}")
    g = ModelGraph(kind=kind, in_channels=in_channels, widths=list(widths),
                   bridge_dilation=bridge_dilation, post_add_relu=post_add_relu,
                   precision=precision)
    init = _Init(seed, dtype_for(precision))
    for prefix, c_in, c_out, stride, _ in _residual_blocks(g):
        _add_residual_unit(g, init, prefix, c_in, c_out, stride)
    _add_conv(g, init, "head", widths[0], 1, 1)
    g.params["head.b"][:] = HEAD_BIAS_INIT
    return g


def build_proposed(in_channels: int, widths: list[int], bridge_dilation: int = 2, *,
                   seed: int = 0, precision: int = 64, post_add_relu: bool = False) -> ModelGraph:
    return _build_residual("proposed", in_channels, widths, bridge_dilation,
                           seed, precision, post_add_relu)


def build_resunet(in_channels: int, widths: list[int], *, seed: int = 0, precision: int = 64,
                  post_add_relu: bool = False) -> ModelGraph:
    return _build_residual("resunet", in_channels, widths, 1, seed, precision, post_add_relu)


def build_unet(in_channels: int, widths5: list[int], *, seed: int = 0, precision: int = 64) -> ModelGraph:
    if len(widths5) != 5:
        raise ShapeError(f"unet: widths must have 5 entries, got {len(widths5)}")
    if any(w < 1 for w in widths5) or in_channels < 1:
        raise ShapeError("unet: channel counts must be >= 1")
    g = ModelGraph(kind="unet", in_channels=in_channels, widths=list(widths5),
                   bridge_dilation=1, precision=precision)
    init = _Init(seed, dtype_for(precision))
    w = widths5
    prev = in_channels
    for lvl in range(4):
        _add_conv(g, init, f"enc{lvl + 1}.conv1", prev, w[lvl], 3)
        _add_conv(g, init, f"enc{lvl + 1}.conv2", w[lvl], w[lvl], 3)
        prev = w[lvl]
    _add_conv(g, init, "bottom.conv1", w[3], w[4], 3)
    _add_conv(g, init, "bottom.conv2", w[4], w[4], 3)
    prev = w[4]
    for lvl in range(3, -1, -1):
        _add_conv_transpose(g, init, f"up{lvl + 1}", prev, w[lvl])
        _add_conv(g, init, f"dec{lvl + 1}.conv1", 2 * w[lvl], w[lvl], 3)
        _add_conv(g, init, f"dec{lvl + 1}.conv2", w[lvl], w[lvl], 3)
        prev = w[lvl]
    _add_conv(g, init, "head", w[0], 1, 1)
    g.params["head.b"][:] = HEAD_BIAS_INIT
    return g


def build(kind: str, in_channels: int, widths: list[int], bridge_dilation: int = 2, *,
          seed: int = 0, precision: int = 64, post_add_relu: bool = False) -> ModelGraph:
    if kind == "proposed":
        return build_proposed(in_channels, widths, bridge_dilation, seed=seed,
                              precision=precision, post_add_relu=post_add_relu)
    if kind == "resunet":
        return build_resunet(in_channels, widths, seed=seed, precision=precision,
                             post_add_relu=post_add_relu)
    if kind == "unet":
        return build_unet(in_channels, widths, seed=seed, precision=precision)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def count_parameters(g: ModelGraph) -> int:
    """Trainable elements only; running statistics are excluded."""
    return sum(int(p.size) for p in g.params.values())


def layer_table(g: ModelGraph) -> list[tuple[str, tuple[int, ...], int]]:
    return [(name, tuple(p.shape), int(p.size)) for name, p in g.params.items()]


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _bn_params(g: ModelGraph, name: str, mode: str) -> BatchNormParams:
    return BatchNormParams(
        gamma=g.params[f"{name}.gamma"], beta=g.params[f"{name}.beta"],
        running_mean=g.bn_state[f"{name}.mean"], running_var=g.bn_state[f"{name}.var"],
        eps=g.bn_eps, momentum=g.bn_momentum, mode=mode,
    )


def _conv_params(g: ModelGraph, name: str, stride: int = 1, padding: int = 0,
                 dilation: int = 1) -> Conv2dParams:
    return Conv2dParams(weight=g.params[f"{name}.w"], bias=g.params[f"{name}.b"],
                        stride=stride, padding=padding, dilation=dilation)


def _unit_forward(g: ModelGraph, prefix: str, x: Tensor4, stride: int, dilation: int,
                  mode: str) -> tuple[Tensor4, dict]:
    ctx: dict = {"x": x}
    t, ctx["bn1"] = batchnorm2d_forward(x, _bn_params(g, f"{prefix}.bn1", mode))
    t, ctx["relu1"] = relu_forward(t)
    t, ctx["conv1"] = conv2d_forward(t, _conv_params(g, f"{prefix}.conv1", stride, dilation, dilation))
    t, ctx["bn2"] = batchnorm2d_forward(t, _bn_params(g, f"{prefix}.bn2", mode))
    t, ctx["relu2"] = relu_forward(t)
    f, ctx["conv2"] = conv2d_forward(t, _conv_params(g, f"{prefix}.conv2", 1, dilation, dilation))
    if f"{prefix}.sc.w" in g.params:
        shortcut, ctx["sc"] = conv2d_forward(x, _conv_params(g, f"{prefix}.sc", stride, 0, 1))
    else:
        shortcut, ctx["sc"] = x, None
    y = Tensor4(f.array + shortcut.array)
    if g.post_add_relu:
        y, ctx["post"] = relu_forward(y)
    return y, ctx


def _unit_backward(g: ModelGraph, prefix: str, grad_y: Tensor4, ctx: dict,
                   grads: dict[str, np.ndarray]) -> Tensor4:
    if g.post_add_relu:
        grad_y = relu_backward(grad_y, ctx["post"])
    gf, gw, gb = conv2d_backward(grad_y, ctx["conv2"])
    grads[f"{prefix}.conv2.w"] += gw
    grads[f"{prefix}.conv2.b"] += gb
    gf = relu_backward(gf, ctx["relu2"])
    gf, ggamma, gbeta = batchnorm2d_backward(gf, ctx["bn2"])
    grads[f"{prefix}.bn2.gamma"] += ggamma
    grads[f"{prefix}.bn2.beta"] += gbeta
    gf, gw, gb = conv2d_backward(gf, ctx["conv1"])
    grads[f"{prefix}.conv1.w"] += gw
    grads[f"{prefix}.conv1.b"] += gb
    gf = relu_backward(gf, ctx["relu1"])
    gf, ggamma, gbeta = batchnorm2d_backward(gf, ctx["bn1"])
    grads[f"{prefix}.bn1.gamma"] += ggamma
    grads[f"{prefix}.bn1.beta"] += gbeta
    if ctx["sc"] is not None:
        gsc, gw, gb = conv2d_backward(grad_y, ctx["sc"])
        grads[f"{prefix}.sc.w"] += gw
        grads[f"{prefix}.sc.b"] += gb
        grad_x = Tensor4(gf.array + gsc.array)
    else:
        grad_x = Tensor4(gf.array + grad_y.array)
    return grad_x


def _check_input(g: ModelGraph, x: Tensor4) -> None:
    if x.c != g.in_channels:
        raise ShapeError(f"model_forward: input has {x.c} channels, model expects {g.in_channels}")
    div = g.spatial_divisor
    if x.h % div or x.w % div:
        raise ShapeError(f"model_forward: spatial dims {x.h}x{x.w} must be divisible by {div} for kind {g.kind!r}")


def _forward_residual(g: ModelGraph, x: Tensor4, mode: str) -> tuple[Tensor4, dict]:
    blocks = _residual_blocks(g)
    ctx: dict = {"mode": mode, "units": {}, "ups": {}, "split": {}}
    acts = {}
    t = x
    for prefix, _, _, stride, dilation in blocks[:4]:
        t, ctx["units"][prefix] = _unit_forward(g, prefix, t, stride, dilation, mode)
        acts[prefix] = t
    skips = {"dec1": acts["enc3"], "dec2": acts["enc2"], "dec3": acts["enc1"]}
    for prefix, _, _, stride, dilation in blocks[4:]:
        up, ctx["ups"][prefix] = upsample_nearest2x_forward(t)
        skip = skips[prefix]
        ctx["split"][prefix] = up.c
        t = concat_channels(up, skip)
        t, ctx["units"][prefix] = _unit_forward(g, prefix, t, stride, dilation, mode)
    z, ctx["head"] = conv2d_forward(t, _conv_params(g, "head"))
    probs, ctx["sigmoid"] = sigmoid_forward(z)
    return probs, ctx


def _backward_residual(g: ModelGraph, grad_probs: Tensor4, ctx: dict,
                       grads: dict[str, np.ndarray]) -> None:
    gz = sigmoid_backward(grad_probs, ctx["sigmoid"])
    gt, gw, gb = conv2d_backward(gz, ctx["head"])
    grads["head.w"] += gw
    grads["head.b"] += gb
    skip_grads: dict[str, np.ndarray] = {}
    for prefix, skip_name in (("dec3", "enc1"), ("dec2", "enc2"), ("dec1", "enc3")):
        gcat = _unit_backward(g, prefix, gt, ctx["units"][prefix], grads)
        c_up = ctx["split"][prefix]
        g_up = Tensor4(np.ascontiguousarray(gcat.array[:, :c_up]))
        skip_grads[skip_name] = gcat.array[:, c_up:]
        gt = upsample_nearest2x_backward(g_up, ctx["ups"][prefix])
    for prefix, skip_name in (("bridge", "enc3"), ("enc3", "enc2"), ("enc2", "enc1")):
        gt = _unit_backward(g, prefix, gt, ctx["units"][prefix], grads)
        gt = Tensor4(gt.array + skip_grads[skip_name])
    _unit_backward(g, "enc1", gt, ctx["units"]["enc1"], grads)


def _double_conv_forward(g: ModelGraph, prefix: str, x: Tensor4) -> tuple[Tensor4, dict]:
    ctx: dict = {}
    t, ctx["conv1"] = conv2d_forward(x, _conv_params(g, f"{prefix}.conv1", 1, 1, 1))
    t, ctx["relu1"] = relu_forward(t)
    t, ctx["conv2"] = conv2d_forward(t, _conv_params(g, f"{prefix}.conv2", 1, 1, 1))
    t, ctx["relu2"] = relu_forward(t)
    return t, ctx


def _double_conv_backward(g: ModelGraph, prefix: str, grad_y: Tensor4, ctx: dict,
                          grads: dict[str, np.ndarray]) -> Tensor4:
    gt = relu_backward(grad_y, ctx["relu2"])
    gt, gw, gb = conv2d_backward(gt, ctx["conv2"])
    grads[f"{prefix}.conv2.w"] += gw
    grads[f"{prefix}.conv2.b"] += gb
    gt = relu_backward(gt, ctx["relu1"])
    gt, gw, gb = conv2d_backward(gt, ctx["conv1"])
    grads[f"{prefix}.conv1.w"] += gw
    grads[f"{prefix}.conv1.b"] += gb
    return gt


def _forward_unet(g: ModelGraph, x: Tensor4, mode: str) -> tuple[Tensor4, dict]:
    ctx: dict = {"mode": mode, "blocks": {}, "pools": {}, "ups": {}, "split": {}}
    acts = {}
    t = x
    for lvl in range(1, 5):
        t, ctx["blocks"][f"enc{lvl}"] = _double_conv_forward(g, f"enc{lvl}", t)
        acts[lvl] = t
        t, ctx["pools"][lvl] = maxpool2x_forward(t)
    t, ctx["blocks"]["bottom"] = _double_conv_forward(g, "bottom", t)
    for lvl in range(4, 0, -1):
        tp = ConvTranspose2xParams(weight=g.params[f"up{lvl}.w"], bias=g.params[f"up{lvl}.b"])
        up, ctx["ups"][lvl] = conv_transpose2x_forward(t, tp)
        ctx["split"][lvl] = up.c
        t = concat_channels(up, acts[lvl])
        t, ctx["blocks"][f"dec{lvl}"] = _double_conv_forward(g, f"dec{lvl}", t)
    z, ctx["head"] = conv2d_forward(t, _conv_params(g, "head"))
    probs, ctx["sigmoid"] = sigmoid_forward(z)
    return probs, ctx


def _backward_unet(g: ModelGraph, grad_probs: Tensor4, ctx: dict,
                   grads: dict[str, np.ndarray]) -> None:
    gz = sigmoid_backward(grad_probs, ctx["sigmoid"])
    gt, gw, gb = conv2d_backward(gz, ctx["head"])
    grads["head.w"] += gw
    grads["head.b"] += gb
    skip_grads: dict[int, np.ndarray] = {}
    for lvl in range(1, 5):
        gcat = _double_conv_backward(g, f"dec{lvl}", gt, ctx["blocks"][f"dec{lvl}"], grads)
        c_up = ctx["split"][lvl]
        g_up = Tensor4(np.ascontiguousarray(gcat.array[:, :c_up]))
        skip_grads[lvl] = gcat.array[:, c_up:]
        gt, gw, gb = conv_transpose2x_backward(g_up, ctx["ups"][lvl])
        grads[f"up{lvl}.w"] += gw
        grads[f"up{lvl}.b"] += gb
    gt = _double_conv_backward(g, "bottom", gt, ctx["blocks"]["bottom"], grads)
    for lvl in range(4, 0, -1):
        gt = maxpool2x_backward(gt, ctx["pools"][lvl])
        gt = Tensor4(gt.array + skip_grads[lvl])
        gt = _double_conv_backward(g, f"enc{lvl}", gt, ctx["blocks"][f"enc{lvl}"], grads)


def model_forward(g: ModelGraph, x: Tensor4, mode: str = "eval") -> tuple[Tensor4, dict]:
    """Run the whole network; returns sigmoid probabilities and the backward context."""
    if mode not in ("train", "eval"):
        raise ValueError(f"model_forward: mode must be train or eval, got {mode!r}")
    _check_input(g, x)
    if g.kind == "unet":
        return _forward_unet(g, x, mode)
    return _forward_residual(g, x, mode)


def model_backward(g: ModelGraph, grad_probs: Tensor4, ctx: dict) -> dict[str, np.ndarray]:
    """Gradients for every trainable parameter, keyed and ordered like ``g.params``."""
    grads = {name: np.zeros_like(p) for name, p in g.params.items()}
    if g.kind == "unet":
        _backward_unet(g, grad_probs, ctx, grads)
    else:
        _backward_residual(g, grad_probs, ctx, grads)
    return grads
