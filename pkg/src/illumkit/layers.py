"""Differentiable layer primitives with explicit forward/backward passes.

Eight layer kinds cover both networks: conv2d, relu, maxpool2x2,
fully_connected, concat_channels, eltwise_sum, eltwise_prod, flatten.
Feature maps are channels-first (C, H, W); every op also accepts a
leading batch axis. Shape inference is total: invalid combinations
raise ShapeError instead of truncating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import NonFiniteError, ShapeError

KINDS = (
    "conv2d",
    "relu",
    "maxpool2x2",
    "fully_connected",
    "concat_channels",
    "eltwise_sum",
    "eltwise_prod",
    "flatten",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if min(self.in_channels, self.out_channels, self.kernel_size) < 1 or self.stride < 1 or self.padding < 0:
                raise ShapeError(f"bad conv2d attributes: {self}")
        if self.kind == "fully_connected" and min(self.in_features, self.out_features) < 1:
            raise ShapeError(f"bad fully_connected attributes: {self}")


class Parameter:
    """Trainable value plus gradient and momentum state.

    lr_mult scales the learning rate per parameter; 0 freezes it
    (value and momentum buffer stay bit-identical across updates).
    """

    __slots__ = ("value", "grad", "momentum_buf", "lr_mult")

    def __init__(self, value: np.ndarray, lr_mult: float = 1.0):
        if lr_mult < 0:
            raise ValueError("lr_mult must be nonnegative")
        self.value = value
        self.grad = np.zeros_like(value)
        self.momentum_buf = np.zeros_like(value)
        self.lr_mult = float(lr_mult)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _is_batched(spec: LayerSpec, ndim: int) -> bool:
    if spec.kind in ("conv2d", "maxpool2x2", "concat_channels"):
        return ndim == 4
    if spec.kind == "fully_connected":
        return ndim == 2
    if spec.kind == "flatten":
        return ndim == 4
    return False


def infer_shape(spec: LayerSpec, input_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Output shape for the given (unbatched) input shapes; raises ShapeError."""
    kind = spec.kind
    if kind in ("relu",):
        (s,) = input_shapes
        return s
    if kind == "conv2d":
        (s,) = input_shapes
        if len(s) != 3:
            raise ShapeError(f"conv2d expects (C,H,W), got {s}")
        c, h, w = s
        if c != spec.in_channels:
            raise ShapeError(f"conv2d expects {spec.in_channels} input channels, got {c}")
        k, st, p = spec.kernel_size, spec.stride, spec.padding
        for name, extent in (("height", h), ("width", w)):
            span = extent + 2 * p - k
            if span < 0 or span % st != 0:
                raise ShapeError(f"conv2d kernel {k} stride {st} pad {p} does not tile input {name} {extent}")
        return (spec.out_channels, (h + 2 * p - k) // st + 1, (w + 2 * p - k) // st + 1)
    if kind == "maxpool2x2":
        (s,) = input_shapes
        if len(s) != 3:
            raise ShapeError(f"maxpool2x2 expects (C,H,W), got {s}")
        c, h, w = s
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 requires even spatial extents, got {h}x{w}")
        return (c, h // 2, w // 2)
    if kind == "fully_connected":
        (s,) = input_shapes
        if len(s) != 1 or s[0] != spec.in_features:
            raise ShapeError(f"fully_connected expects ({spec.in_features},), got {s}")
        return (spec.out_features,)
    if kind == "flatten":
        (s,) = input_shapes
        return (int(np.prod(s)),)
    if kind == "concat_channels":
        if len(input_shapes) < 2:
            raise ShapeError("concat_channels needs at least two inputs")
        base = input_shapes[0]
        if len(base) != 3:
            raise ShapeError(f"concat_channels expects (C,H,W) inputs, got {base}")
        for s in input_shapes[1:]:
            if len(s) != 3 or s[1:] != base[1:]:
                raise ShapeError(f"concat_channels spatial mismatch: {base} vs {s}")
        return (sum(s[0] for s in input_shapes),) + base[1:]
    if kind in ("eltwise_sum", "eltwise_prod"):
        if len(input_shapes) < 2:
            raise ShapeError(f"{kind} needs at least two inputs")
        if kind == "eltwise_prod" and len(input_shapes) != 2:
            raise ShapeError("eltwise_prod takes exactly two inputs")
        base = input_shapes[0]
        for s in input_shapes[1:]:
            if s != base:
                raise ShapeError(f"{kind} shape mismatch: {base} vs {s}")
        return base
    raise ShapeError(f"unknown layer kind {kind!r}")


def _check_finite(kind: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in output of {kind}")


def layer_forward(spec: LayerSpec, params: list[Parameter], inputs: list[np.ndarray]) -> np.ndarray:
    """Pure forward pass; output shape always matches infer_shape."""
    kind = spec.kind
    x = inputs[0]
    batched = _is_batched(spec, x.ndim)
    # validate against the unbatched inference
    shapes = [tuple(a.shape[1:] if batched else a.shape) for a in inputs]
    infer_shape(spec, shapes)

    if kind == "relu":
        y = np.maximum(x, 0)
    elif kind == "eltwise_sum":
        y = inputs[0] + inputs[1]
        for extra in inputs[2:]:
            y = y + extra
    elif kind == "eltwise_prod":
        y = inputs[0] * inputs[1]
    elif kind == "concat_channels":
        y = np.concatenate(inputs, axis=1 if batched else 0)
    elif kind == "flatten":
        y = x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
    elif kind == "fully_connected":
        w, b = params[0].value, params[1].value
        y = (x if batched else x[None]) @ w.T + b
        if not batched:
            y = y[0]
    elif kind == "conv2d":
        w, b = params[0].value, params[1].value
        x4 = x if batched else x[None]
        y = backend.conv2d_forward(x4, w, b, spec.stride, spec.padding)
        if not batched:
            y = y[0]
    elif kind == "maxpool2x2":
        x4 = x if batched else x[None]
        y, _ = backend.maxpool2x2_forward(x4)
        if not batched:
            y = y[0]
    else:
        raise ShapeError(f"unknown layer kind {kind!r}")
    _check_finite(kind, y)
    return y


def layer_backward(
    spec: LayerSpec, params: list[Parameter], inputs: list[np.ndarray], grad_out: np.ndarray
) -> list[np.ndarray]:
    """Input gradients; parameter gradients are accumulated into params.

    Callers zero parameter grads between optimizer steps.
    """
    kind = spec.kind
    x = inputs[0]
    batched = _is_batched(spec, x.ndim)

    if kind == "relu":
        if grad_out.shape != x.shape:
            raise ShapeError(f"relu grad shape {grad_out.shape} != input {x.shape}")
        grads = [np.where(x > 0, grad_out, 0)]
    elif kind == "eltwise_sum":
        grads = [grad_out.copy() for _ in inputs]
    elif kind == "eltwise_prod":
        a, b = inputs
        grads = [grad_out * b, grad_out * a]
    elif kind == "concat_channels":
        axis = 1 if batched else 0
        splits = np.cumsum([a.shape[axis] for a in inputs])[:-1]
        grads = [np.ascontiguousarray(g) for g in np.split(grad_out, splits, axis=axis)]
    elif kind == "flatten":
        grads = [grad_out.reshape(x.shape)]
    elif kind == "fully_connected":
        w = params[0].value
        x2 = x if batched else x[None]
        g2 = grad_out if batched else grad_out[None]
        params[0].grad += g2.T @ x2
        params[1].grad += g2.sum(axis=0)
        gx = g2 @ w
        grads = [gx if batched else gx[0]]
    elif kind == "conv2d":
        x4 = x if batched else x[None]
        g4 = grad_out if batched else grad_out[None]
        gx, gw, gb = backend.conv2d_backward(x4, params[0].value, g4, spec.stride, spec.padding)
        params[0].grad += gw
        params[1].grad += gb
        grads = [gx if batched else gx[0]]
    elif kind == "maxpool2x2":
        x4 = x if batched else x[None]
        g4 = grad_out if batched else grad_out[None]
        _, idx = backend.maxpool2x2_forward(x4)
        gx = backend.maxpool2x2_backward(idx, g4)
        grads = [gx if batched else gx[0]]
    else:
        raise ShapeError(f"unknown layer kind {kind!r}")

    for g, inp in zip(grads, inputs):
        if g.shape != inp.shape:
            raise ShapeError(f"{kind} grad_in shape {g.shape} != input {inp.shape}")
        _check_finite(kind + " backward", g)
    return grads


class Layer:
    __slots__ = ("name", "spec", "params")

    def __init__(self, name: str, spec: LayerSpec, params: list[Parameter]):
        self.name = name
        self.spec = spec
        self.params = params


class Sequential:
    """Single-input chain of layers with cached activations for backward."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        cache = []
        for layer in self.layers:
            cache.append(x)
            try:
                x = layer_forward(layer.spec, layer.params, [x])
            except NonFiniteError as exc:
                raise NonFiniteError(f"{layer.name}: {exc}") from None
        return x, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        for layer, x in zip(reversed(self.layers), reversed(cache)):
            try:
                grad_out = layer_backward(layer.spec, layer.params, [x], grad_out)[0]
            except NonFiniteError as exc:
                raise NonFiniteError(f"{layer.name}: {exc}") from None
        return grad_out

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        shape = input_shape
        for layer in self.layers:
            shape = infer_shape(layer.spec, [shape])
        return shape

    def named_parameters(self):
        suffixes = ("w", "b")
        for layer in self.layers:
            for suffix, p in zip(suffixes, layer.params):
                yield f"{layer.name}.{suffix}", p


def euclidean_loss(est: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared Euclidean distance between estimate rows and targets.

    loss = (1/N) sum_i ||est_i - gt_i||^2, grad = (2/N)(est - gt).
    """
    est = np.asarray(est)
    gt = np.asarray(gt)
    if est.ndim == 1:
        est = est[None]
        gt = gt[None]
    if est.shape != gt.shape:
        raise ShapeError(f"loss shape mismatch: {est.shape} vs {gt.shape}")
    n = est.shape[0]
    if n < 1:
        raise ShapeError("euclidean_loss needs at least one sample")
    diff = est - gt
    loss = float(np.sum(diff * diff) / n)
    return loss, (2.0 / n) * diff
