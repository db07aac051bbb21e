"""Finite-difference verification of analytic gradients.

Checks run in 64-bit mode only; the training path stays float32. The
scalar head is a fixed random projection of the network output so every
output element contributes to every gradient.
"""

from __future__ import annotations

import numpy as np

from .layers import LayerSpec, Parameter, Sequential, layer_backward, layer_forward

_DENOM_FLOOR = 1e-4


def _validate(eps: float, arrays) -> None:
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    for a in arrays:
        if a.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")


def _rel_err(analytic: np.ndarray, numeric: float, idx) -> float:
    a = float(analytic[idx])
    return abs(a - numeric) / max(abs(a), abs(numeric), _DENOM_FLOOR)


def _fd_worst(f, targets: list[tuple[np.ndarray, np.ndarray]], eps: float) -> float:
    """targets: (array to perturb in place, its analytic gradient)."""
    worst = 0.0
    for arr, agrad in targets:
        flat = arr.reshape(-1)
        gflat = agrad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f()
            flat[i] = orig - eps
            f_minus = f()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, _rel_err(gflat, numeric, i))
    return worst


def grad_check(seq: Sequential, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference grads.

    Covers every parameter of every layer plus the input tensor; works
    unchanged on frozen (lr_mult=0) layers since freezing only affects
    optimizer updates.
    """
    x = np.array(x, dtype=np.float64)
    params = [p for _, p in seq.named_parameters()]
    _validate(eps, [x] + [p.value for p in params])

    y, cache = seq.forward(x)
    proj = np.random.default_rng(seed).standard_normal(y.shape)

    for p in params:
        p.zero_grad()
    gx = seq.backward(cache, proj.copy())
    analytic = [(x, gx)] + [(p.value, p.grad.copy()) for p in params]

    def f() -> float:
        out, _ = seq.forward(x)
        return float(np.sum(out * proj))

    return _fd_worst(f, analytic, eps)


def grad_check_layer(
    spec: LayerSpec, params: list[Parameter], inputs: list[np.ndarray], eps: float = 1e-5, seed: int = 0
) -> float:
    """Single-layer variant that also covers multi-input kinds."""
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    _validate(eps, inputs + [p.value for p in params])

    y = layer_forward(spec, params, inputs)
    proj = np.random.default_rng(seed).standard_normal(y.shape)

    for p in params:
        p.zero_grad()
    gins = layer_backward(spec, params, inputs, proj.copy())
    analytic = list(zip(inputs, gins)) + [(p.value, p.grad.copy()) for p in params]

    def f() -> float:
        return float(np.sum(layer_forward(spec, params, inputs) * proj))

    return _fd_worst(f, analytic, eps)


def fd_margin(model, pc: np.ndarray, ps: np.ndarray | None) -> float:
    """Distance from the nearest piecewise-linear kink along the pipeline.

    Central differences are only trustworthy when no ReLU input, pool
    tie or clamp boundary sits within the perturbation radius; callers
    should require a margin of a few hundred eps before checking.
    """
    from .nets import pipeline_forward

    out = pipeline_forward(model, pc, ps)
    ctx_cache = out.ctx.cache
    pairs = [
        (model.central, ctx_cache.get("central_cache")),
        (model.surround, ctx_cache.get("surround_cache")),
        (model.decision, ctx_cache.get("decision_cache")),
    ]
    if out.ref is not None:
        pairs += [
            (model.refine_trunk, out.ref.cache.get("trunk_cache")),
            (model.refine_head, out.ref.cache.get("head_cache")),
            (model.refine_aux, out.ref.cache.get("aux_cache")),
        ]
    margin = np.inf
    for seq, cache in pairs:
        if seq is None or cache is None:
            continue
        for layer, x in zip(seq.layers, cache):
            if layer.spec.kind == "relu":
                margin = min(margin, float(np.abs(x).min()))
            elif layer.spec.kind == "maxpool2x2":
                n, c, h, w = x.shape
                win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
                top2 = np.partition(win, 2, axis=1)[:, 2:]
                margin = min(margin, float((top2[:, 1] - top2[:, 0]).min()))
    # clamp kink on the correction path
    margin = min(margin, float(np.abs(np.atleast_2d(ctx_cache["e1_raw"]) - 1e-6).min()))
    return margin


def pipeline_grad_check(model, pc: np.ndarray, ps: np.ndarray, gt: np.ndarray, eps: float = 1e-5) -> float:
    """Full contextual -> refinement -> euclidean-loss composition check."""
    from .nets import pipeline_loss, pipeline_loss_and_grads

    pc = np.array(pc, dtype=np.float64)
    ps = np.array(ps, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    params = [p for _, p in model.named_parameters()]
    _validate(eps, [pc, ps] + [p.value for p in params])

    for p in params:
        p.zero_grad()
    _, gpc, gps = pipeline_loss_and_grads(model, pc, ps, gt, target="e_final")
    analytic = [(pc, gpc)] + ([(ps, gps)] if gps is not None else [])
    analytic += [(p.value, p.grad.copy()) for p in params]

    def f() -> float:
        return pipeline_loss(model, pc, ps, gt, target="e_final")

    return _fd_worst(f, analytic, eps)
