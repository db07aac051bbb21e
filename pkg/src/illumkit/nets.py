"""Contextual (center-surround) and refinement network assembly.

The contextual net runs two conv streams over the central patch and its
surround, fuses them (element-wise sum for the main variant), and
regresses an initial illuminant through a three-fc decision head. The
initial estimate diagonally corrects the central patch; the refinement
net stacks the corrected and original patches (channels 0-2 are the
original), shares one conv trunk between a primary head (second
estimate) and an auxiliary head (third estimate), and combines the two
by element-wise product.

Raw head outputs feed the training loss; for inference and for the
correction step they are clamped to >= 1e-6 per channel and normalized.
Rows whose normalized estimate still has a near-zero channel are
flagged and fall back to the uncorrected patch.

Every forward has a matching explicit backward so the whole composition
(including the correction path) is finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ShapeError
from .layers import Layer, LayerSpec, Parameter, Sequential

VARIANTS = ("central_only", "two_channel", "siamese", "pseudo_siamese", "contextual")

_MIN_CHANNEL = 1e-6
_INV_SQRT3 = 1.0 / np.sqrt(3.0)

# rng substream ids per model part, so init is stable across build orders
_PART_STREAMS = {
    "central": 0,
    "surround": 1,
    "decision": 2,
    "head1a": 3,
    "head1b": 4,
    "refine": 5,
    "refine.head": 6,
    "refine.aux": 7,
}

STAGE_DEPTH = {"2": "e1", "3": "e2", "4": "e_final", "e2e": "e_final", "untrained": "e_final"}


@dataclass(frozen=True)
class ArchConfig:
    variant: str = "contextual"
    conv_channels: tuple[int, ...] = (16, 32, 64)
    head_widths: tuple[int, ...] = (128, 64, 3)
    input_size: int = 32

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ShapeError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if not self.conv_channels:
            raise ShapeError("conv_channels must not be empty")
        if len(self.head_widths) != 3 or self.head_widths[-1] != 3:
            raise ShapeError("head must be three fc widths ending in 3")
        if self.input_size % (2 ** len(self.conv_channels)) != 0:
            raise ShapeError(
                f"input_size {self.input_size} not divisible by 2^{len(self.conv_channels)} pooling"
            )

    @property
    def feature_spatial(self) -> int:
        return self.input_size // (2 ** len(self.conv_channels))

    @property
    def stream_features(self) -> int:
        return self.conv_channels[-1] * self.feature_spatial**2

    @property
    def fused_features(self) -> int:
        if self.variant in ("siamese", "pseudo_siamese"):
            return 2 * self.stream_features
        return self.stream_features

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "conv_channels": list(self.conv_channels),
            "head_widths": list(self.head_widths),
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            variant=d["variant"],
            conv_channels=tuple(d["conv_channels"]),
            head_widths=tuple(d["head_widths"]),
            input_size=int(d["input_size"]),
        )


@dataclass
class IlluminanceModel:
    arch: ArchConfig
    params: dict[str, Parameter]
    stage: str = "untrained"
    central: Sequential | None = None
    surround: Sequential | None = None
    decision: Sequential | None = None
    head1a: Sequential | None = None
    head1b: Sequential | None = None
    refine_trunk: Sequential | None = None
    refine_head: Sequential | None = None
    refine_aux: Sequential | None = None

    def named_parameters(self):
        return sorted(self.params.items())

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def set_lr_mults(self, trainable: set[str]) -> None:
        """lr_mult 1 for names in the trainable set, 0 (frozen) otherwise."""
        for name, p in self.params.items():
            p.lr_mult = 1.0 if name in trainable else 0.0

    def has_refinement(self) -> bool:
        return self.refine_trunk is not None


class ModelBuilder:
    """Creates or adopts named parameters and wires the Sequential views."""

    def __init__(self, arch: ArchConfig, seed: int, dtype=np.float32, params: dict | None = None):
        self.arch = arch
        self.seed = seed
        self.dtype = dtype
        self.params: dict[str, Parameter] = params if params is not None else {}
        self.model = IlluminanceModel(arch=arch, params=self.params)

    def _rng(self, part: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, _PART_STREAMS[part]])

    def _ensure(self, name: str, shape: tuple, init) -> Parameter:
        if name in self.params:
            p = self.params[name]
            if tuple(p.value.shape) != shape:
                raise CheckpointError(f"parameter {name} has shape {p.value.shape}, expected {shape}")
            return p
        p = Parameter(np.ascontiguousarray(init(), dtype=self.dtype))
        self.params[name] = p
        return p

    def _stream(self, prefix: str, part: str, entry_channels: int) -> Sequential:
        rng = self._rng(part)
        layers: list[Layer] = []
        cin = entry_channels
        for i, cout in enumerate(self.arch.conv_channels, start=1):
            spec = LayerSpec("conv2d", in_channels=cin, out_channels=cout, kernel_size=3, padding=1)
            std = np.sqrt(2.0 / (cin * 9))  # fan-in scaled, no pretrained backbone
            shape_w, shape_b = (cout, cin, 3, 3), (cout,)
            w = self._ensure(f"{prefix}.conv{i}.w", shape_w, lambda s=std, sh=shape_w, r=rng: s * r.standard_normal(sh))
            b = self._ensure(f"{prefix}.conv{i}.b", shape_b, lambda sh=shape_b: np.zeros(sh))
            layers.append(Layer(f"{prefix}.conv{i}", spec, [w, b]))
            layers.append(Layer(f"{prefix}.relu{i}", LayerSpec("relu"), []))
            layers.append(Layer(f"{prefix}.pool{i}", LayerSpec("maxpool2x2"), []))
            cin = cout
        return Sequential(layers)

    def _head(self, prefix: str, part: str, in_features: int) -> Sequential:
        rng = self._rng(part)
        layers: list[Layer] = [Layer(f"{prefix}.flatten", LayerSpec("flatten"), [])]
        fin = in_features
        n = len(self.arch.head_widths)
        for i, fout in enumerate(self.arch.head_widths, start=1):
            spec = LayerSpec("fully_connected", in_features=fin, out_features=fout)
            shape_w, shape_b = (fout, fin), (fout,)
            w = self._ensure(f"{prefix}.fc{i}.w", shape_w, lambda sh=shape_w, r=rng: 0.01 * r.standard_normal(sh))
            # final 3-unit layer starts at the neutral estimate (bias 1)
            bias_init = 1.0 if i == n else 0.0
            b = self._ensure(f"{prefix}.fc{i}.b", shape_b, lambda sh=shape_b, v=bias_init: np.full(sh, v))
            layers.append(Layer(f"{prefix}.fc{i}", spec, [w, b]))
            if i < n:
                layers.append(Layer(f"{prefix}.relu{i}", LayerSpec("relu"), []))
            fin = fout
        return Sequential(layers)

    def add_central(self) -> None:
        entry = 6 if self.arch.variant == "two_channel" else 3
        self.model.central = self._stream("central", "central", entry)

    def add_surround(self) -> None:
        if self.arch.variant in ("central_only", "two_channel"):
            return
        if self.arch.variant == "siamese":
            self.model.surround = self.model.central  # shared parameters
            return
        self.model.surround = self._stream("surround", "surround", 3)

    def add_decision(self) -> None:
        self.model.decision = self._head("decision", "decision", self.arch.fused_features)

    def add_stage1_head(self, which: str) -> None:
        setattr(self.model, which, self._head(which, which, self.arch.stream_features))

    def add_refinement_trunk(self) -> None:
        self.model.refine_trunk = self._stream("refine", "refine", 6)

    def add_refinement_head(self) -> None:
        self.model.refine_head = self._head("refine.head", "refine.head", self.arch.stream_features)

    def add_refinement_aux(self) -> None:
        self.model.refine_aux = self._head("refine.aux", "refine.aux", self.arch.stream_features)


def build_net(arch: ArchConfig, init_seed: int = 0, dtype=np.float32, stage: str = "untrained") -> IlluminanceModel:
    """Full model: contextual net, refinement trunk and both heads."""
    b = ModelBuilder(arch, init_seed, dtype)
    b.add_central()
    b.add_surround()
    b.add_decision()
    b.add_refinement_trunk()
    b.add_refinement_head()
    b.add_refinement_aux()
    b.model.stage = stage
    return b.model


def model_from_params(arch: ArchConfig, params: dict[str, Parameter], stage: str) -> IlluminanceModel:
    """Rebuild the graph around an existing parameter set (checkpoint load)."""
    b = ModelBuilder(arch, seed=0, params=params)
    names = set(params)
    if any(n.startswith("central.") for n in names):
        b.add_central()
    if any(n.startswith("surround.") for n in names) or arch.variant == "siamese":
        b.add_surround()
    if any(n.startswith("decision.") for n in names):
        b.add_decision()
    for which in ("head1a", "head1b"):
        if any(n.startswith(which + ".") for n in names):
            b.add_stage1_head(which)
    if any(n.startswith("refine.conv") for n in names):
        b.add_refinement_trunk()
    if any(n.startswith("refine.head.") for n in names):
        b.add_refinement_head()
    if any(n.startswith("refine.aux.") for n in names):
        b.add_refinement_aux()
    b.model.stage = stage
    return b.model


# ---------------------------------------------------------------------------
# estimate finalization (clamp + normalize) with explicit backward
# ---------------------------------------------------------------------------


def finalize_estimate(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(N,3) raw -> (unit estimates, degenerate flags)."""
    clamped = np.maximum(raw, _MIN_CHANNEL)
    norms = np.linalg.norm(clamped, axis=1, keepdims=True)
    unit = clamped / norms
    flags = (unit <= _MIN_CHANNEL).any(axis=1)
    return unit, flags


def _finalize_backward(raw: np.ndarray, unit: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    clamped = np.maximum(raw, _MIN_CHANNEL)
    norms = np.linalg.norm(clamped, axis=1, keepdims=True)
    inner = np.sum(grad_unit * unit, axis=1, keepdims=True)
    grad_clamped = (grad_unit - unit * inner) / norms
    return np.where(raw > _MIN_CHANNEL, grad_clamped, 0.0)


def _correct_patch(pc: np.ndarray, unit: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """P = pc * (1/sqrt(3))/unit per channel; flagged rows fall back to pc."""
    scale = _INV_SQRT3 / unit  # (N,3)
    out = pc * scale[:, :, None, None].astype(pc.dtype)
    if flags.any():
        out[flags] = pc[flags]
    return out


def _correct_patch_backward(
    pc: np.ndarray, unit: np.ndarray, flags: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the corrected patch wrt pc and the unit estimate."""
    scale = _INV_SQRT3 / unit
    ok = ~flags
    grad_pc = np.where(ok[:, None, None, None], grad_out * scale[:, :, None, None], grad_out)
    grad_scale = np.einsum("nchw,nchw->nc", grad_out, pc)
    grad_unit = np.where(ok[:, None], -grad_scale * scale / unit, 0.0)
    return grad_pc, grad_unit


# ---------------------------------------------------------------------------
# forward / backward passes
# ---------------------------------------------------------------------------


@dataclass
class ContextualOutput:
    e1_raw: np.ndarray  # (N,3)
    e1: np.ndarray  # (N,3) unit
    p1: np.ndarray  # (N,3,S,S)
    flags: np.ndarray  # (N,)
    cache: dict = field(repr=False, default_factory=dict)


def _batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    return x, False


def contextual_forward(model: IlluminanceModel, pc: np.ndarray, ps: np.ndarray | None) -> ContextualOutput:
    pc, single = _batch(pc)
    if ps is not None:
        ps, _ = _batch(ps)
    variant = model.arch.variant
    cache: dict = {"pc": pc, "ps": ps, "variant": variant}

    if variant == "central_only":
        fused, cache["central_cache"] = model.central.forward(pc)
    elif variant == "two_channel":
        stack = np.concatenate([pc, ps], axis=1)
        cache["stack"] = stack
        fused, cache["central_cache"] = model.central.forward(stack)
    else:
        feat_c, cache["central_cache"] = model.central.forward(pc)
        feat_s, cache["surround_cache"] = model.surround.forward(ps)
        if variant == "contextual":
            fused = feat_c + feat_s
        else:  # siamese / pseudo_siamese concatenate stream features
            fused = np.concatenate([feat_c, feat_s], axis=1)
        cache["feat_c"], cache["feat_s"] = feat_c, feat_s

    e1_raw, cache["decision_cache"] = model.decision.forward(fused)
    e1, flags = finalize_estimate(e1_raw)
    p1 = _correct_patch(pc, e1.astype(pc.dtype), flags)
    cache.update({"fused": fused, "e1_raw": e1_raw, "unit": e1, "flags": flags})
    if single:
        return ContextualOutput(e1_raw=e1_raw[0], e1=e1[0], p1=p1[0], flags=flags[0], cache=cache)
    return ContextualOutput(e1_raw=e1_raw, e1=e1, p1=p1, flags=flags, cache=cache)


def contextual_backward(
    model: IlluminanceModel,
    cache: dict,
    grad_e1_raw: np.ndarray | None = None,
    grad_p1: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Accumulates parameter grads; returns (grad_pc, grad_ps)."""
    pc = cache["pc"]
    e1_raw = cache["e1_raw"]
    unit = cache["unit"]
    flags = cache["flags"]

    grad_raw_total = np.zeros_like(e1_raw)
    if grad_e1_raw is not None:
        grad_raw_total += grad_e1_raw
    grad_pc_total = np.zeros_like(pc)
    if grad_p1 is not None:
        gpc, grad_unit = _correct_patch_backward(pc, unit, flags, grad_p1)
        grad_pc_total += gpc
        grad_raw_total += _finalize_backward(e1_raw, unit, grad_unit)

    grad_fused = model.decision.backward(cache["decision_cache"], grad_raw_total)

    variant = cache["variant"]
    if variant == "central_only":
        grad_pc_total += model.central.backward(cache["central_cache"], grad_fused)
        return grad_pc_total, None
    if variant == "two_channel":
        grad_stack = model.central.backward(cache["central_cache"], grad_fused)
        grad_pc_total += grad_stack[:, :3]
        return grad_pc_total, np.ascontiguousarray(grad_stack[:, 3:])
    if variant == "contextual":
        grad_c, grad_s = grad_fused, grad_fused.copy()
    else:
        c = cache["feat_c"].shape[1]
        grad_c = np.ascontiguousarray(grad_fused[:, :c])
        grad_s = np.ascontiguousarray(grad_fused[:, c:])
    grad_pc_total += model.central.backward(cache["central_cache"], grad_c)
    grad_ps = model.surround.backward(cache["surround_cache"], grad_s)
    return grad_pc_total, grad_ps


@dataclass
class RefinementOutput:
    e2_raw: np.ndarray
    e2: np.ndarray  # unit, clamp-normalized e2_raw
    e3_raw: np.ndarray | None
    efinal_raw: np.ndarray | None  # e2_raw * e3_raw
    e_final: np.ndarray | None  # unit
    p2: np.ndarray
    flags: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def refinement_forward(model: IlluminanceModel, pc: np.ndarray, p1: np.ndarray) -> RefinementOutput:
    if model.refine_trunk is None or model.refine_head is None:
        raise ShapeError("model has no refinement net")
    pc, single = _batch(pc)
    p1, _ = _batch(p1)
    x = np.concatenate([pc, p1], axis=1)  # channels 0-2 are the original patch
    feat, trunk_cache = model.refine_trunk.forward(x)
    e2_raw, head_cache = model.refine_head.forward(feat)
    e2, flags2 = finalize_estimate(e2_raw)

    cache = {
        "pc": pc,
        "x": x,
        "trunk_cache": trunk_cache,
        "head_cache": head_cache,
        "e2_raw": e2_raw,
        "e2": e2,
    }

    if model.refine_aux is not None:
        e3_raw, aux_cache = model.refine_aux.forward(feat)
        efinal_raw = e2_raw * e3_raw
        e_final, flags = finalize_estimate(efinal_raw)
        cache.update({"aux_cache": aux_cache, "e3_raw": e3_raw, "efinal_raw": efinal_raw, "e_final": e_final, "flags": flags})
        p2 = _correct_patch(pc, e_final.astype(pc.dtype), flags)
    else:
        e3_raw = efinal_raw = e_final = None
        flags = flags2
        cache.update({"flags": flags})
        p2 = _correct_patch(pc, e2.astype(pc.dtype), flags)

    out = RefinementOutput(
        e2_raw=e2_raw, e2=e2, e3_raw=e3_raw, efinal_raw=efinal_raw, e_final=e_final, p2=p2, flags=flags, cache=cache
    )
    if single:
        return RefinementOutput(
            e2_raw=e2_raw[0],
            e2=e2[0],
            e3_raw=None if e3_raw is None else e3_raw[0],
            efinal_raw=None if efinal_raw is None else efinal_raw[0],
            e_final=None if e_final is None else e_final[0],
            p2=p2[0],
            flags=flags[0],
            cache=cache,
        )
    return out


def refinement_backward(
    model: IlluminanceModel,
    cache: dict,
    grad_e2_raw: np.ndarray | None = None,
    grad_e3_raw: np.ndarray | None = None,
    grad_efinal_raw: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulates parameter grads; returns (grad_pc_direct, grad_p1)."""
    e2_raw = cache["e2_raw"]
    g2 = np.zeros_like(e2_raw)
    if grad_e2_raw is not None:
        g2 += grad_e2_raw
    g3 = None
    if model.refine_aux is not None:
        g3 = np.zeros_like(cache["e3_raw"])
        if grad_e3_raw is not None:
            g3 += grad_e3_raw
        if grad_efinal_raw is not None:
            g2 += grad_efinal_raw * cache["e3_raw"]
            g3 += grad_efinal_raw * e2_raw
    elif grad_efinal_raw is not None or grad_e3_raw is not None:
        raise ShapeError("model has no auxiliary head for e3/e_final gradients")

    grad_feat = model.refine_head.backward(cache["head_cache"], g2)
    if g3 is not None:
        grad_feat = grad_feat + model.refine_aux.backward(cache["aux_cache"], g3)
    grad_x = model.refine_trunk.backward(cache["trunk_cache"], grad_feat)
    grad_pc = np.ascontiguousarray(grad_x[:, :3])
    grad_p1 = np.ascontiguousarray(grad_x[:, 3:])
    return grad_pc, grad_p1


@dataclass
class PipelineOutput:
    ctx: ContextualOutput
    ref: RefinementOutput | None
    flags: np.ndarray


def pipeline_forward(model: IlluminanceModel, pc: np.ndarray, ps: np.ndarray | None) -> PipelineOutput:
    pc_b, _ = _batch(pc)
    ps_b = None if ps is None else _batch(ps)[0]
    ctx = contextual_forward(model, pc_b, ps_b)
    if not model.has_refinement():
        return PipelineOutput(ctx=ctx, ref=None, flags=ctx.flags)
    ref = refinement_forward(model, pc_b, ctx.p1)
    return PipelineOutput(ctx=ctx, ref=ref, flags=ctx.flags | ref.flags)


_TARGET_KEYS = {"e1": "e1_raw", "e2": "e2_raw", "e3": "e3_raw", "e_final": "efinal_raw"}


def pipeline_raw_target(out: PipelineOutput, target: str) -> np.ndarray:
    if target not in _TARGET_KEYS:
        raise ShapeError(f"unknown loss target {target!r}")
    if target == "e1":
        return out.ctx.e1_raw
    if out.ref is None:
        raise ShapeError(f"loss target {target} needs the refinement net")
    value = getattr(out.ref, _TARGET_KEYS[target])
    if value is None:
        raise ShapeError(f"loss target {target} needs the auxiliary head")
    return value


def pipeline_loss(model: IlluminanceModel, pc, ps, gt: np.ndarray, target: str = "e_final") -> float:
    from .layers import euclidean_loss

    out = pipeline_forward(model, pc, ps)
    loss, _ = euclidean_loss(pipeline_raw_target(out, target), np.atleast_2d(gt))
    return loss


def pipeline_loss_and_grads(
    model: IlluminanceModel, pc, ps, gt: np.ndarray, target: str = "e_final"
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Loss on the raw target estimate; grads accumulate into parameters.

    Returns (loss, grad_pc, grad_ps); gradients flow through the
    correction path P1 into both streams for refinement targets.
    """
    from .layers import euclidean_loss

    out = pipeline_forward(model, pc, ps)
    est = pipeline_raw_target(out, target)
    loss, grad_est = euclidean_loss(est, np.atleast_2d(gt))

    if target == "e1":
        grad_pc, grad_ps = contextual_backward(model, out.ctx.cache, grad_e1_raw=grad_est)
        return loss, grad_pc, grad_ps

    kw = {"grad_" + _TARGET_KEYS[target]: grad_est}
    grad_pc_dir, grad_p1 = refinement_backward(model, out.ref.cache, **kw)
    grad_pc, grad_ps = contextual_backward(model, out.ctx.cache, grad_p1=grad_p1)
    return loss, grad_pc + grad_pc_dir, grad_ps


def estimate_patches(model: IlluminanceModel, pc: np.ndarray, ps: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch unit estimates and flags at the model's trained depth."""
    depth = STAGE_DEPTH.get(model.stage)
    if depth is None:
        raise ShapeError(f"stage {model.stage!r} model is not inference-ready")
    if depth == "e_final" and (model.refine_aux is None):
        depth = "e2" if model.refine_trunk is not None else "e1"
    if depth == "e2" and model.refine_trunk is None:
        depth = "e1"
    out = pipeline_forward(model, pc, ps)
    if depth == "e1" or out.ref is None:
        return out.ctx.e1, out.ctx.flags
    if depth == "e2" or out.ref.e_final is None:
        return out.ref.e2, out.ctx.flags | out.ref.flags
    return out.ref.e_final, out.flags
