"""Structure generator: box + masked layout -> object mask and context labels.

The trunk downsamples, runs residual blocks, upsamples symmetrically and ends
in two heads: a 1-channel object-shape mask (sigmoid) and a C-channel context
label map (per-pixel softmax).  compose_layout folds the two streams into the
manipulated layout; class 0 routes to the context stream (deletion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from semedit.nn import tensor as T
from semedit.nn.layers import Conv2d, ConvBlock, Module, ModuleList, ResBlock, UpBlock, same_pad
from semedit.nn.tensor import Tensor
from semedit.scene import SemanticLayout, StructureInputs, ValidationError


@dataclass(frozen=True)
class StructureGeneratorSpec:
    """Architecture of the layout-prediction network.

    Defaults are the full-scale widths; desk_scale() quarters them for
    CPU-budget training.
    """

    num_classes: int
    down_channels: tuple[int, ...] = (64, 96, 128)
    down_filters: tuple[int, ...] = (7, 4, 4)
    res_blocks: int = 6
    res_channels: int = 256
    res_filter: int = 4

    def __post_init__(self):
        if len(self.down_channels) != len(self.down_filters):
            raise ValidationError("down_channels and down_filters must align")

    @property
    def stride(self) -> int:
        return 2 ** len(self.down_channels)

    @classmethod
    def desk_scale(cls, num_classes: int) -> "StructureGeneratorSpec":
        return cls(num_classes=num_classes, down_channels=(16, 24, 32),
                   res_channels=64)

    def to_dict(self):
        return {
            "kind": "structure-generator",
            "num_classes": self.num_classes,
            "down_channels": list(self.down_channels),
            "down_filters": list(self.down_filters),
            "res_blocks": self.res_blocks,
            "res_channels": self.res_channels,
            "res_filter": self.res_filter,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(num_classes=d["num_classes"],
                   down_channels=tuple(d["down_channels"]),
                   down_filters=tuple(d["down_filters"]),
                   res_blocks=d["res_blocks"],
                   res_channels=d["res_channels"],
                   res_filter=d["res_filter"])


@dataclass(frozen=True)
class StructureDiscriminatorSpec:
    """Patch classifier over (mask, masked layout) pairs."""

    num_classes: int
    channels: tuple[int, ...] = (64, 128, 256)
    kernel: int = 4

    @classmethod
    def desk_scale(cls, num_classes: int) -> "StructureDiscriminatorSpec":
        return cls(num_classes=num_classes, channels=(16, 32, 64))

    def to_dict(self):
        return {"kind": "structure-discriminator", "num_classes": self.num_classes,
                "channels": list(self.channels), "kernel": self.kernel}

    @classmethod
    def from_dict(cls, d):
        return cls(num_classes=d["num_classes"], channels=tuple(d["channels"]),
                   kernel=d["kernel"])


@dataclass
class StructureOutputs:
    """Predictions for one window: object mask in [0,1], context labels on the simplex."""

    obj_mask: np.ndarray   # (S, S, 1)
    ctx_layout: np.ndarray  # (S, S, C)
    obj_logits: object = field(default=None, repr=False)  # Tensor, training path
    ctx_logits: object = field(default=None, repr=False)


class StructureGenerator(Module):
    def __init__(self, spec: StructureGeneratorSpec, rng, dtype=np.float32):
        self.spec = spec
        c = spec.num_classes
        downs = []
        cin = c + 1
        for cout, k in zip(spec.down_channels, spec.down_filters):
            downs.append(ConvBlock(cin, cout, k, 2, rng, dtype))
            cin = cout
        self.downs = ModuleList(downs)
        blocks = []
        for _ in range(spec.res_blocks):
            blocks.append(ResBlock(cin, spec.res_channels, spec.res_filter, rng, dtype))
            cin = spec.res_channels
        self.blocks = ModuleList(blocks)
        ups = []
        for cout, k in zip(reversed(spec.down_channels), reversed(spec.down_filters)):
            ups.append(UpBlock(cin, cout, k, rng, dtype))
            cin = cout
        self.ups = ModuleList(ups)
        self.obj_head = Conv2d(cin, 1, 3, 1, same_pad(3), rng, dtype)
        self.ctx_head = Conv2d(cin, c, 3, 1, same_pad(3), rng, dtype)

    def forward(self, masked_layout: Tensor, box_mask: Tensor):
        """Batched forward; returns (obj_logits, ctx_logits)."""
        h = masked_layout.shape[1]
        if h % self.spec.stride or masked_layout.shape[2] % self.spec.stride:
            raise ValidationError(
                f"input size must be a multiple of {self.spec.stride}")
        x = T.concat([masked_layout, box_mask], axis=-1)
        for layer in self.downs:
            x = layer(x)
        for block in self.blocks:
            x = block(x)
        for layer in self.ups:
            x = layer(x)
        return self.obj_head(x), self.ctx_head(x)


class StructureDiscriminator(Module):
    def __init__(self, spec: StructureDiscriminatorSpec, rng, dtype=np.float32):
        self.spec = spec
        k = spec.kernel
        convs = []
        cin = spec.num_classes + 1
        for i, cout in enumerate(spec.channels):
            stride = 2 if i < len(spec.channels) - 1 else 1
            pad = 1 if stride == 2 else patch_tail_pad(k)
            convs.append(Conv2d(cin, cout, k, stride, pad, rng, dtype))
            cin = cout
        self.convs = ModuleList(convs)
        self.head = Conv2d(cin, 1, k, 1, patch_tail_pad(k), rng, dtype)

    def forward(self, mask: Tensor, cond: Tensor):
        """Returns (patch logits, ordered intermediate feature taps).

        No normalization layers: a patch logit's gradient footprint is then
        exactly the convolutional receptive field.
        """
        if mask.shape[:3] != cond.shape[:3]:
            raise ValidationError("mask and conditioning layout sizes differ")
        x = T.concat([mask, cond], axis=-1)
        taps = []
        for conv in self.convs:
            x = T.leaky_relu(conv(x), 0.2)
            taps.append(x)
        return self.head(x), taps


def patch_tail_pad(k: int):
    # stride-1 tail conv: shrinks by one pixel for even k (PatchGAN convention)
    return (k - 2) // 2 if k % 2 == 0 else (k - 1) // 2


def build_structure_generator(spec: StructureGeneratorSpec, seed: int,
                              dtype=np.float32) -> StructureGenerator:
    """Deterministic construction: same (spec, seed) gives bit-identical weights."""
    return StructureGenerator(spec, np.random.default_rng(seed), dtype)


def build_structure_discriminator(spec: StructureDiscriminatorSpec, seed: int,
                                  dtype=np.float32) -> StructureDiscriminator:
    return StructureDiscriminator(spec, np.random.default_rng(seed), dtype)


def forward_structure(model: StructureGenerator, inputs: StructureInputs) -> StructureOutputs:
    """Single-window inference; output sizes match the input window."""
    dtype = next(iter(model.params().values())).data.dtype
    m = Tensor(inputs.masked_layout[None].astype(dtype))
    b = Tensor(inputs.box_mask[None].astype(dtype))
    with T.no_grad():
        obj_logits, ctx_logits = model.forward(m, b)
        obj = T.sigmoid(obj_logits).data[0]
        ctx = T.softmax(ctx_logits, axis=-1).data[0]
    return StructureOutputs(obj_mask=obj, ctx_layout=ctx,
                            obj_logits=obj_logits.data[0], ctx_logits=ctx_logits.data[0])


def compose_layout(out: StructureOutputs, layout, class_id: int) -> np.ndarray:
    """Fold predictions into the manipulated layout.

    Deletion (class 0) returns the context stream unchanged; addition blends
    the one-hot class plane against the source layout with the object mask,
    scaling every channel by (1 - mask) so rows stay on the simplex.
    """
    src = layout.data if isinstance(layout, SemanticLayout) else np.asarray(layout)
    c = src.shape[-1]
    if not 0 <= class_id <= c:
        raise ValidationError(f"class_id {class_id} outside 0..{c}")
    if class_id == 0:
        return out.ctx_layout.copy()
    m = out.obj_mask
    if m.shape[:2] != src.shape[:2]:
        raise ValidationError("object mask and layout sizes differ")
    blended = (1.0 - m) * src
    blended[..., class_id - 1] += m[..., 0]
    return blended


def structure_disc_forward(model: StructureDiscriminator, mask: np.ndarray,
                           cond: np.ndarray):
    """Single-sample discriminator pass: (patch logit grid, feature taps)."""
    dtype = next(iter(model.params().values())).data.dtype
    with T.no_grad():
        logits, taps = model.forward(Tensor(mask[None].astype(dtype)),
                                     Tensor(cond[None].astype(dtype)))
    return logits.data[0], [t.data[0] for t in taps]


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def structure_losses(out: StructureOutputs, gt_obj_mask, masked_layout,
                     disc: StructureDiscriminator, lambda_obj: float = 10.0,
                     lambda_ctx: float = 10.0, ctx_target=None) -> dict:
    """Generator-side objective: adversarial + weighted reconstruction terms.

    Reconstruction is mean cross-entropy: binary for the object head against
    the rasterized ground-truth mask, categorical for the context head against
    `ctx_target` (defaults to the masked input layout).  The adversarial part
    is the non-saturating form on the conditional patch discriminator.
    """
    obj_logits = _as_tensor(out.obj_logits)
    ctx_logits = _as_tensor(out.ctx_logits)
    if obj_logits.data.ndim == 3:
        obj_logits = _as_tensor(obj_logits.data[None])
    if ctx_logits.data.ndim == 3:
        ctx_logits = _as_tensor(ctx_logits.data[None])
    gt = np.asarray(gt_obj_mask, dtype=obj_logits.dtype)
    if gt.ndim == 3:
        gt = gt[None]
    cond = np.asarray(masked_layout, dtype=ctx_logits.dtype)
    if cond.ndim == 3:
        cond = cond[None]
    target = cond if ctx_target is None else np.asarray(ctx_target, dtype=ctx_logits.dtype)
    if target.ndim == 3:
        target = target[None]

    recon_obj = T.bce_with_logits_mean(obj_logits, gt)
    recon_ctx = T.softmax_ce_mean(ctx_logits, target)
    fake_mask = T.sigmoid(obj_logits)
    logits, _ = disc.forward(fake_mask, Tensor(cond))
    adv = T.bce_with_logits_mean(logits, 1.0)
    total = adv + T.scale(recon_obj, lambda_obj) + T.scale(recon_ctx, lambda_ctx)
    return {"total": total, "adv": adv, "recon_obj": recon_obj, "recon_ctx": recon_ctx}


def structure_disc_losses(disc: StructureDiscriminator, real_mask, fake_mask,
                          cond) -> dict:
    """Discriminator side: real masks push patch logits to 1, fakes to 0."""
    cond_t = _as_tensor(cond)
    real_logits, _ = disc.forward(_as_tensor(real_mask), cond_t)
    fake_logits, _ = disc.forward(_as_tensor(fake_mask), cond_t)
    loss_real = T.bce_with_logits_mean(real_logits, 1.0)
    loss_fake = T.bce_with_logits_mean(fake_logits, 0.0)
    total = T.scale(loss_real + loss_fake, 0.5)
    return {"total": total, "real": loss_real, "fake": loss_fake}
