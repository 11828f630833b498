"""Image generator: (masked image, layout) -> RGB pixels for the edit window.

Two downsampling encoder streams (image / layout) meet at an element-wise
gate selecting layout features inside the box and image features outside,
then residual blocks and a transposed-conv decoder render the window.  The
`variant` field degrades the model into the ablation baselines: a single
encoder over either input alone or over their concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from semedit.nn import tensor as T
from semedit.nn.layers import Conv2d, ConvBlock, Module, ModuleList, ResBlock, UpBlock, same_pad
from semedit.nn.tensor import Tensor
from semedit.scene import ImageInputs, ValidationError

VARIANTS = ("twostream", "concat", "image", "layout")


@dataclass(frozen=True)
class ImageGeneratorSpec:
    num_classes: int
    enc_channels: tuple[int, ...] = (64, 128, 256)
    res_blocks: int = 9
    kernel: int = 3
    variant: str = "twostream"
    style: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.style and self.variant == "image":
            raise ValidationError("style conditioning needs a layout stream")

    @property
    def stride(self) -> int:
        return 2 ** len(self.enc_channels)

    @classmethod
    def desk_scale(cls, num_classes: int, variant: str = "twostream",
                   style: bool = False) -> "ImageGeneratorSpec":
        return cls(num_classes=num_classes, enc_channels=(16, 32, 64),
                   variant=variant, style=style)

    def to_dict(self):
        return {"kind": "image-generator", "num_classes": self.num_classes,
                "enc_channels": list(self.enc_channels), "res_blocks": self.res_blocks,
                "kernel": self.kernel, "variant": self.variant, "style": self.style}

    @classmethod
    def from_dict(cls, d):
        return cls(num_classes=d["num_classes"], enc_channels=tuple(d["enc_channels"]),
                   res_blocks=d["res_blocks"], kernel=d["kernel"],
                   variant=d["variant"], style=d["style"])


@dataclass(frozen=True)
class MultiscaleDiscriminatorSpec:
    """Two PatchGAN classifiers; the second sees 2x-downsampled inputs, doubling
    its effective patch footprint (70 -> 140 input pixels)."""

    num_classes: int
    channels: tuple[int, ...] = (64, 128, 256, 512)
    kernel: int = 4
    scales: int = 2
    cond_layout: bool = True

    @classmethod
    def desk_scale(cls, num_classes: int, cond_layout: bool = True):
        return cls(num_classes=num_classes, channels=(16, 32, 64, 128),
                   cond_layout=cond_layout)

    def to_dict(self):
        return {"kind": "multiscale-discriminator", "num_classes": self.num_classes,
                "channels": list(self.channels), "kernel": self.kernel,
                "scales": self.scales, "cond_layout": self.cond_layout}

    @classmethod
    def from_dict(cls, d):
        return cls(num_classes=d["num_classes"], channels=tuple(d["channels"]),
                   kernel=d["kernel"], scales=d["scales"], cond_layout=d["cond_layout"])


def fuse_features(f_layout: Tensor, f_image: Tensor, gate: np.ndarray) -> Tensor:
    """Element-wise stream selection: layout features where gate=1, image
    features where gate=0."""
    if f_layout.shape != f_image.shape:
        raise ValidationError(
            f"stream shapes differ: {f_layout.shape} vs {f_image.shape}")
    g = np.asarray(gate, dtype=f_layout.dtype)
    if g.shape[-3:-1] != f_layout.shape[-3:-1]:
        raise ValidationError(f"gate grid {g.shape} does not match features")
    return T.mul(f_layout, g) + T.mul(f_image, 1.0 - g)


class _Encoder(Module):
    def __init__(self, cin, channels, k, rng, dtype):
        layers = []
        for cout in channels:
            layers.append(ConvBlock(cin, cout, k, 2, rng, dtype))
            cin = cout
        self.layers = ModuleList(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ImageGenerator(Module):
    def __init__(self, spec: ImageGeneratorSpec, rng, dtype=np.float32):
        self.spec = spec
        k = spec.kernel
        c = spec.num_classes
        layout_in = c + (3 if spec.style else 0)
        if spec.variant == "twostream":
            self.image_enc = _Encoder(3, spec.enc_channels, k, rng, dtype)
            self.layout_enc = _Encoder(layout_in, spec.enc_channels, k, rng, dtype)
        elif spec.variant == "concat":
            self.image_enc = _Encoder(3 + layout_in, spec.enc_channels, k, rng, dtype)
        elif spec.variant == "image":
            self.image_enc = _Encoder(3, spec.enc_channels, k, rng, dtype)
        else:  # layout
            self.layout_enc = _Encoder(layout_in, spec.enc_channels, k, rng, dtype)
        cf = spec.enc_channels[-1]
        self.blocks = ModuleList(
            [ResBlock(cf, cf, k, rng, dtype) for _ in range(spec.res_blocks)])
        ups = []
        cin = cf
        for cout in [*reversed(spec.enc_channels[:-1])] + [spec.enc_channels[0]]:
            ups.append(UpBlock(cin, cout, k, rng, dtype))
            cin = cout
        self.ups = ModuleList(ups)
        self.head = Conv2d(cin, 3, k, 1, same_pad(k), rng, dtype)

    def forward(self, masked_image: Tensor, layout: Tensor | None,
                gate: np.ndarray | None, style: np.ndarray | None = None) -> Tensor:
        """Batched forward; returns images in [0,1] (rescaled tanh head).

        `style` is a per-sample (N, 3) color vector, tiled over the window and
        concatenated to the layout stream when the spec enables it.
        """
        spec = self.spec
        n, s = masked_image.shape[0], masked_image.shape[1]
        if s % spec.stride or masked_image.shape[2] % spec.stride:
            raise ValidationError(f"input size must be a multiple of {spec.stride}")
        if layout is None and spec.variant != "image":
            raise ValidationError(f"variant {spec.variant!r} needs a layout input")
        if gate is None and spec.variant == "twostream":
            raise ValidationError("twostream variant needs the feature gate")
        if spec.style:
            if style is None:
                style = np.zeros((n, 3), dtype=masked_image.dtype)
            tiled = np.broadcast_to(
                np.asarray(style, dtype=masked_image.dtype)[:, None, None, :],
                (n, s, s, 3))
            layout = T.concat([layout, Tensor(np.ascontiguousarray(tiled))], axis=-1)
        if spec.variant == "twostream":
            f = fuse_features(self.layout_enc(layout), self.image_enc(masked_image), gate)
        elif spec.variant == "concat":
            f = self.image_enc(T.concat([masked_image, layout], axis=-1))
        elif spec.variant == "image":
            f = self.image_enc(masked_image)
        else:
            f = self.layout_enc(layout)
        for block in self.blocks:
            f = block(f)
        for layer in self.ups:
            f = layer(f)
        out = T.tanh(self.head(f))
        return T.scale(out + 1.0, 0.5)


class PatchDiscriminator(Module):
    """70x70-footprint PatchGAN column; no normalization so patch logits stay
    local to their convolutional receptive field."""

    def __init__(self, cin, channels, k, rng, dtype):
        convs = []
        for i, cout in enumerate(channels):
            stride = 2 if i < len(channels) - 1 else 1
            convs.append(Conv2d(cin, cout, k, stride, 1, rng, dtype))
            cin = cout
        self.convs = ModuleList(convs)
        self.head = Conv2d(cin, 1, k, 1, 1, rng, dtype)

    def __call__(self, x: Tensor):
        taps = []
        for conv in self.convs:
            x = T.leaky_relu(conv(x), 0.2)
            taps.append(x)
        return self.head(x), taps


class MultiscaleDiscriminator(Module):
    def __init__(self, spec: MultiscaleDiscriminatorSpec, rng, dtype=np.float32):
        self.spec = spec
        cin = 3 + (spec.num_classes if spec.cond_layout else 0)
        self.scales_mods = ModuleList(
            [PatchDiscriminator(cin, spec.channels, spec.kernel, rng, dtype)
             for _ in range(spec.scales)])

    def forward(self, image: Tensor, layout: Tensor | None):
        """Returns per-scale (patch logits, ordered feature taps); scale i sees
        the input average-pooled 2^i times."""
        if self.spec.cond_layout:
            if layout is None:
                raise ValidationError("discriminator expects a conditioning layout")
            x = T.concat([image, layout], axis=-1)
        else:
            x = image
        outputs = []
        for i, disc in enumerate(self.scales_mods):
            if i > 0:
                x = T.avg_pool2d(x, 2)
            outputs.append(disc(x))
        return outputs


def build_image_generator(spec: ImageGeneratorSpec, seed: int,
                          dtype=np.float32) -> ImageGenerator:
    return ImageGenerator(spec, np.random.default_rng(seed), dtype)


def build_multiscale_discriminator(spec: MultiscaleDiscriminatorSpec, seed: int,
                                   dtype=np.float32) -> MultiscaleDiscriminator:
    return MultiscaleDiscriminator(spec, np.random.default_rng(seed), dtype)


def forward_image(model: ImageGenerator, inputs: ImageInputs,
                  style=None) -> np.ndarray:
    """Single-window inference; returns the (S, S, 3) manipulated window."""
    dtype = next(iter(model.params().values())).data.dtype
    img = Tensor(inputs.masked_image[None].astype(dtype))
    layout = Tensor(inputs.layout[None].astype(dtype))
    gate = inputs.feature_gate[None].astype(dtype)
    sv = None if style is None else np.asarray(style, dtype=dtype).reshape(1, 3)
    with T.no_grad():
        out = model.forward(img, layout, gate, sv)
    return out.data[0]


def multiscale_disc_forward(model: MultiscaleDiscriminator, image: np.ndarray,
                            layout: np.ndarray | None):
    """Single-sample pass: list of (logit grid, taps) per scale."""
    dtype = next(iter(model.params().values())).data.dtype
    img = Tensor(image[None].astype(dtype))
    lay = None if layout is None else Tensor(layout[None].astype(dtype))
    with T.no_grad():
        outs = model.forward(img, lay)
    return [(lg.data[0], [t.data[0] for t in taps]) for lg, taps in outs]


def feature_matching_loss(real_taps, fake_taps) -> Tensor:
    """Mean squared distance between discriminator features of real and fake
    inputs, averaged over elements, layers and scales."""
    terms = []
    for r, f in zip(real_taps, fake_taps):
        d = f - np.asarray(r.data if isinstance(r, Tensor) else r)
        terms.append(T.mean(T.mul(d, d)))
    if not terms:
        raise ValidationError("no feature taps to match")
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return T.scale(acc, 1.0 / len(terms))


def image_losses(fake: Tensor, real: np.ndarray, layout, disc: MultiscaleDiscriminator,
                 lambda_feature: float = 10.0) -> dict:
    """Generator-side objective: non-saturating adversarial + feature matching."""
    dtype = fake.dtype
    lay = None
    if disc.spec.cond_layout:
        lay_arr = np.asarray(layout.data if isinstance(layout, Tensor) else layout,
                             dtype=dtype)
        if lay_arr.ndim == 3:
            lay_arr = lay_arr[None]
        lay = Tensor(lay_arr)
    real_arr = np.asarray(real, dtype=dtype)
    if real_arr.ndim == 3:
        real_arr = real_arr[None]
    with T.no_grad():
        real_outs = disc.forward(Tensor(real_arr), lay)
    fake_outs = disc.forward(fake, lay)
    adv_terms, fm_real, fm_fake = [], [], []
    for (r_logits, r_taps), (f_logits, f_taps) in zip(real_outs, fake_outs):
        adv_terms.append(T.bce_with_logits_mean(f_logits, 1.0))
        fm_real.extend(r_taps)
        fm_fake.extend(f_taps)
    adv = adv_terms[0]
    for t in adv_terms[1:]:
        adv = adv + t
    adv = T.scale(adv, 1.0 / len(adv_terms))
    feat = feature_matching_loss(fm_real, fm_fake)
    total = adv + T.scale(feat, lambda_feature)
    return {"total": total, "adv": adv, "feat": feat}


def multiscale_disc_losses(disc: MultiscaleDiscriminator, real, fake, layout) -> dict:
    """Discriminator side over both scales; fake images are detached."""
    dtype = next(iter(disc.params().values())).data.dtype
    lay = None
    if disc.spec.cond_layout:
        lay_arr = np.asarray(layout.data if isinstance(layout, Tensor) else layout,
                             dtype=dtype)
        if lay_arr.ndim == 3:
            lay_arr = lay_arr[None]
        lay = Tensor(lay_arr)
    real_arr = np.asarray(real.data if isinstance(real, Tensor) else real, dtype=dtype)
    fake_arr = np.asarray(fake.data if isinstance(fake, Tensor) else fake, dtype=dtype)
    if real_arr.ndim == 3:
        real_arr = real_arr[None]
    if fake_arr.ndim == 3:
        fake_arr = fake_arr[None]
    real_outs = disc.forward(Tensor(real_arr), lay)
    fake_outs = disc.forward(Tensor(fake_arr), lay)
    terms = []
    for (r_logits, _), (f_logits, _) in zip(real_outs, fake_outs):
        terms.append(T.bce_with_logits_mean(r_logits, 1.0) +
                     T.bce_with_logits_mean(f_logits, 0.0))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total = T.scale(total, 0.5 / len(terms))
    return {"total": total}
