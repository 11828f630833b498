"""Image generator: gating, variants, receptive fields, losses, gradients."""

import numpy as np
import pytest

from semedit import imagegen as IG
from semedit.nn import tensor as T
from semedit.nn.tensor import Tensor
from semedit.scene import ImageInputs, ValidationError

from helpers import check_gradients

C = 4


def mini_gen_spec(variant="twostream", style=False, c=2):
    return IG.ImageGeneratorSpec(num_classes=c, enc_channels=(4, 6), res_blocks=1,
                                 variant=variant, style=style)


def mini_disc_spec(c=2, cond=True):
    return IG.MultiscaleDiscriminatorSpec(num_classes=c, channels=(4, 8), cond_layout=cond)


def rand_inputs(s=16, c=C, seed=0, stride=8):
    rng = np.random.default_rng(seed)
    img = rng.random((s, s, 3)).astype(np.float32)
    img[4:10, 6:12] = 0.0
    layout = rng.dirichlet(np.ones(c), size=(s, s)).astype(np.float32)
    gate = np.zeros((s // stride, s // stride, 1), dtype=np.float32)
    gate[0, 1] = 1.0
    return ImageInputs(masked_image=img, layout=layout, feature_gate=gate)


def test_fuse_features_identities_and_oracle():
    rng = np.random.default_rng(0)
    a = Tensor(rng.random((1, 2, 2, 3)))
    b = Tensor(rng.random((1, 2, 2, 3)))
    zeros = np.zeros((1, 2, 2, 1))
    ones = np.ones((1, 2, 2, 1))
    assert np.array_equal(IG.fuse_features(a, b, zeros).data, b.data)
    assert np.array_equal(IG.fuse_features(a, b, ones).data, a.data)
    gate = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 2, 2, 1)
    fused = IG.fuse_features(a, b, gate).data
    for i in range(2):
        for j in range(2):
            want = a.data[0, i, j] if gate[0, i, j, 0] == 1 else b.data[0, i, j]
            assert np.array_equal(fused[0, i, j], want)


def test_fuse_partition_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = Tensor(rng.normal(0, 1, (1, 3, 3, 4)))
        b = Tensor(rng.normal(0, 1, (1, 3, 3, 4)))
        g = (rng.random((1, 3, 3, 1)) > 0.5).astype(np.float64)
        lhs = IG.fuse_features(a, b, g).data + IG.fuse_features(b, a, g).data
        assert np.allclose(lhs, a.data + b.data, atol=1e-12)


def test_fuse_shape_mismatch_rejected():
    a = Tensor(np.zeros((1, 2, 2, 3)))
    b = Tensor(np.zeros((1, 2, 2, 4)))
    with pytest.raises(ValidationError):
        IG.fuse_features(a, b, np.zeros((1, 2, 2, 1)))


def test_forward_range_and_determinism():
    model = IG.build_image_generator(IG.ImageGeneratorSpec.desk_scale(C), seed=0)
    inputs = rand_inputs()
    out1 = IG.forward_image(model, inputs)
    out2 = IG.forward_image(model, inputs)
    assert out1.shape == (16, 16, 3)
    assert out1.min() >= 0.0 and out1.max() <= 1.0
    assert np.array_equal(out1, out2)


def test_image_variant_ignores_layout():
    model = IG.build_image_generator(
        IG.ImageGeneratorSpec.desk_scale(C, variant="image"), seed=1)
    inputs = rand_inputs(seed=2)
    other_layout = np.roll(inputs.layout, 1, axis=-1)
    a = IG.forward_image(model, inputs)
    b = IG.forward_image(model, ImageInputs(inputs.masked_image, other_layout,
                                            inputs.feature_gate))
    assert np.array_equal(a, b)


def test_layout_variant_ignores_image():
    model = IG.build_image_generator(
        IG.ImageGeneratorSpec.desk_scale(C, variant="layout"), seed=1)
    inputs = rand_inputs(seed=3)
    other_img = 1.0 - inputs.masked_image
    a = IG.forward_image(model, inputs)
    b = IG.forward_image(model, ImageInputs(other_img, inputs.layout,
                                            inputs.feature_gate))
    assert np.array_equal(a, b)


def test_twostream_gate_zero_depends_only_on_image():
    model = IG.build_image_generator(IG.ImageGeneratorSpec.desk_scale(C), seed=4)
    inputs = rand_inputs(seed=5)
    gate0 = np.zeros_like(inputs.feature_gate)
    a = IG.forward_image(model, ImageInputs(inputs.masked_image, inputs.layout, gate0))
    b = IG.forward_image(model, ImageInputs(inputs.masked_image,
                                            np.roll(inputs.layout, 1, -1), gate0))
    assert np.array_equal(a, b)


def test_style_vector_sensitivity():
    model = IG.build_image_generator(
        IG.ImageGeneratorSpec.desk_scale(C, style=True), seed=6)
    inputs = rand_inputs(seed=7)
    a = IG.forward_image(model, inputs, style=(1.0, 0.0, 0.0))
    b = IG.forward_image(model, inputs, style=(0.0, 0.0, 1.0))
    assert not np.array_equal(a, b)
    assert np.abs(a - b).max() > 1e-6


def test_concat_variant_runs():
    model = IG.build_image_generator(
        IG.ImageGeneratorSpec.desk_scale(C, variant="concat"), seed=8)
    out = IG.forward_image(model, rand_inputs(seed=9))
    assert out.shape == (16, 16, 3)


def receptive_footprint(spec_channels, input_size, scale, c=C, seed=0):
    """Gradient-connectivity oracle: bbox of nonzero input gradient for one
    central patch logit."""
    spec = IG.MultiscaleDiscriminatorSpec(num_classes=c, channels=spec_channels)
    disc = IG.build_multiscale_discriminator(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    img = Tensor(rng.random((1, input_size, input_size, 3)), requires_grad=True)
    lay = Tensor(rng.dirichlet(np.ones(c), size=(1, input_size, input_size)))
    outs = disc.forward(img, lay)
    logits = outs[scale][0]
    gh, gw = logits.shape[1], logits.shape[2]
    mask = np.zeros(logits.shape)
    mask[0, gh // 2, gw // 2, 0] = 1.0
    T.sum_all(T.mul(logits, mask)).backward()
    g = np.abs(img.grad[0]).sum(axis=-1)
    rows = np.where(g.sum(axis=1) > 0)[0]
    cols = np.where(g.sum(axis=0) > 0)[0]
    return rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1


@pytest.mark.slow
def test_receptive_field_scale1_is_70():
    h, w = receptive_footprint((16, 32, 64, 128), input_size=128, scale=0)
    assert (h, w) == (70, 70)


@pytest.mark.slow
def test_receptive_field_scale2_is_140():
    h, w = receptive_footprint((16, 32, 64, 128), input_size=256, scale=1)
    assert (h, w) == (140, 140)


def test_disc_outputs_deterministic_and_ordered():
    spec = IG.MultiscaleDiscriminatorSpec.desk_scale(C)
    disc = IG.build_multiscale_discriminator(spec, seed=3)
    rng = np.random.default_rng(4)
    img = rng.random((64, 64, 3)).astype(np.float32)
    lay = rng.dirichlet(np.ones(C), size=(64, 64)).astype(np.float32)
    outs1 = IG.multiscale_disc_forward(disc, img, lay)
    outs2 = IG.multiscale_disc_forward(disc, img, lay)
    assert len(outs1) == 2
    for (l1, t1), (l2, t2) in zip(outs1, outs2):
        assert np.array_equal(l1, l2)
        assert len(t1) == len(spec.channels)
        for a, b in zip(t1, t2):
            assert np.array_equal(a, b)


def test_feature_matching_single_tap_oracle():
    r = Tensor(np.array([[[[3.0]]]]))
    f = Tensor(np.array([[[[1.0]]]]))
    assert IG.feature_matching_loss([r], [f]).item() == 4.0


def test_feature_matching_zero_for_identical_images():
    disc = IG.build_multiscale_discriminator(mini_disc_spec(C), seed=5)
    rng = np.random.default_rng(6)
    img = rng.random((1, 16, 16, 3)).astype(np.float32)
    lay = rng.dirichlet(np.ones(C), size=(1, 16, 16)).astype(np.float32)
    losses = IG.image_losses(Tensor(img), img, lay, disc)
    assert losses["feat"].item() == 0.0


def test_image_losses_combination():
    disc = IG.build_multiscale_discriminator(mini_disc_spec(C), seed=7)
    rng = np.random.default_rng(8)
    fake = Tensor(rng.random((1, 16, 16, 3)).astype(np.float32))
    real = rng.random((1, 16, 16, 3)).astype(np.float32)
    lay = rng.dirichlet(np.ones(C), size=(1, 16, 16)).astype(np.float32)
    d = IG.image_losses(fake, real, lay, disc, lambda_feature=10.0)
    assert abs(d["total"].item() - (d["adv"].item() + 10 * d["feat"].item())) < 1e-5


@pytest.mark.slow
def test_image_generator_loss_gradients_match_finite_differences():
    gen = IG.ImageGenerator(mini_gen_spec(), np.random.default_rng(0), np.float64)
    disc = IG.MultiscaleDiscriminator(mini_disc_spec(), np.random.default_rng(1), np.float64)
    disc.set_requires_grad(False)
    rng = np.random.default_rng(2)
    img = rng.random((1, 16, 16, 3))
    lay = rng.dirichlet(np.ones(2), size=(1, 16, 16))
    gate = (rng.random((1, 4, 4, 1)) > 0.5).astype(np.float64)
    real = rng.random((1, 16, 16, 3))

    def loss():
        fake = gen.forward(Tensor(img), Tensor(lay), gate)
        return IG.image_losses(fake, real, lay, disc)["total"]

    check_gradients(loss, dict(gen.named_params()), rtol=1e-4)


@pytest.mark.slow
def test_image_discriminator_loss_gradients_match_finite_differences():
    disc = IG.MultiscaleDiscriminator(mini_disc_spec(), np.random.default_rng(3), np.float64)
    rng = np.random.default_rng(4)
    real = rng.random((1, 16, 16, 3))
    fake = rng.random((1, 16, 16, 3))
    lay = rng.dirichlet(np.ones(2), size=(1, 16, 16))

    def loss():
        return IG.multiscale_disc_losses(disc, real, fake, lay)["total"]

    check_gradients(loss, dict(disc.named_params()), rtol=1e-4)
