"""Structure generator: shapes, composition rule, losses, gradient checks."""

import numpy as np
import pytest

from semedit import structure as S
from semedit.nn import tensor as T
from semedit.nn.tensor import Tensor
from semedit.scene import StructureInputs

from helpers import check_gradients

C = 4


def mini_gen_spec(c=2):
    return S.StructureGeneratorSpec(num_classes=c, down_channels=(4,), down_filters=(3,),
                                    res_blocks=1, res_channels=6, res_filter=3)


def mini_disc_spec(c=2):
    return S.StructureDiscriminatorSpec(num_classes=c, channels=(4, 8))


def small_inputs(s=16, c=C, seed=0):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, c, size=(s, s))
    layout = np.eye(c, dtype=np.float32)[idx]
    mask = np.zeros((s, s, 1), dtype=np.float32)
    mask[4:10, 5:12] = 1.0
    masked = layout.copy()
    masked[4:10, 5:12] = 0.0
    masked[4:10, 5:12, 2] = 1.0
    return StructureInputs(masked_layout=masked, box_mask=mask)


def test_build_determinism():
    spec = S.StructureGeneratorSpec.desk_scale(C)
    a = S.build_structure_generator(spec, seed=7)
    b = S.build_structure_generator(spec, seed=7)
    for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    c = S.build_structure_generator(spec, seed=8)
    assert not np.array_equal(a.params()["downs.0.conv.w"].data,
                              c.params()["downs.0.conv.w"].data)


def count_structure_params(spec: S.StructureGeneratorSpec) -> int:
    """Analytic parameter count, layer by layer (independent of the model code)."""
    total = 0
    cin = spec.num_classes + 1
    for cout, k in zip(spec.down_channels, spec.down_filters):
        total += k * k * cin * cout + cout   # conv w + b
        total += 2 * cout                    # instance norm gamma/beta
        cin = cout
    for _ in range(spec.res_blocks):
        cout = spec.res_channels
        total += spec.res_filter ** 2 * cin * cout + cout + 2 * cout
        total += spec.res_filter ** 2 * cout * cout + cout + 2 * cout
        if cin != cout:
            total += cin * cout              # 1x1 projection, no bias
        cin = cout
    for cout, k in zip(reversed(spec.down_channels), reversed(spec.down_filters)):
        total += k * k * cout * cin + cout + 2 * cout
        cin = cout
    total += 9 * cin * 1 + 1                 # obj head, 3x3
    total += 9 * cin * spec.num_classes + spec.num_classes  # ctx head
    return total


def test_param_count_matches_analytic_oracle():
    for spec in (S.StructureGeneratorSpec.desk_scale(C),
                 S.StructureGeneratorSpec(num_classes=7),
                 mini_gen_spec()):
        model = S.build_structure_generator(spec, seed=0)
        actual = sum(p.data.size for _, p in model.named_params())
        assert actual == count_structure_params(spec), spec


def test_class_count_changes_only_first_and_last_layers():
    a = S.build_structure_generator(S.StructureGeneratorSpec.desk_scale(2), seed=0)
    b = S.build_structure_generator(S.StructureGeneratorSpec.desk_scale(5), seed=0)
    sa = {n: p.data.shape for n, p in a.named_params()}
    sb = {n: p.data.shape for n, p in b.named_params()}
    assert set(sa) == set(sb)
    diff = {n for n in sa if sa[n] != sb[n]}
    assert diff == {"downs.0.conv.w", "ctx_head.w", "ctx_head.b"}


def test_forward_invariants_and_shapes():
    spec = S.StructureGeneratorSpec.desk_scale(C)
    model = S.build_structure_generator(spec, seed=1)
    out = S.forward_structure(model, small_inputs())
    assert out.obj_mask.shape == (16, 16, 1)
    assert out.ctx_layout.shape == (16, 16, C)
    assert out.obj_mask.min() >= 0 and out.obj_mask.max() <= 1
    assert np.abs(out.ctx_layout.sum(-1) - 1).max() < 1e-5
    # doubling the window doubles the output (fully convolutional)
    out2 = S.forward_structure(model, small_inputs(s=32))
    assert out2.obj_mask.shape == (32, 32, 1)


def test_forward_rejects_misaligned_size():
    model = S.build_structure_generator(S.StructureGeneratorSpec.desk_scale(C), seed=1)
    with pytest.raises(Exception):
        S.forward_structure(model, small_inputs(s=12))


def compose_reference(obj, ctx, layout, class_id):
    """Scalar-loop implementation of the composition rule."""
    s1, s2, c = layout.shape
    out = np.zeros_like(layout, dtype=np.float64)
    for i in range(s1):
        for j in range(s2):
            if class_id == 0:
                out[i, j] = ctx[i, j]
            else:
                m = obj[i, j, 0]
                for k in range(c):
                    out[i, j, k] = (1.0 - m) * layout[i, j, k]
                out[i, j, class_id - 1] += m
    return out


def test_compose_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    for _ in range(200):
        s = int(rng.integers(1, 9))
        c = int(rng.integers(2, 7))
        obj = rng.random((s, s, 1))
        ctx = rng.dirichlet(np.ones(c), size=(s, s))
        layout = rng.dirichlet(np.ones(c), size=(s, s))
        cid = int(rng.integers(0, c + 1))
        out = S.compose_layout(S.StructureOutputs(obj, ctx), layout, cid)
        ref = compose_reference(obj, ctx, layout, cid)
        assert np.array_equal(out, ref) or np.abs(out - ref).max() == 0.0


def test_compose_trivial_cases():
    layout = np.zeros((2, 2, 2))
    layout[..., 0] = 1.0
    ctx = np.full((2, 2, 2), 0.5)
    zero = np.zeros((2, 2, 1))
    one = np.ones((2, 2, 1))
    out = S.compose_layout(S.StructureOutputs(zero, ctx), layout, 2)
    assert np.array_equal(out, layout)
    out = S.compose_layout(S.StructureOutputs(one, ctx), layout, 2)
    assert np.all(out[..., 1] == 1) and np.all(out[..., 0] == 0)
    # single pixel, M=(1,0), m=0.5, c=2 -> (0.5, 0.5)
    out = S.compose_layout(
        S.StructureOutputs(np.full((1, 1, 1), 0.5), ctx[:1, :1]), layout[:1, :1], 2)
    assert np.allclose(out[0, 0], [0.5, 0.5])


def test_compose_deletion_ignores_object_mask():
    rng = np.random.default_rng(3)
    ctx = rng.dirichlet(np.ones(3), size=(4, 4))
    layout = rng.dirichlet(np.ones(3), size=(4, 4))
    a = S.compose_layout(S.StructureOutputs(np.zeros((4, 4, 1)), ctx), layout, 0)
    b = S.compose_layout(S.StructureOutputs(rng.random((4, 4, 1)), ctx), layout, 0)
    assert np.array_equal(a, b) and np.array_equal(a, ctx)


def test_compose_preserves_normalization():
    rng = np.random.default_rng(4)
    for _ in range(50):
        c = int(rng.integers(2, 6))
        obj = rng.random((5, 5, 1))
        layout = rng.dirichlet(np.ones(c), size=(5, 5))
        out = S.compose_layout(
            S.StructureOutputs(obj, layout), layout, int(rng.integers(1, c + 1)))
        assert np.abs(out.sum(-1) - 1).max() < 1e-6


def test_compose_hard_mask_idempotent():
    rng = np.random.default_rng(5)
    layout = rng.dirichlet(np.ones(3), size=(6, 6))
    hard = (rng.random((6, 6, 1)) > 0.5).astype(np.float64)
    ctx = layout.copy()
    once = S.compose_layout(S.StructureOutputs(hard, ctx), layout, 2)
    twice = S.compose_layout(S.StructureOutputs(hard, ctx), once, 2)
    assert np.allclose(once, twice, atol=1e-12)


def disc_grid_side(size, channels, k=4):
    """Conv-arithmetic oracle for the patch-logit grid side length."""
    s = size
    for i in range(len(channels)):
        stride = 2 if i < len(channels) - 1 else 1
        s = (s + 2 * 1 - k) // stride + 1 if stride == 2 else s + 2 * 1 - k + 1
    return s + 2 * 1 - k + 1  # head conv


def test_disc_forward_deterministic_and_patch_count():
    spec = S.StructureDiscriminatorSpec(num_classes=C)
    disc = S.build_structure_discriminator(spec, seed=2)
    rng = np.random.default_rng(0)
    mask = rng.random((64, 64, 1)).astype(np.float32)
    cond = rng.random((64, 64, C)).astype(np.float32)
    logits1, taps1 = S.structure_disc_forward(disc, mask, cond)
    logits2, _ = S.structure_disc_forward(disc, mask, cond)
    assert np.array_equal(logits1, logits2)
    side = disc_grid_side(64, spec.channels, spec.kernel)
    assert logits1.shape == (side, side, 1)
    assert len(taps1) == len(spec.channels)


def test_disc_sensitive_to_conditioning():
    disc = S.build_structure_discriminator(mini_disc_spec(C), seed=3)
    disc.to_dtype(np.float64)
    rng = np.random.default_rng(1)
    mask = Tensor(rng.random((1, 16, 16, 1)))
    cond = Tensor(rng.random((1, 16, 16, C)), requires_grad=True)
    logits, _ = disc.forward(mask, cond)
    T.sum_all(logits).backward()
    assert cond.grad is not None and np.abs(cond.grad).max() > 0


def test_structure_losses_perfect_prediction_zero_recon():
    disc = S.build_structure_discriminator(mini_disc_spec(2), seed=0)
    gt = (np.random.default_rng(0).random((8, 8, 1)) > 0.5).astype(np.float32)
    mbar = np.zeros((8, 8, 2), dtype=np.float32)
    mbar[..., 0] = 1.0
    out = S.StructureOutputs(
        obj_mask=gt, ctx_layout=mbar,
        obj_logits=np.where(gt > 0, 500.0, -500.0).astype(np.float32),
        ctx_logits=(mbar * 1000.0).astype(np.float32))
    losses = S.structure_losses(out, gt, mbar, disc)
    assert losses["recon_obj"].item() < 1e-12
    assert losses["recon_ctx"].item() < 1e-12


def test_structure_losses_uniform_ctx_costs_ln2():
    disc = S.build_structure_discriminator(mini_disc_spec(2), seed=0)
    mbar = np.zeros((8, 8, 2), dtype=np.float32)
    mbar[..., 1] = 1.0
    out = S.StructureOutputs(
        obj_mask=np.zeros((8, 8, 1), np.float32),
        ctx_layout=np.full((8, 8, 2), 0.5, np.float32),
        obj_logits=np.zeros((8, 8, 1), np.float32),
        ctx_logits=np.zeros((8, 8, 2), np.float32))
    losses = S.structure_losses(out, np.zeros((8, 8, 1), np.float32), mbar, disc)
    assert abs(losses["recon_ctx"].item() - np.log(2)) < 1e-6


def test_structure_losses_combination_and_defaults():
    rng = np.random.default_rng(9)
    disc = S.build_structure_discriminator(mini_disc_spec(2), seed=1)
    gt = (rng.random((8, 8, 1)) > 0.5).astype(np.float32)
    mbar = np.eye(2, dtype=np.float32)[rng.integers(0, 2, (8, 8))]
    out = S.StructureOutputs(None, None,
                             obj_logits=rng.normal(0, 1, (8, 8, 1)).astype(np.float32),
                             ctx_logits=rng.normal(0, 1, (8, 8, 2)).astype(np.float32))
    d = S.structure_losses(out, gt, mbar, disc)
    want = d["adv"].item() + 10 * d["recon_obj"].item() + 10 * d["recon_ctx"].item()
    assert abs(d["total"].item() - want) < 1e-5


def _mini_setup(seed=0):
    rng = np.random.default_rng(seed)
    gen = S.build_structure_generator(mini_gen_spec(), seed=seed, dtype=np.float64)
    disc = S.build_structure_discriminator(mini_disc_spec(), seed=seed + 1,
                                           dtype=np.float64)
    mbar = rng.dirichlet(np.ones(2), size=(1, 8, 8)).astype(np.float64)
    bmask = np.zeros((1, 8, 8, 1))
    bmask[:, 2:6, 2:6] = 1.0
    gt = (rng.random((1, 8, 8, 1)) > 0.5).astype(np.float64)
    return gen, disc, mbar, bmask, gt


@pytest.mark.slow
def test_generator_loss_gradients_match_finite_differences():
    gen, disc, mbar, bmask, gt = _mini_setup()
    disc.set_requires_grad(False)

    def loss():
        obj_logits, ctx_logits = gen.forward(Tensor(mbar), Tensor(bmask))
        out = S.StructureOutputs(None, None, obj_logits=obj_logits, ctx_logits=ctx_logits)
        return S.structure_losses(out, gt, mbar, disc)["total"]

    check_gradients(loss, dict(gen.named_params()), rtol=1e-4)


@pytest.mark.slow
def test_discriminator_loss_gradients_match_finite_differences():
    gen, disc, mbar, bmask, gt = _mini_setup(seed=2)
    rng = np.random.default_rng(11)
    fake = rng.random((1, 8, 8, 1))

    def loss():
        return S.structure_disc_losses(disc, gt, fake, mbar)["total"]

    check_gradients(loss, dict(disc.named_params()), rtol=1e-4)
