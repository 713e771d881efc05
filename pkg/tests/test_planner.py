import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentscore.errors import ConfigError
from latentscore.gradcheck import max_relative_error
from latentscore.model import ModelConfig, MusicModel
from latentscore.nn import prefix_causal_mask
from latentscore.planner import FsqLayer, ProjectionLayer
from latentscore.tensor import Rng, ShapeError, Tensor

CFG = ModelConfig(dim=16, heads=2, bottleneck_dim=8, semantic_layers=1,
                  residual_layers=1, history_layers=1, denoiser_layers=1,
                  vocab=16, patch_len=4, channels=4, with_video=True, video_dim=6)


@pytest.fixture(scope="module")
def model():
    return MusicModel.build(CFG, seed=42)


def _zero_residual(model):
    model.planner.residual.out_proj.weight.data[:] = 0.0
    model.planner.residual.out_proj.bias.data[:] = 0.0


# ---------------------------------------------------------------------------
# video projection


def test_project_video_zero_features_zero_bias(model):
    proj = model.planner.projection
    saved = proj.linear.bias.data.copy()
    proj.linear.bias.data[:] = 0.0
    out = model.planner.project_video(np.zeros((3, CFG.video_dim)))
    assert np.array_equal(out.data, np.zeros((3, CFG.dim)))
    proj.linear.bias.data[:] = saved


def test_project_video_identity_weights():
    rng = Rng(0)
    proj = ProjectionLayer(rng, video_dim=5, dim=5)
    proj.linear.weight.data[:] = np.eye(5)
    proj.linear.bias.data[:] = 0.0
    feats = Rng(1).normal((4, 5))
    assert np.allclose(proj(feats).data, feats, atol=1e-15)


def test_project_video_gradient(model):
    proj = model.planner.projection
    feats = Rng(2).normal((3, CFG.video_dim))
    err = max_relative_error(
        lambda: proj(feats).sum(), [proj.linear.weight, proj.linear.bias]
    )
    assert err <= 1e-4


def test_project_video_rejects_wrong_dim(model):
    with pytest.raises(ShapeError):
        model.planner.project_video(np.zeros((3, CFG.video_dim + 1)))


def test_text_only_model_rejects_video():
    text_model = MusicModel.build(ModelConfig(dim=16, heads=2, vocab=16,
                                              patch_len=4, channels=4), seed=0)
    with pytest.raises(ConfigError):
        text_model.planner.project_video(np.zeros((2, 12)))


# ---------------------------------------------------------------------------
# history encoder


def test_empty_history_gives_empty_embeddings(model):
    out = model.planner.encode_history(np.zeros((0, CFG.patch_len, CFG.channels)))
    assert out.shape == (0, CFG.dim)
    ep = model.plan_sequence(np.array([1, 2, 3]), None, np.zeros((0, 4, 4)))
    assert ep.layout.history_len == 0
    assert ep.seq.shape[0] == 3  # l + t with t=0


def test_identical_patches_embed_identically(model):
    patch = Rng(3).normal((CFG.patch_len, CFG.channels))
    out = model.planner.encode_history(np.stack([patch, patch]))
    assert np.allclose(out.data[0], out.data[1], atol=1e-12)


def test_history_embedding_sensitive_to_channel_permutation(model):
    rng = Rng(4)
    diffs = []
    for _ in range(5):
        patch = rng.normal((CFG.patch_len, CFG.channels))
        permuted = patch[:, ::-1].copy()
        a = model.planner.encode_history(patch[None])
        b = model.planner.encode_history(permuted[None])
        diffs.append(np.linalg.norm(a.data - b.data))
    assert min(diffs) > 1e-6


# ---------------------------------------------------------------------------
# fusion


def test_fuse_lengths(model):
    f_v = Tensor(Rng(5).normal((2, CFG.dim)))
    f_t = Tensor(Rng(6).normal((3, CFG.dim)))
    f_a = Tensor(np.zeros((0, CFG.dim)))
    fused, layout = model.planner.fuse(f_v, f_t, f_a)
    assert fused.shape == (5, CFG.dim)
    assert (layout.video_len, layout.text_len, layout.history_len) == (2, 3, 0)
    assert layout.prefix_len == 5


def test_fuse_without_video(model):
    f_t = Tensor(Rng(7).normal((3, CFG.dim)))
    f_a = Tensor(Rng(8).normal((2, CFG.dim)))
    fused, layout = model.planner.fuse(None, f_t, f_a)
    assert fused.shape == (5, CFG.dim)
    assert layout.video_len == 0 and layout.history_len == 2


def test_segment_boundaries_recoverable(model):
    ep = model.plan_sequence(
        np.array([1, 2, 3]),
        Rng(9).normal((2, CFG.video_dim)),
        Rng(10).normal((1, CFG.patch_len, CFG.channels)),
    )
    assert (ep.layout.video_len, ep.layout.text_len, ep.layout.history_len) == (2, 3, 1)
    assert ep.seq.shape == (6, CFG.dim)
    assert ep.prefix_for_step(1).shape == (5, CFG.dim)
    assert ep.prefix_for_step(2).shape == (6, CFG.dim)
    with pytest.raises(ValueError):
        ep.prefix_for_step(3)


# ---------------------------------------------------------------------------
# scalar quantization


def test_fsq_grid_examples():
    fsq = FsqLayer(Rng(11), dim=8, bottleneck_dim=4, step=0.25, levels=4)
    z = Tensor(np.array([[0.26, 10.0, 0.0, -0.9]]))
    q = fsq.quantize(z)
    assert np.array_equal(q.data, [[0.25, 1.0, 0.0, -1.0]])


def test_fsq_grid_membership_and_error_bound():
    fsq = FsqLayer(Rng(12), dim=8, bottleneck_dim=4, step=0.25, levels=4)
    z = Tensor(Rng(13).normal((500, 4)) * 2)
    q = fsq.quantize(z).data
    grid = fsq.grid
    assert np.all(np.isin(q, grid))
    inside = np.abs(z.data) <= fsq.levels * fsq.step
    assert np.all(np.abs(q[inside] - z.data[inside]) <= fsq.step / 2 + 1e-12)


def test_fsq_straight_through_jacobian_is_identity():
    fsq = FsqLayer(Rng(14), dim=8, bottleneck_dim=4)
    z = Tensor(Rng(15).normal((7, 4)), requires_grad=True)
    fsq.quantize(z).sum().backward()
    assert np.array_equal(z.grad, np.ones((7, 4)))


def test_fsq_validates_config():
    with pytest.raises(ConfigError):
        FsqLayer(Rng(0), 8, 4, step=-1.0)
    with pytest.raises(ConfigError):
        FsqLayer(Rng(0), 8, 4, levels=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_fsq_bottleneck_snap_property(seed):
    fsq = FsqLayer(Rng(1), dim=8, bottleneck_dim=4, step=0.25, levels=4)
    z = Rng(seed).normal((5, 4)) * 3
    q = fsq.quantize(Tensor(z)).data
    assert np.all(np.isin(q, fsq.grid))
    assert np.max(np.abs(q)) <= fsq.levels * fsq.step


# ---------------------------------------------------------------------------
# planning embedding


def test_plan_equals_quantized_when_residual_zeroed(model):
    _zero_residual(model)
    ids = np.array([4, 7, 1])
    history = Rng(16).normal((1, CFG.patch_len, CFG.channels))
    f_t = model.planner.semantic.embed_tokens(ids)
    f_a = model.planner.encode_history(history)
    fused, layout = model.planner.fuse(None, f_t, f_a)
    mask = model.planner.mask_for(layout)
    semantic_seq = model.planner.semantic(fused, mask)
    e_d = model.planner.fsq(semantic_seq)
    e_p = model.planner.plan(semantic_seq, mask)
    assert np.array_equal(e_p.data, e_d.data)  # bit-exact residual identity


def test_plan_preserves_shape(model):
    ep = model.plan_sequence(
        np.array([1, 2, 3]),
        Rng(17).normal((2, CFG.video_dim)),
        Rng(18).normal((1, CFG.patch_len, CFG.channels)),
    )
    assert ep.seq.shape == (3 + 2 + 1, CFG.dim)


def test_quantization_residual_bounded(model):
    # inside the clip range, |bottleneck - quantized| <= step/2
    fsq = model.planner.fsq
    x = Tensor(Rng(19).normal((40, CFG.dim)))
    z = fsq.bottleneck(x)
    q = fsq.quantize(z)
    inside = np.abs(z.data) <= fsq.levels * fsq.step
    assert np.all(np.abs((z.data - q.data)[inside]) <= fsq.step / 2 + 1e-12)


# ---------------------------------------------------------------------------
# causality


def test_prefix_causal_mask_shape_rules():
    mask = prefix_causal_mask(2, 5)
    # prefix bidirectional, visible to all
    assert mask[:, :2].all()
    # prefix rows never see the suffix
    assert not mask[0, 2:].any()
    # suffix rows are causal among themselves
    assert mask[3, 2] and mask[3, 3] and not mask[3, 4]
    with pytest.raises(ValueError):
        prefix_causal_mask(6, 5)


def test_perturbing_history_patch_only_affects_later_positions(model):
    rng = Rng(20)
    ids = np.array([3, 1, 5])
    history = rng.normal((3, CFG.patch_len, CFG.channels))
    base = model.plan_sequence(ids, None, history).seq.data
    perturbed = history.copy()
    perturbed[1] += 0.5
    out = model.plan_sequence(ids, None, perturbed).seq.data
    l = len(ids)
    # prefix and history positions 0..1 (patches 1..2) are bit-identical
    assert np.array_equal(out[: l + 1], base[: l + 1])
    # the perturbed patch's own position and later ones move
    assert np.abs(out[l + 1 :] - base[l + 1 :]).max() > 1e-8


def test_planning_prefix_matches_shorter_pass(model):
    # the full-sequence pass restricted to a prefix equals the pass run on
    # just that prefix (the property the trainer exploits)
    rng = Rng(21)
    ids = np.array([2, 9, 4])
    history = rng.normal((2, CFG.patch_len, CFG.channels))
    full = model.plan_sequence(ids, None, history).seq.data
    short = model.plan_sequence(ids, None, history[:1]).seq.data
    assert np.allclose(full[: len(ids) + 1], short, atol=1e-12)
