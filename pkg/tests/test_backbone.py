import numpy as np
import pytest

from ascent_vit.backbone import Backbone, BackboneConfig, attention, patchify
from ascent_vit.layers import ConfigError
from ascent_vit.numerics import Rng, Tensor, check_parameter_groups

from oracles import attention_loop


@pytest.fixture
def cfg():
    return BackboneConfig()


@pytest.fixture
def images():
    return np.random.default_rng(3).uniform(size=(2, 1, 32, 32))


def test_patchify_desk_counts(cfg, images):
    p = patchify(Tensor(images[0]), cfg)
    assert p.shape == (64, 16)
    assert patchify(Tensor(images), cfg).shape == (2, 64, 16)


def test_patchify_reference_preset_counts():
    cfg = BackboneConfig.reference()
    p = patchify(Tensor(np.zeros((3, 224, 224))), cfg)
    assert p.shape == (196, 3 * 16 * 16)
    assert cfg.num_patches + 1 == 197


def test_patchify_order_is_row_major_channel_major():
    cfg = BackboneConfig(image_size=4, channels=2, patch_size=2, dim=4, heads=1)
    img = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    p = patchify(Tensor(img), cfg).data
    # second patch = top row, right half; channel 0 block first
    np.testing.assert_array_equal(p[1], [2, 3, 6, 7, 18, 19, 22, 23])


def test_constant_image_gives_identical_patches(cfg):
    p = patchify(Tensor(np.full((1, 32, 32), 0.3)), cfg).data
    assert np.all(p == p[0])


@pytest.mark.parametrize("kwargs", [dict(image_size=30), dict(dim=66), dict(depth=-1)])
def test_bad_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        BackboneConfig(**kwargs)


def test_patchify_rejects_wrong_extent(cfg):
    with pytest.raises(ConfigError):
        patchify(Tensor(np.zeros((1, 28, 28))), cfg)


def test_embed_with_zero_weights_and_positions(cfg, images):
    bb = Backbone(cfg, Rng(0))
    bb.patch_embed.weight.data[...] = 0.0
    bb.patch_embed.bias.data[...] = 0.25
    bb.pos_embed.data[...] = 0.0
    z = bb.embed(patchify(Tensor(images), cfg)).data
    assert z.shape == (2, 65, 64)
    np.testing.assert_array_equal(z[:, 0], np.broadcast_to(bb.cls_token.data[0], (2, 64)))
    assert np.all(z[:, 1:] == 0.25)


def test_embed_deterministic_and_single_image(cfg, images):
    bb = Backbone(cfg, Rng(0))
    a = bb.embed(patchify(Tensor(images[0]), cfg)).data
    b = bb.embed(patchify(Tensor(images[0].copy()), cfg)).data
    assert a.shape == (65, 64)
    np.testing.assert_array_equal(a, b)


def test_attention_identical_keys_give_mean_of_values():
    r = np.random.default_rng(0)
    q = r.normal(size=(3, 4))
    k = np.tile(r.normal(size=(1, 4)), (5, 1))
    v = r.normal(size=(5, 4))
    out, w = attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-15)
    np.testing.assert_allclose(out.data, np.broadcast_to(v.mean(axis=0), (3, 4)), atol=1e-14)


def test_attention_matching_key_rows_sum_to_one():
    k = np.eye(3) * 50.0
    q = np.array([[50.0, 0.0, 0.0]])
    _, w = attention(Tensor(q), Tensor(k), Tensor(np.eye(3)), return_weights=True)
    assert abs(w.data.sum() - 1.0) < 1e-12 and w.data[0, 0] > 0.99


@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_row_oracle(seed):
    r = np.random.default_rng(seed)
    q, k, v = r.normal(size=(3, 6)), r.normal(size=(3, 6)), r.normal(size=(3, 2))
    out, w = attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
    ref_out, ref_w = attention_loop(q, k, v)
    np.testing.assert_allclose(out.data, ref_out, atol=1e-13)
    np.testing.assert_allclose(w.data, ref_w, atol=1e-13)


def test_depth_zero_equals_embed(images):
    cfg = BackboneConfig(depth=0)
    bb = Backbone(cfg, Rng(1))
    np.testing.assert_array_equal(bb(images).data, bb.embed(patchify(Tensor(images), cfg)).data)


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_shape_invariant_under_depth(depth, images):
    bb = Backbone(BackboneConfig(depth=depth), Rng(1))
    z, maps = bb(images, return_attention=True)
    assert z.shape == (2, 65, 64)
    assert len(maps) == depth


def test_attention_rows_stochastic(cfg, images):
    _, maps = Backbone(cfg, Rng(2))(images, return_attention=True)
    for w in maps:
        assert w.shape == (2, 4, 65, 65)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)


def test_patch_permutation_equivariance_without_positions(cfg):
    bb = Backbone(cfg, Rng(4))
    bb.pos_embed.data[...] = 0.0
    img = np.random.default_rng(5).uniform(size=(1, 32, 32))
    swapped = img.copy()
    # swap patch 0 (rows 0-3, cols 0-3) with patch 9 (rows 4-7, cols 4-7)
    a, b = img[:, 0:4, 0:4].copy(), img[:, 4:8, 4:8].copy()
    swapped[:, 0:4, 0:4], swapped[:, 4:8, 4:8] = b, a
    z1, z2 = bb(img).data, bb(swapped).data
    perm = np.arange(65)
    perm[1], perm[10] = 10, 1
    np.testing.assert_allclose(z2, z1[perm], atol=1e-12)


def test_frozen_backbone_has_no_parameters():
    bb = Backbone(BackboneConfig(finetune=False), Rng(0))
    assert bb.num_parameters() == 0
    assert len(bb.state_arrays()) > 0


def test_gradient_through_two_blocks(cfg):
    bb = Backbone(cfg, Rng(6))
    x = np.random.default_rng(6).uniform(size=(2, 1, 32, 32))
    readout = np.random.default_rng(7).normal(size=(2, 65, 64))
    reports = check_parameter_groups(lambda: (bb(x) * readout).sum(), bb.named_parameters(),
                                     per_group=6, rng=Rng(8))
    worst = max(reports.items(), key=lambda kv: kv[1].max_rel_error)
    assert all(r.passed for r in reports.values()), worst
