import numpy as np
import pytest

from ascent_vit.dmsf import (PSI_PRESETS, DeformableFusion, DmsfConfig, MSDA, compose,
                             make_reference_points, phi_scale)
from ascent_vit.layers import ConfigError, LayerNorm
from ascent_vit.mse import flatten_concat
from ascent_vit.numerics import DimensionError, Rng, Tensor, check_parameter_groups, layer_norm

from oracles import msda_loop


def random_pyramid(r, B, D, sides):
    return flatten_concat([Tensor(r.normal(size=(B, D, s, s))) for s in sides])


def randomise(module, r, scale=0.5):
    for p in module.named_parameters().values():
        p.data[...] = r.normal(scale=scale, size=p.shape)


def test_reference_point_examples():
    np.testing.assert_array_equal(make_reference_points(1), [[0.5, 0.5]])
    np.testing.assert_array_equal(make_reference_points(2),
                                  [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    p8 = make_reference_points(8)
    assert p8.shape == (64, 2) and tuple(p8[0]) == (0.0625, 0.0625)
    assert np.all((p8 > 0) & (p8 < 1))


def test_phi_scale_examples():
    assert phi_scale([0.5, 0.5], 16, 16)[0] == 7.5
    assert phi_scale([0.5, 0.5], 1, 1)[0] == 0.0
    assert phi_scale([0.25, 0.25], 2, 2) == (0.0, 0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        DmsfConfig(psi=-1.0)
    with pytest.raises(ConfigError):
        MSDA(Rng(0), 10, DmsfConfig(heads=4), 1)
    assert PSI_PRESETS["cub"] == 1.0 and PSI_PRESETS["cmnist"] == 2.0


@pytest.mark.parametrize("grid", [1, 2, 4])
def test_degenerate_case_is_direct_gather(grid):
    r = np.random.default_rng(grid)
    D = 6
    msda = MSDA(Rng(0), D, DmsfConfig(heads=1, points=1), 1)
    msda.value_proj.weight.data[...] = np.eye(D)
    msda.output_proj.weight.data[...] = np.eye(D)
    pyr = random_pyramid(r, 2, D, [grid])
    q = Tensor(r.normal(size=(2, grid * grid, D)))
    out = msda(q, make_reference_points(grid), pyr).data
    np.testing.assert_allclose(out, pyr.flat.data, atol=1e-12)


def test_constant_pyramid_is_offset_invariant():
    r = np.random.default_rng(0)
    D, M = 8, 2
    msda = MSDA(Rng(1), D, DmsfConfig(heads=M, points=2), 2)
    randomise(msda, r)
    v = r.normal(size=D)
    levels = [Tensor(np.broadcast_to(v[None, :, None, None], (1, D, s, s)).copy()) for s in (4, 2)]
    pyr = flatten_concat(levels)
    out = msda(Tensor(r.normal(size=(1, 4, D))), make_reference_points(2), pyr).data
    vp = v @ msda.value_proj.weight.data + msda.value_proj.bias.data
    want = vp @ msda.output_proj.weight.data + msda.output_proj.bias.data
    np.testing.assert_allclose(out, np.broadcast_to(want, out.shape), atol=1e-12)


@pytest.mark.parametrize("trial", range(50))
def test_matches_loop_oracle(trial):
    r = np.random.default_rng(1000 + trial)
    M, K, S = int(r.integers(1, 3)), int(r.integers(1, 3)), int(r.integers(1, 3))
    grid = int(r.integers(1, 3))
    D = M * int(r.integers(1, 4))
    msda = MSDA(Rng(trial), D, DmsfConfig(heads=M, points=K), S)
    randomise(msda, r, scale=0.8)
    sides = [int(r.integers(1, 5)) for _ in range(S)]
    pyr = random_pyramid(r, 2, D, sides)
    ref = make_reference_points(grid)
    q = r.normal(size=(2, grid * grid, D))
    got, weights = msda(Tensor(q), ref, pyr, return_weights=True)
    want = msda_loop(msda, q, ref, pyr.flat.data, pyr.shapes, pyr.level_offsets)
    np.testing.assert_allclose(got.data, want, atol=1e-10, rtol=0)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-9)


def test_dimension_errors():
    r = np.random.default_rng(0)
    msda = MSDA(Rng(0), 4, DmsfConfig(heads=2, points=1), 2)
    q = Tensor(r.normal(size=(1, 4, 4)))
    with pytest.raises(DimensionError):
        msda(q, make_reference_points(2), random_pyramid(r, 1, 4, [2]))
    with pytest.raises(DimensionError):
        msda(q, make_reference_points(2), random_pyramid(r, 1, 6, [2, 1]))
    with pytest.raises(DimensionError):
        msda(q, make_reference_points(1), random_pyramid(r, 1, 4, [2, 1]))


def _fusion_inputs(psi, seed=0):
    r = np.random.default_rng(seed)
    fusion = DeformableFusion(Rng(seed), 8, 2, DmsfConfig(heads=2, points=2, psi=psi), 2)
    randomise(fusion.msda, r)
    z_q = Tensor(r.normal(size=(2, 5, 8)))
    pyr = random_pyramid(r, 2, 8, [4, 2])
    return fusion, z_q, pyr


def test_psi_zero_is_layer_norm_of_tokens():
    fusion, z_q, pyr = _fusion_inputs(0.0)
    want = layer_norm(z_q, fusion.norm.gain, fusion.norm.bias).data
    np.testing.assert_array_equal(fusion(z_q, pyr).data, want)
    np.testing.assert_array_equal(fusion(z_q, None).data, want)


def test_zero_gate_matches_psi_zero():
    fusion, z_q, pyr = _fusion_inputs(1.0)
    fusion.gate.data[...] = 0.0
    want = layer_norm(z_q, fusion.norm.gain, fusion.norm.bias).data
    np.testing.assert_allclose(fusion(z_q, pyr).data, want, atol=1e-14)


def test_prenorm_value_direct_arithmetic():
    fusion, z_q, pyr = _fusion_inputs(1.0)
    m = fusion.fuse(z_q, pyr).data
    captured = {}

    class Spy(LayerNorm):
        def __call__(self, x):
            captured["x"] = x.data.copy()
            return super().__call__(x)

    spy = Spy(8)
    compose(z_q, Tensor(m), fusion.gate, 1.0, spy)
    pre = captured["x"]
    np.testing.assert_array_equal(pre[:, 0], z_q.data[:, 0])
    np.testing.assert_allclose(pre[:, 1:], z_q.data[:, 1:] + 0.01 * m, atol=1e-15)


def test_residual_linear_in_psi():
    f1, z_q, pyr = _fusion_inputs(1.0)
    m = f1.fuse(z_q, pyr)
    gate = Tensor(np.full(8, 0.3))
    seen = []

    class Spy(LayerNorm):
        def __call__(self, x):
            seen.append(x.data.copy())
            return super().__call__(x)

    for psi in (0.7, 1.4):
        compose(z_q, m, gate, psi, Spy(8))
    d1 = seen[0][:, 1:] - z_q.data[:, 1:]
    d2 = seen[1][:, 1:] - z_q.data[:, 1:]
    np.testing.assert_allclose(d2, 2 * d1, atol=1e-13)


def test_compose_shape_and_cls_handling():
    fusion, z_q, pyr = _fusion_inputs(1.0)
    z = fusion(z_q, pyr)
    assert z.shape == z_q.shape
    cls_alone = layer_norm(z_q[:, :1], fusion.norm.gain, fusion.norm.bias).data
    np.testing.assert_allclose(z.data[:, :1], cls_alone, atol=1e-15)
    with pytest.raises(DimensionError):
        compose(z_q, Tensor(np.zeros((2, 3, 8))), fusion.gate, 1.0, fusion.norm)


def test_offset_predictor_gradients():
    fusion, z_q, pyr = _fusion_inputs(1.0, seed=3)
    fusion.gate.data[...] = 0.7
    w = np.random.default_rng(4).normal(size=(2, 5, 8))
    params = {k: v for k, v in fusion.named_parameters().items()}
    reports = check_parameter_groups(lambda: (fusion(z_q, pyr) * w).sum(), params,
                                     per_group=10, rng=Rng(5))
    bad = {k: r.max_rel_error for k, r in reports.items() if not r.passed}
    assert not bad, bad
    assert "msda.offsets.weight" in reports
