import itertools
import time

import numpy as np
import pytest
from oracles import aggregate_scalar, bilinear_scalar, confidence_scalar, pooled_features_scalar

from sweepfuse import tensor as T
from sweepfuse.errors import ConfigError, ContractError, ShapeError
from sweepfuse.geometry import Camera, DepthRange, local_spacing, sample_inverse_depth, scale_camera
from sweepfuse.networks import PANet, VANet
from sweepfuse.pipeline import (
    FeatureVolume,
    aggregate_pixelwise,
    aggregate_voxelwise,
    confidence_map,
    estimate_depth,
    l1_loss,
    pooled_cost_features,
    residual_volumes,
    sample_bilinear,
    select_views,
    soft_argmin,
    warp_volume,
)
from sweepfuse.synthetic import arc_cameras, plane_scene, render
from sweepfuse.tensor import Tensor
from sweepfuse.train import quarter_gt


def ident(w=16, h=12, f=20.0):
    return Camera(f, f, (w - 1) / 2, (h - 1) / 2, np.eye(3), np.zeros(3), w, h)


def random_volumes(rng, n, shape=(32, 4, 6, 6), invalid=0.2):
    """Reference plus ``n`` source volumes with some invalid voxels (zeroed, as warping produces)."""
    _, d, h, w = shape
    vols = [FeatureVolume(Tensor(rng.standard_normal(shape)), 0, np.ones((d, h, w), bool))]
    for i in range(1, n):
        valid = rng.random((d, h, w)) > invalid
        vals = rng.standard_normal(shape) * valid[None]
        vols.append(FeatureVolume(Tensor(vals), i, valid))
    return vols


def randomized(cls, seed):
    rng = np.random.default_rng(seed)
    net = cls(rng)
    net.randomize(rng, 0.3)
    return net


# -- sampling and warping ---------------------------------------------------


def test_sample_bilinear_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((7, 9))
    xs, ys = rng.uniform(-1, 9, 200), rng.uniform(-1, 7, 200)
    vals, ok = sample_bilinear(img, xs, ys)
    for x, y, v, k in zip(xs, ys, vals, ok):
        ref = bilinear_scalar(img, x, y)
        assert k == (ref is not None)
        if k:
            assert v == pytest.approx(ref, abs=1e-12)


def test_warp_identity_replicates_features():
    feat = Tensor(np.random.default_rng(1).standard_normal((4, 12, 16)))
    cam = ident()
    vol = warp_volume(feat, cam, cam, [450.0, 600.0, 900.0])
    assert vol.validity.all()
    for j in range(3):
        np.testing.assert_allclose(vol.values.data[:, j], feat.data, atol=1e-5)


def test_warp_off_image_is_zero_and_invalid():
    feat = Tensor(np.ones((2, 12, 16)))
    ref = ident()
    src = Camera(20.0, 20.0, 7.5, 5.5, np.eye(3), np.array([-1e5, 0.0, 0.0]), 16, 12)
    vol = warp_volume(feat, ref, src, [450.0, 900.0])
    assert not vol.validity.any()
    assert np.all(vol.values.data == 0)


def test_warp_rejects_empty_depths():
    with pytest.raises(ContractError):
        warp_volume(Tensor(np.ones((2, 12, 16))), ident(), ident(), [])


def test_warp_at_true_plane_depth_reproduces_reference():
    scene = plane_scene(depth=680.0, n_views=2, width=160, height=128)
    views = render(scene)
    cams = [scale_camera(c, 0.25) for c in scene.cameras]
    quarter = [v.image.reshape(3, 32, 4, 40, 4).mean(axis=(2, 4)) for v in views]
    vol = warp_volume(Tensor(quarter[1]), cams[0], cams[1], [680.0])
    valid = vol.validity[0]
    diff = np.abs(vol.values.data[:, 0] - quarter[0])[:, valid]
    rms = np.sqrt(np.mean(quarter[0] ** 2))
    assert valid.mean() > 0.5
    assert diff.mean() < 0.05 * rms


def test_warp_gradient_flows_to_features():
    with T.precision(np.float64):
        rng = np.random.default_rng(2)
        cams = arc_cameras(2, 16, 16)
        feat = Tensor(rng.standard_normal((2, 16, 16)), requires_grad=True)
        depths = [500.0, 700.0]
        weights = rng.standard_normal((2, 2, 16, 16))
        err = T.gradient_check(lambda: (warp_volume(feat, cams[0], cams[1], depths).values * weights).sum(), [feat])
    assert err < 1e-4


# -- residuals and aggregation ----------------------------------------------


def test_identical_volumes_give_zero_residual():
    v = Tensor(np.random.default_rng(3).standard_normal((4, 2, 3, 3)))
    valid = np.ones((2, 3, 3), bool)
    res = residual_volumes([FeatureVolume(v, 0, valid), FeatureVolume(v, 1, valid)])
    assert len(res) == 1 and np.all(res[0].values.data == 0)


def test_two_views_single_residual():
    rng = np.random.default_rng(4)
    vols = random_volumes(rng, 2, (3, 2, 4, 4), invalid=0.0)
    res = residual_volumes(vols)
    np.testing.assert_allclose(res[0].values.data, vols[1].values.data - vols[0].values.data, rtol=1e-6)


def test_residuals_match_scalar_loop():
    with T.precision(np.float64):
        rng = np.random.default_rng(5)
        vols = random_volumes(rng, 4, (3, 2, 4, 4))
        res = residual_volumes(vols)
    for r, v in zip(res, vols[1:]):
        for c, d, y, x in itertools.product(range(3), range(2), range(4), range(4)):
            expect = v.values.data[c, d, y, x] - vols[0].values.data[c, d, y, x] if v.validity[d, y, x] else 0.0
            assert r.values.data[c, d, y, x] == pytest.approx(expect, abs=1e-12)


def test_residuals_need_two_volumes_and_equal_shapes():
    rng = np.random.default_rng(6)
    vols = random_volumes(rng, 2, (3, 2, 4, 4))
    with pytest.raises(ContractError):
        residual_volumes(vols[:1])
    with pytest.raises(ShapeError):
        residual_volumes([vols[0], FeatureVolume(Tensor(np.zeros((3, 2, 4, 5))), 1, np.ones((2, 4, 5), bool))])


def test_pooled_features_match_scalar_oracle():
    with T.precision(np.float64):
        rng = np.random.default_rng(7)
        res = residual_volumes(random_volumes(rng, 2, (5, 4, 3, 3), invalid=0.4))[0]
        got = pooled_cost_features(res).data
    np.testing.assert_allclose(got, pooled_features_scalar(res.values.data, res.validity), rtol=1e-12)


def _oracle_inputs(vols):
    ref = vols[0].values.data
    return ref, [v.values.data for v in vols[1:]], [v.validity for v in vols[1:]]


def test_pixelwise_aggregation_matches_scalar_oracle():
    with T.precision(np.float64):
        rng = np.random.default_rng(8)
        vols = random_volumes(rng, 4)
        net = randomized(PANet, 9)
        res = residual_volumes(vols)
        got = aggregate_pixelwise(res, net).data
        # attention maps from oracle-pooled statistics, fed through the same network
        maps = [net(Tensor(pooled_features_scalar(r.values.data, r.validity))).data[0] for r in res]
    expect = aggregate_scalar(*_oracle_inputs(vols), lambda i, d, y, x: maps[i][y, x])
    np.testing.assert_allclose(got, expect, rtol=1e-5, atol=1e-12)


def test_voxelwise_aggregation_matches_scalar_oracle():
    with T.precision(np.float64):
        rng = np.random.default_rng(10)
        vols = random_volumes(rng, 4)
        net = randomized(VANet, 11)
        res = residual_volumes(vols)
        got = aggregate_voxelwise(res, net).data
        maps = [net(Tensor(r.values.data)).data[0] for r in res]
    expect = aggregate_scalar(*_oracle_inputs(vols), lambda i, d, y, x: maps[i][d, y, x])
    np.testing.assert_allclose(got, expect, rtol=1e-5, atol=1e-12)


@pytest.mark.parametrize("aggregate", [aggregate_pixelwise, aggregate_voxelwise])
def test_no_attention_is_exact_mean_residual(aggregate):
    with T.precision(np.float64):
        res = residual_volumes(random_volumes(np.random.default_rng(12), 4))
        got = aggregate(res, None).data
    mean = sum(r.values.data for r in res) / 3
    np.testing.assert_allclose(got, mean, rtol=1e-14, atol=1e-15)


def test_fresh_networks_scale_the_mean_by_one_and_a_half():
    # zero-initialized last layers give w = 0.5 everywhere
    rng = np.random.default_rng(13)
    with T.precision(np.float64):
        res = residual_volumes(random_volumes(rng, 3))
        mean = aggregate_voxelwise(res, None).data
        np.testing.assert_allclose(aggregate_pixelwise(res, PANet(rng)).data, 1.5 * mean, rtol=1e-12)
        np.testing.assert_allclose(aggregate_voxelwise(res, VANet(rng)).data, 1.5 * mean, rtol=1e-12)


def test_zero_residuals_aggregate_to_zero():
    v = Tensor(np.random.default_rng(14).standard_normal((32, 4, 6, 6)))
    valid = np.ones((4, 6, 6), bool)
    res = residual_volumes([FeatureVolume(v, i, valid) for i in range(3)])
    assert np.all(aggregate_pixelwise(res, randomized(PANet, 1)).data == 0)
    assert np.all(aggregate_voxelwise(res, randomized(VANet, 1)).data == 0)


def test_identical_residuals_scale_by_shared_weight():
    with T.precision(np.float64):
        rng = np.random.default_rng(15)
        vols = random_volumes(rng, 2, invalid=0.0)
        res = residual_volumes([vols[0], vols[1], FeatureVolume(vols[1].values, 2, vols[1].validity)])
        net = randomized(VANet, 2)
        w = net(res[0].values).data
        got = aggregate_voxelwise(res, net).data
    np.testing.assert_allclose(got, (1 + w) * res[0].values.data, rtol=1e-12)


@pytest.mark.parametrize("aggregate,cls", [(aggregate_pixelwise, PANet), (aggregate_voxelwise, VANet)])
def test_aggregation_is_source_order_invariant(aggregate, cls):
    rng = np.random.default_rng(16)
    vols = random_volumes(rng, 4)
    net = randomized(cls, 3)
    a = aggregate(residual_volumes(vols), net).data
    b = aggregate(residual_volumes([vols[0], vols[3], vols[1], vols[2]]), net).data
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


# -- depth regression and confidence ----------------------------------------


def test_soft_argmin_one_hot_and_half_half():
    depths = np.array([425.0, 500.0, 935.0])
    one_hot = np.zeros((3, 1, 1))
    one_hot[1] = 1
    assert soft_argmin(Tensor(one_hot), depths).data.item() == pytest.approx(500.0)
    half = np.array([0.5, 0.0, 0.5]).reshape(3, 1, 1)
    assert soft_argmin(Tensor(half), depths).data.item() == pytest.approx(680.0)


def test_soft_argmin_matches_dot_product_and_stays_in_range():
    rng = np.random.default_rng(17)
    prob = rng.dirichlet(np.ones(8), size=(5, 5)).transpose(2, 0, 1)
    depths = sample_inverse_depth(DepthRange(425, 935, 8))
    with T.precision(np.float64):
        got = soft_argmin(Tensor(prob), depths).data
    for y, x in itertools.product(range(5), range(5)):
        assert got[y, x] == pytest.approx(sum(depths[j] * prob[j, y, x] for j in range(8)), rel=1e-12)
    assert np.all(got >= 425) and np.all(got <= 935)


def test_soft_argmin_monotone_under_dominance_shift():
    rng = np.random.default_rng(18)
    depths = sample_inverse_depth(DepthRange(425, 935, 8))
    prob = rng.dirichlet(np.ones(8), size=(4, 4)).transpose(2, 0, 1)
    moved = prob.copy()
    moved[-1] += moved[0] * 0.5
    moved[0] *= 0.5
    with T.precision(np.float64):
        assert np.all(soft_argmin(Tensor(moved), depths).data > soft_argmin(Tensor(prob), depths).data)


def test_soft_argmin_rejects_unnormalized_and_mismatched():
    with pytest.raises(ContractError):
        soft_argmin(Tensor(np.full((4, 2, 2), 0.3)), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ShapeError):
        soft_argmin(Tensor(np.full((4, 2, 2), 0.25)), [1.0, 2.0])


def test_confidence_uniform_192():
    depths = sample_inverse_depth(DepthRange(425, 935, 192))
    conf = confidence_map(np.full((192, 2, 3), 1 / 192), depths)
    np.testing.assert_allclose(conf, 4 / 192, rtol=1e-9)
    assert conf[0, 0] == pytest.approx(0.02083, abs=1e-5)


def test_confidence_full_mass_in_window():
    depths = np.linspace(425, 935, 10)
    prob = np.zeros((10, 1, 1))
    # expected index 4.1, so the window is 3..6 and holds all the mass
    prob[3:7, 0, 0] = [0.3, 0.4, 0.2, 0.1]
    assert confidence_map(prob, depths)[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(3))
def test_confidence_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    depths = sample_inverse_depth(DepthRange(425, 935, 16))
    # peaked distributions so the window lands at the borders too
    prob = rng.dirichlet(np.full(16, 0.2), size=(6, 6)).transpose(2, 0, 1)
    np.testing.assert_allclose(confidence_map(prob, depths), confidence_scalar(prob, depths), atol=1e-12)


def test_confidence_needs_four_hypotheses():
    with pytest.raises(ConfigError):
        confidence_map(np.full((3, 1, 1), 1 / 3), [1.0, 2.0, 3.0])


# -- loss -------------------------------------------------------------------


def test_l1_loss_trivial_cases():
    gt = np.full((4, 4), 600.0)
    valid = np.ones((4, 4), bool)
    assert l1_loss(Tensor(gt), gt, valid).item() == 0
    assert l1_loss(Tensor(gt + 3), gt, valid).item() == pytest.approx(3.0)


def test_l1_loss_matches_scalar_loop():
    rng = np.random.default_rng(19)
    pred, gt = rng.uniform(400, 900, (2, 8, 8))
    valid = rng.random((8, 8)) < 0.5
    terms = [abs(pred[y, x] - gt[y, x]) for y, x in itertools.product(range(8), range(8)) if valid[y, x]]
    with T.precision(np.float64):
        assert l1_loss(Tensor(pred), gt, valid).item() == pytest.approx(sum(terms) / len(terms), rel=1e-12)


def test_l1_loss_rejects_empty_mask_and_shape_mismatch():
    with pytest.raises(ContractError):
        l1_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(ShapeError):
        l1_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)), np.ones((2, 3), bool))


# -- full estimator ---------------------------------------------------------


def plane_fraction_within_spacing(est, scene, depths):
    gt, valid = quarter_gt(render(scene)[0].depth)
    spacing = local_spacing(depths, gt[valid])
    return float(np.mean(np.abs(est.depth[valid] - gt[valid]) <= spacing))


def test_photometric_plane_recovers_depth():
    dr = DepthRange(425.0, 935.0, 64)
    scene = plane_scene(depth=680.0, n_views=3, depth_range=dr)
    images = [v.image for v in render(scene)]
    est = estimate_depth(images, scene.cameras, dr, mode="photometric")
    assert est.depth.shape == (32, 40)
    assert plane_fraction_within_spacing(est, scene, sample_inverse_depth(dr)) >= 0.95
    assert np.all((est.confidence >= 0) & (est.confidence <= 1))


def test_learned_modes_produce_valid_estimates():
    dr = DepthRange(425.0, 935.0, 8)
    scene = plane_scene(n_views=3, width=32, height=32, depth_range=dr)
    images = [v.image for v in render(scene)]
    from sweepfuse.networks import MVSModel

    model = MVSModel(0)
    for mode in ("pixelwise", "voxelwise"):
        est = estimate_depth(images, scene.cameras, dr, mode=mode, model=model)
        assert est.depth.shape == (8, 8)
        assert np.all((est.depth >= 425) & (est.depth <= 935))
        # untrained regularizer: uniform probability
        np.testing.assert_allclose(est.confidence, 0.5, rtol=1e-5)


def test_identical_cameras_complete_with_low_confidence():
    dr = DepthRange(425.0, 935.0, 32)
    scene = plane_scene(n_views=1, depth_range=dr)
    img = render(scene)[0].image
    cam = scene.cameras[0]
    est = estimate_depth([img, img], [cam, cam], dr, mode="photometric")
    assert np.isfinite(est.depth).all()
    # every hypothesis matches equally well: mass is uniform
    np.testing.assert_allclose(est.confidence, 4 / 32, rtol=1e-5)


def test_estimate_depth_validates_inputs():
    dr = DepthRange(425.0, 935.0, 8)
    img = np.zeros((3, 16, 16))
    cam = ident(16, 16)
    with pytest.raises(ConfigError):
        estimate_depth([img, img], [cam, cam], dr, mode="mystery")
    with pytest.raises(ContractError):
        estimate_depth([img], [cam], dr, mode="photometric")
    with pytest.raises(ConfigError):
        estimate_depth([np.zeros((3, 12, 16))] * 2, [cam, cam], dr, mode="photometric")
    with pytest.raises(ConfigError):
        estimate_depth([img, img], [cam, cam], dr, mode="voxelwise", model=None)


def test_select_views_orders_by_distance():
    cams = arc_cameras(5, 32, 32)
    order = select_views(cams, 0, 3)
    assert order[0] == 0 and len(order) == 3
    d = [np.linalg.norm(cams[i].center - cams[0].center) for i in order[1:]]
    assert d == sorted(d)


@pytest.mark.slow
def test_full_resolution_seven_views_192_hypotheses():
    dr = DepthRange(425.0, 935.0, 192)
    cams = arc_cameras(7, 1600, 1184)
    rng = np.random.default_rng(0)
    images = [rng.random((3, 1184, 1600)) for _ in range(7)]
    start = time.perf_counter()
    est = estimate_depth(images, cams, dr, mode="photometric")
    assert est.depth.shape == (296, 400)
    assert time.perf_counter() - start < 600
