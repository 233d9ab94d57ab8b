"""Depth estimation for one reference view.

Learned modes: features -> plane-sweep warp -> residual volumes -> attention
aggregation (``pixelwise`` or ``voxelwise``) -> 3D U-Net logits -> softmax ->
soft argmin + confidence. ``photometric`` mode swaps the learned blocks for
quarter-resolution RGB and a negated L1 matching cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .geometry import Camera, DepthRange, plane_homography, sample_inverse_depth, scale_camera
from .networks import MVSModel, pa_weights, va_weights
from .tensor import Tensor

MODES = ("pixelwise", "voxelwise", "photometric")
FEATURE_STRIDE = 4
# logits = -cost / temperature for the photometric baseline; cost is mean absolute RGB difference
PHOTOMETRIC_TEMPERATURE = 0.0005
_EDGE_TOL = 1e-6


@dataclass
class FeatureVolume:
    values: Tensor  # [C, D, H, W]
    view_index: int
    validity: np.ndarray  # [D, H, W] bool


@dataclass
class Residual:
    values: Tensor  # [C, D, H, W]
    validity: np.ndarray  # [D, H, W] bool


@dataclass
class DepthEstimate:
    depth: np.ndarray  # [H, W] millimetres
    confidence: np.ndarray  # [H, W] in [0, 1]
    level: int = 0


def area_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Box-average ``[..., H, W]`` by an integer factor (extents must divide)."""
    if factor == 1:
        return image
    *lead, h, w = image.shape
    if h % factor or w % factor:
        raise ConfigError(f"extents {h}x{w} are not divisible by {factor}")
    return image.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def bilinear_weights(x: np.ndarray, y: np.ndarray, width: int, height: int):
    """Flat tap indices ``[P, 4]``, weights ``[P, 4]`` and validity ``[P]``.

    A sample is valid when all four taps lie inside the image (within a
    1e-6 px tolerance at the border); invalid samples get zero weights.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    valid = (
        np.isfinite(x)
        & np.isfinite(y)
        & (x >= -_EDGE_TOL)
        & (x <= width - 1 + _EDGE_TOL)
        & (y >= -_EDGE_TOL)
        & (y <= height - 1 + _EDGE_TOL)
    )
    xc = np.clip(np.where(valid, x, 0.0), 0, width - 1)
    yc = np.clip(np.where(valid, y, 0.0), 0, height - 1)
    x0 = np.minimum(np.floor(xc), max(width - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(yc), max(height - 2, 0)).astype(np.int64)
    fx, fy = xc - x0, yc - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    w[~valid] = 0.0
    return idx, w, valid


def sample_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``[C, H, W]`` (or ``[H, W]``) at float coordinates; returns (values, valid)."""
    squeeze = image.ndim == 2
    img = image[None] if squeeze else image
    c, h, w = img.shape
    idx, wts, valid = bilinear_weights(x, y, w, h)
    flat = img.reshape(c, -1)
    out = (flat[:, idx] * wts[None]).sum(axis=-1).reshape((c,) + np.shape(x))
    valid = valid.reshape(np.shape(x))
    return (out[0] if squeeze else out), valid


def _sweep_coords(ref: Camera, src: Camera, depths: np.ndarray, width: int, height: int):
    """Source-image coordinates of every reference pixel for every depth, ``[D, H, W]`` each."""
    H = plane_homography(ref, src, depths)
    ys, xs = np.mgrid[0:height, 0:width]
    pix = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)]).astype(np.float64)
    mapped = H @ pix
    z = mapped[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(z > 0, mapped[:, 0] / z, np.nan)
        y = np.where(z > 0, mapped[:, 1] / z, np.nan)
    shape = (len(depths), height, width)
    return x.reshape(shape), y.reshape(shape)


def warp_volume(feat: Tensor, ref: Camera, src: Camera, depths, view_index: int = 1) -> FeatureVolume:
    """Plane-sweep a source feature map ``[C, H, W]`` into the reference frustum.

    Cameras must already be scaled to the feature grid. Samples falling off
    the source map are zero with validity false.
    """
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size == 0:
        raise ContractError("warp_volume needs at least one depth hypothesis")
    c, h, w = feat.shape
    x, y = _sweep_coords(ref, src, depths, w, h)
    idx, wts, valid = bilinear_weights(x, y, w, h)
    rows = np.repeat(np.arange(idx.shape[0]), 4)
    matrix = sp.csr_matrix((wts.ravel().astype(feat.data.dtype), (rows, idx.ravel())), shape=(idx.shape[0], h * w))
    values = T.sparse_apply(feat, matrix).reshape(c, len(depths), h, w)
    return FeatureVolume(values, view_index, valid.reshape(len(depths), h, w))


def residual_volumes(volumes: list[FeatureVolume]) -> list[Residual]:
    """``v_i - v_0`` for each source view; voxels invalid in view i are zeroed."""
    if len(volumes) < 2:
        raise ContractError("need the reference volume and at least one source volume")
    ref = volumes[0]
    shape = ref.values.shape
    out = []
    for vol in volumes[1:]:
        if vol.values.shape != shape:
            raise ShapeError(f"volume shapes differ: {list(vol.values.shape)} vs {list(shape)}")
        diff = vol.values - ref.values
        if not vol.validity.all():
            diff = diff * vol.validity[None].astype(diff.data.dtype)
        out.append(Residual(diff, vol.validity))
    return out


def pooled_cost_features(res: Residual) -> Tensor:
    """``[2, H, W]``: max and mean over valid depths of the channel-wise L1 norm."""
    s = T.reduce("l1norm", res.values, axis=0)
    count = np.maximum(res.validity.sum(axis=0), 1).astype(s.data.dtype)
    mean = T.reduce("sum", s, axis=0) * (1.0 / count)
    return T.stack([T.reduce("max", s, axis=0), mean], axis=0)


def _combine(residuals: list[Residual], weights: list[Tensor | None]) -> Tensor:
    if not residuals:
        raise ContractError("need at least one residual volume")
    total = None
    for res, w in zip(residuals, weights):
        term = res.values if w is None else res.values + res.values * w
        total = term if total is None else total + term
    return total * (1.0 / len(residuals))


def aggregate_pixelwise(residuals: list[Residual], net=None) -> Tensor:
    """Cost volume with one attention weight per pixel and view, shared over depth.

    ``net=None`` forces unit multipliers (w = 0), i.e. the mean residual.
    """
    weights = []
    for res in residuals:
        if net is None:
            weights.append(None)
            continue
        w = pa_weights(pooled_cost_features(res), net)  # [1, H, W]
        weights.append(w.reshape((1, 1) + w.shape[1:]))
    return _combine(residuals, weights)


def aggregate_voxelwise(residuals: list[Residual], net=None) -> Tensor:
    """Cost volume with one attention weight per voxel and view.

    ``net=None`` forces unit multipliers (w = 0), i.e. the mean residual.
    """
    weights = [None if net is None else va_weights(res.values, net) for res in residuals]
    return _combine(residuals, weights)


def soft_argmin(prob: Tensor, depths) -> Tensor:
    """Per-pixel expected depth under a normalized ``[D, H, W]`` distribution."""
    depths = np.asarray(depths, dtype=np.float64)
    if prob.shape[0] != len(depths):
        raise ShapeError(f"probability volume has {prob.shape[0]} layers, got {len(depths)} depths")
    sums = prob.data.sum(axis=0, dtype=np.float64)
    if np.abs(sums - 1.0).max(initial=0.0) > 1e-4:
        raise ContractError("probability volume is not normalized along depth")
    grid = np.broadcast_to(depths.reshape(-1, *([1] * (prob.ndim - 1))), prob.shape)
    return T.reduce("sum", prob * grid, axis=0)


def confidence_map(prob: np.ndarray, depths) -> np.ndarray:
    """Probability mass in the 4-hypothesis window around the estimate.

    The window is ``[j-1, j+2]`` for the hypothesis ``j`` nearest the soft
    argmin depth, shifted inward at the ends so it always spans 4 indices.
    """
    prob = np.asarray(prob.data if isinstance(prob, Tensor) else prob, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    n = len(depths)
    if n < 4:
        raise ConfigError("confidence needs at least 4 depth hypotheses")
    estimate = np.tensordot(depths, prob, axes=(0, 0))
    nearest = np.abs(depths.reshape(-1, *([1] * estimate.ndim)) - estimate[None]).argmin(axis=0)
    start = np.clip(nearest - 1, 0, n - 4)
    csum = np.concatenate([np.zeros((1,) + prob.shape[1:]), np.cumsum(prob, axis=0)], axis=0)
    hi = np.take_along_axis(csum, (start + 4)[None], axis=0)[0]
    lo = np.take_along_axis(csum, start[None], axis=0)[0]
    return np.clip(hi - lo, 0.0, 1.0)


def l1_loss(pred: Tensor, gt: np.ndarray, valid: np.ndarray) -> Tensor:
    """Mean absolute depth error over valid pixels."""
    if pred.shape != np.shape(gt) or pred.shape != np.shape(valid):
        raise ShapeError(f"loss shapes differ: {list(pred.shape)}, {list(np.shape(gt))}, {list(np.shape(valid))}")
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise ContractError("loss needs at least one valid pixel")
    diff = T.abs(pred - np.where(valid, gt, 0.0)) * np.asarray(valid, dtype=pred.data.dtype)
    return T.reduce("sum", diff) * (1.0 / n)


def normalize_image(image: np.ndarray) -> np.ndarray:
    mean = image.mean(axis=(1, 2), keepdims=True)
    std = image.std(axis=(1, 2), keepdims=True)
    return (image - mean) / (std + 1e-5)


def _check_inputs(images, cameras, mode):
    if mode not in MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}; expected one of {MODES}")
    if len(images) < 2 or len(images) != len(cameras):
        raise ContractError("need a reference and at least one source view, one camera per image")
    h, w = images[0].shape[1:]
    if h % 8 or w % 8:
        raise ConfigError(f"image extents {w}x{h} must be divisible by 8")


def forward(images, cameras, depths, mode: str, model: MVSModel | None) -> tuple[Tensor, Tensor]:
    """Differentiable learned forward pass; returns (depth [H/4, W/4], probability [D, H/4, W/4])."""
    _check_inputs(images, cameras, mode)
    if mode == "photometric":
        raise ConfigError("photometric mode has no learned forward pass")
    if model is None:
        raise ConfigError(f"{mode} mode needs a model")
    feat_cams = [scale_camera(c, 1.0 / FEATURE_STRIDE) for c in cameras]
    volumes = []
    for i, (img, cam) in enumerate(zip(images, feat_cams)):
        feat = model.featnet(Tensor(normalize_image(img)))
        if i == 0:
            _, h, w = feat.shape
            volumes.append(FeatureVolume(_repeat_depth(feat, len(depths)), 0, np.ones((len(depths), h, w), bool)))
        else:
            volumes.append(warp_volume(feat, feat_cams[0], cam, depths, i))
    residuals = residual_volumes(volumes)
    if mode == "pixelwise":
        cost = aggregate_pixelwise(residuals, model.panet)
    else:
        cost = aggregate_voxelwise(residuals, model.vanet)
    prob = T.softmax(model.regnet(cost), axis=0)
    return soft_argmin(prob, depths), prob


def _repeat_depth(feat: Tensor, n: int) -> Tensor:
    """Reference volume: the feature map replicated across ``n`` depth layers."""
    return T.stack([feat] * n, axis=1)


def photometric_probability(images, cameras, depths) -> np.ndarray:
    """Classical plane sweep: softmax of the negated mean L1 RGB cost at quarter resolution.

    Source views that sample off-image at a voxel are left out of that
    voxel's mean; voxels seen by no source view get the worst observed cost.
    """
    feats = [area_downsample(np.asarray(img, dtype=np.float64), FEATURE_STRIDE) for img in images]
    cams = [scale_camera(c, 1.0 / FEATURE_STRIDE) for c in cameras]
    ref = feats[0]
    _, h, w = ref.shape
    cost = np.zeros((len(depths), h, w))
    seen = np.zeros((len(depths), h, w))
    for feat, cam in zip(feats[1:], cams[1:]):
        # per-depth loop keeps memory at one [C, H, W] slice
        for j, d in enumerate(depths):
            x, y = _sweep_coords(cams[0], cam, np.array([d]), w, h)
            warped, valid = sample_bilinear(feat, x[0], y[0])
            cost[j] += np.where(valid, np.abs(warped - ref).mean(axis=0), 0.0)
            seen[j] += valid
    with np.errstate(invalid="ignore", divide="ignore"):
        cost = np.where(seen > 0, cost / seen, np.nan)
    worst = np.nanmax(cost) if np.isfinite(cost).any() else 0.0
    cost = np.where(np.isnan(cost), worst, cost)
    logits = -cost / PHOTOMETRIC_TEMPERATURE
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def estimate_depth(
    images,
    cameras,
    depth_range: DepthRange | np.ndarray,
    mode: str = "voxelwise",
    model: MVSModel | None = None,
    level: int = 0,
) -> DepthEstimate:
    """Depth and confidence at quarter resolution for ``images[0]``."""
    _check_inputs(images, cameras, mode)
    depths = sample_inverse_depth(depth_range) if isinstance(depth_range, DepthRange) else np.asarray(depth_range)
    if mode == "photometric":
        prob = photometric_probability(images, cameras, depths)
        depth = np.tensordot(depths, prob, axes=(0, 0))
    else:
        with T.no_grad():
            depth_t, prob_t = forward(images, cameras, depths, mode, model)
        prob = prob_t.data.astype(np.float64)
        depth = depth_t.data.astype(np.float64)
    depth = np.clip(depth, depths[0], depths[-1])
    return DepthEstimate(depth.astype(np.float32), confidence_map(prob, depths).astype(np.float32), level)


def select_views(cameras: list[Camera], ref: int, count: int) -> list[int]:
    """``ref`` followed by the ``count - 1`` views with the nearest camera centres."""
    others = [i for i in range(len(cameras)) if i != ref]
    dist = [float(np.linalg.norm(cameras[i].center - cameras[ref].center)) for i in others]
    order = [i for _, i in sorted(zip(dist, others))]
    return [ref] + order[: count - 1]
