"""Multi-metric pyramid depth aggregation.

Depth maps estimated independently on each pyramid level are merged from
coarse to fine: a fine pixel with low confidence takes the depth and
confidence of its coarse parent when that parent is both confident and
geometrically consistent with its neighbour views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import MultiMetricParams, PyramidConfig
from .errors import ConfigError, ContractError, ShapeError
from .geometry import Camera, grid_camera, pixel_grid, project, scale_camera, unproject
from .pipeline import DepthEstimate, bilinear_weights


def level_extents(width: int, height: int, config: PyramidConfig) -> list[tuple[int, int]]:
    """(W, H) per level: level 0 unchanged, level k divided by eta**k and floored to a multiple of 8."""
    out = []
    for k in range(config.levels):
        s = config.eta**k
        w = int(width / s) // 8 * 8 if k else width
        h = int(height / s) // 8 * 8 if k else height
        if w < 8 or h < 8 or width % 8 or height % 8:
            raise ConfigError(f"level {k} extents {w}x{h} are too small or not divisible by 8")
        out.append((w, h))
    return out


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic box-filter weights mapping ``n_in`` samples onto ``n_out``."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def area_resample(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Area-average ``[C, H, W]`` onto a ``height x width`` grid."""
    _, h, w = image.shape
    if (w, h) == (width, height):
        return image
    Ay, Ax = _area_matrix(h, height), _area_matrix(w, width)
    return np.einsum("yi,cij,xj->cyx", Ay, image, Ax)


def build_pyramid(images, cameras, config: PyramidConfig) -> list[tuple[list[np.ndarray], list[Camera]]]:
    """Per level: area-downsampled images and matching cameras."""
    _, h, w = images[0].shape
    levels = []
    for lw, lh in level_extents(w, h, config):
        imgs = [area_resample(np.asarray(img), lw, lh) for img in images]
        cams = [c if (lw, lh) == (w, h) else scale_camera(c, lw / w, lh / h) for c in cameras]
        levels.append((imgs, cams))
    return levels


def neighbor_consistency(
    depth_ref: np.ndarray,
    cam_ref: Camera,
    depth_src: np.ndarray,
    cam_src: Camera,
    tau1: float,
    tau2: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-project / reproject test of every reference pixel against one neighbour.

    Returns ``(consistent, projectable, reprojected_depth)``; ``projectable``
    marks pixels whose projection lands on valid neighbour depth.
    """
    h, w = depth_ref.shape
    pix = pixel_grid(w, h)
    valid_ref = depth_ref > 0
    X = unproject(cam_ref, pix[valid_ref], depth_ref[valid_ref])
    uv, _ = project(cam_src, X)
    idx, wts, inside = bilinear_weights(uv[:, 0], uv[:, 1], depth_src.shape[1], depth_src.shape[0])
    taps = depth_src.astype(np.float64).reshape(-1)[idx]
    # every bilinear tap must carry a valid depth
    ok = inside & np.all(taps > 0, axis=1)
    d_src = (taps * wts).sum(axis=1)
    consistent = np.zeros((h, w), bool)
    projectable = np.zeros((h, w), bool)
    reproj = np.zeros((h, w))
    if ok.any():
        Xs = unproject(cam_src, uv[ok], d_src[ok])
        back, d_back = project(cam_ref, Xs)
        d0 = depth_ref[valid_ref][ok]
        err_px = np.linalg.norm(back - pix[valid_ref][ok], axis=1)
        good = (err_px < tau1) & (np.abs(d0 - d_back) < tau2 * d0)
        rows, cols = np.nonzero(valid_ref)
        rows, cols = rows[ok], cols[ok]
        projectable[rows, cols] = True
        consistent[rows, cols] = good
        reproj[rows, cols] = d_back
    return consistent, projectable, reproj


def geometric_consistency(
    depth_ref: np.ndarray,
    cam_ref: Camera,
    neighbor_depths: list[np.ndarray],
    neighbor_cams: list[Camera],
    params: MultiMetricParams,
) -> tuple[np.ndarray, np.ndarray]:
    """(mask, count): pixels consistent with at least ``min_consistent_views`` neighbours.

    Cameras are rescaled to the depth-map grids when their extents differ.
    """
    if not neighbor_depths:
        raise ContractError("geometric consistency needs at least one neighbour")
    cam_ref = grid_camera(cam_ref, depth_ref.shape)
    count = np.zeros(depth_ref.shape, np.int32)
    for d, c in zip(neighbor_depths, neighbor_cams):
        ok, _, _ = neighbor_consistency(depth_ref, cam_ref, d, grid_camera(c, d.shape), params.tau1, params.tau2)
        count += ok
    mask = (count >= params.min_consistent_views) & (depth_ref > 0)
    return mask, count


def nearest_upsample_index(n_fine: int, n_coarse: int) -> np.ndarray:
    """Coarse index covering each fine pixel centre."""
    idx = np.floor((np.arange(n_fine) + 0.5) * n_coarse / n_fine).astype(np.int64)
    return np.minimum(idx, n_coarse - 1)


def upsample_nearest(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    iy = nearest_upsample_index(shape[0], arr.shape[0])
    ix = nearest_upsample_index(shape[1], arr.shape[1])
    return arr[np.ix_(iy, ix)]


def _neighbors_of(i: int, n: int, neighbors) -> list[int]:
    if neighbors is None:
        return [j for j in range(n) if j != i]
    return list(neighbors[i])


def aggregate_level(
    fine: list[DepthEstimate],
    coarse: list[DepthEstimate],
    coarse_cams: list[Camera],
    params: MultiMetricParams,
    neighbors: dict[int, list[int]] | None = None,
) -> tuple[list[DepthEstimate], list[int]]:
    """Replace unreliable fine pixels by verified coarse ones, for every view.

    Returns the refined fine-level estimates (fresh arrays) and the number of
    replaced pixels per view.
    """
    if len(fine) != len(coarse) or len(coarse) != len(coarse_cams):
        raise ShapeError("fine, coarse and camera lists must cover the same views")
    refined, replaced = [], []
    for i, (f, c) in enumerate(zip(fine, coarse)):
        if c.level != f.level + 1:
            raise ShapeError(f"level mismatch: fine level {f.level}, coarse level {c.level}")
        nbrs = _neighbors_of(i, len(coarse), neighbors)
        candidate = c.confidence > params.eps_high
        if candidate.any() and nbrs:
            geo, _ = geometric_consistency(
                c.depth, coarse_cams[i], [coarse[j].depth for j in nbrs], [coarse_cams[j] for j in nbrs], params
            )
            candidate &= geo
        else:
            candidate &= False
        cand_up = upsample_nearest(candidate, f.depth.shape)
        swap = (f.confidence < params.eps_low) & cand_up
        depth = f.depth.copy()
        conf = f.confidence.copy()
        depth[swap] = upsample_nearest(c.depth, f.depth.shape)[swap]
        conf[swap] = upsample_nearest(c.confidence, f.depth.shape)[swap]
        refined.append(DepthEstimate(depth, conf, f.level))
        replaced.append(int(swap.sum()))
    return refined, replaced


@dataclass
class PyramidDepthSet:
    """Per level: estimates for every view plus that level's (grid) cameras."""

    estimates: list[list[DepthEstimate]]
    cameras: list[list[Camera]]
    replaced: list[list[int]] = field(default_factory=list)


def aggregate_pyramid(
    pset: PyramidDepthSet,
    params: MultiMetricParams,
    neighbors: dict[int, list[int]] | None = None,
) -> tuple[list[DepthEstimate], dict[int, list[int]]]:
    """Fold :func:`aggregate_level` from the coarsest pair down to level 0.

    Returns the refined level-0 estimates and replaced-pixel counts keyed by
    the fine level of each step.
    """
    levels = len(pset.estimates)
    if levels < 1:
        raise ContractError("pyramid has no levels")
    current = pset.estimates[-1]
    report: dict[int, list[int]] = {}
    for k in range(levels - 2, -1, -1):
        current, counts = aggregate_level(pset.estimates[k], current, pset.cameras[k + 1], params, neighbors)
        report[k] = counts
    return current, report
