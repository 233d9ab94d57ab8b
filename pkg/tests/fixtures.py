"""Constructed fixtures shared by module tests and the acceptance run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sweepfuse.config import MultiMetricParams
from sweepfuse.geometry import Camera, grid_camera, pixel_grid, project, scale_camera, unproject
from sweepfuse.pipeline import DepthEstimate
from sweepfuse.pyramid import PyramidDepthSet, geometric_consistency, upsample_nearest
from sweepfuse.reconstruct import neighbor_table
from sweepfuse.synthetic import box_scene, render_depth


def gt_levels(scene, levels: int, conf: float = 0.95):
    """Exact depth on every level's estimate grid, at a fixed confidence."""
    estimates, cameras = [], []
    for k in range(levels):
        level_cams = [scale_camera(c, 1 / 2**k) for c in scene.cameras]
        grid = [grid_camera(c, (c.height // 4, c.width // 4)) for c in level_cams]
        depth = [render_depth(scene, c).astype(np.float32) for c in grid]
        estimates.append([DepthEstimate(d, np.full(d.shape, conf, np.float32), k) for d in depth])
        cameras.append(grid)
    return estimates, cameras


@dataclass
class CorruptionFixture:
    pset: PyramidDepthSet
    neighbors: dict[int, list[int]]
    gt: list[np.ndarray]  # level-0 GT per view
    corrupted: list[np.ndarray]  # level-0 masks
    repairable: list[np.ndarray]  # corrupted pixels whose coarse parent passes both gates
    parent_depth: list[np.ndarray]  # coarse depth upsampled to level 0


def corruption_fixture(
    levels: int = 3, fraction: float = 0.1, seed: int = 0, params: MultiMetricParams | None = None
) -> CorruptionFixture:
    """Verified GT on every level; ``fraction`` of level-0 pixels replaced by noise at confidence 0.1."""
    params = params or MultiMetricParams()
    scene = box_scene(3, 0, n_views=5, width=320, height=256)
    estimates, cameras = gt_levels(scene, levels)
    rng = np.random.default_rng(seed)
    gt, corrupted = [], []
    for est in estimates[0]:
        gt.append(est.depth.copy())
        m = (rng.random(est.depth.shape) < fraction) & (est.depth > 0)
        est.depth[m] = rng.uniform(425.0, 935.0, int(m.sum())).astype(np.float32)
        est.confidence[m] = 0.1
        corrupted.append(m)
    neighbors = neighbor_table(cameras[0], 5)
    repairable, parent = [], []
    if levels > 1:
        coarse, cams = estimates[1], cameras[1]
        for i, m in enumerate(corrupted):
            geo, _ = geometric_consistency(
                coarse[i].depth,
                cams[i],
                [coarse[j].depth for j in neighbors[i]],
                [cams[j] for j in neighbors[i]],
                params,
            )
            cand = upsample_nearest(geo & (coarse[i].confidence > params.eps_high), m.shape)
            repairable.append(m & cand)
            parent.append(upsample_nearest(coarse[i].depth, m.shape))
    return CorruptionFixture(PyramidDepthSet(estimates, cameras), neighbors, gt, corrupted, repairable, parent)


def deviating(depths: list[np.ndarray], gt: list[np.ndarray], rel: float = 0.01) -> int:
    """GT-covered pixels off by more than ``rel`` relative depth, summed over views."""
    return int(sum(((np.abs(d - g) > rel * g) & (g > 0)).sum() for d, g in zip(depths, gt)))


def coincident_pair(width: int = 32, height: int = 24) -> tuple[Camera, Camera]:
    cam = Camera(40.0, 40.0, (width - 1) / 2, (height - 1) / 2, np.eye(3), np.zeros(3), width, height)
    return cam, cam


def visible_count(scene, ref_depth: np.ndarray, i: int, others: list[int]) -> np.ndarray:
    """Per pixel of view ``i``: how many of ``others`` see its surface point unoccluded.

    A view counts only when the whole 3x3 pixel patch around the projection
    sees the same surface, so silhouettes never count as visible.
    """
    cams = scene.cameras
    ok = ref_depth > 0
    X = unproject(cams[i], pixel_grid(cams[i].width, cams[i].height)[ok], ref_depth[ok])
    count = np.zeros(len(X), np.int64)
    for j in others:
        uv, z = project(cams[j], X)
        with np.errstate(invalid="ignore"):
            q = np.rint(uv)
            inside = np.isfinite(q).all(axis=1)
            inside &= (q[:, 0] >= 1) & (q[:, 0] < cams[j].width - 1) & (q[:, 1] >= 1) & (q[:, 1] < cams[j].height - 1)
        dj = render_depth(scene, cams[j])
        qi = q[inside].astype(int)
        patch = np.ones(len(qi), bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                patch &= np.abs(dj[qi[:, 1] + dy, qi[:, 0] + dx] - z[inside]) < 0.02 * z[inside]
        seen = np.zeros(len(X), bool)
        seen[inside] = patch
        count += seen
    out = np.zeros(ref_depth.shape, np.int64)
    out[ok] = count
    return out
