"""End-to-end orchestration: per-view depth at every pyramid level, refinement, filtering and fusion."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .fusion import FilteredView, PointCloud, filter_depth, fuse
from .geometry import Camera, grid_camera, sample_inverse_depth
from .networks import MVSModel
from .pipeline import DepthEstimate, estimate_depth, select_views
from .pyramid import PyramidDepthSet, aggregate_pyramid, build_pyramid

logger = logging.getLogger(__name__)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def neighbor_table(cameras: list[Camera], n_views: int) -> dict[int, list[int]]:
    """Source views used for each reference view (nearest camera centres)."""
    count = min(n_views, len(cameras))
    return {i: select_views(cameras, i, count)[1:] for i in range(len(cameras))}


def estimate_views(
    images,
    cameras: list[Camera],
    config: RunConfig,
    model: MVSModel | None = None,
    refs: list[int] | None = None,
    level: int = 0,
) -> list[DepthEstimate]:
    """Depth estimate for each reference view in ``refs`` (default: all views)."""
    depths = sample_inverse_depth(config.depth_range)
    table = neighbor_table(cameras, config.views_test)
    refs = list(range(len(cameras))) if refs is None else refs

    def run(ref):
        order = [ref] + table[ref]
        return estimate_depth(
            [images[i] for i in order], [cameras[i] for i in order], depths, config.mode, model, level
        )

    return _map(run, refs, config.jobs)


def estimate_pyramid(
    images, cameras: list[Camera], config: RunConfig, model: MVSModel | None = None
) -> PyramidDepthSet:
    """Independent depth estimates on every pyramid level, with grid cameras per level."""
    levels = build_pyramid(images, cameras, config.pyramid)
    estimates, grid_cams = [], []
    for k, (imgs, cams) in enumerate(levels):
        ests = estimate_views(imgs, cams, config, model, level=k)
        estimates.append(ests)
        grid_cams.append([grid_camera(c, e.depth.shape) for c, e in zip(cams, ests)])
        logger.info(
            "level %d: %dx%d images, %dx%d depth maps",
            k,
            imgs[0].shape[2],
            imgs[0].shape[1],
            *ests[0].depth.shape[::-1],
        )
    return PyramidDepthSet(estimates, grid_cams)


@dataclass
class Reconstruction:
    refined: list[DepthEstimate]
    replaced: dict[int, list[int]]
    cloud: PointCloud
    views: list[FilteredView]


def filter_views(
    estimates: list[DepthEstimate], cameras: list[Camera], images, config: RunConfig
) -> list[FilteredView]:
    table = neighbor_table(cameras, config.views_test)

    def run(i):
        nbrs = table[i]
        mask, depth = filter_depth(
            estimates[i],
            cameras[i],
            [estimates[j] for j in nbrs],
            [cameras[j] for j in nbrs],
            config.fusion_conf,
            config.multimetric,
        )
        colors = images[i] if images is not None else None
        return FilteredView(grid_camera(cameras[i], mask.shape), mask, depth, colors)

    return _map(run, range(len(estimates)), config.jobs)


def reconstruct(images, cameras: list[Camera], config: RunConfig, model: MVSModel | None = None) -> Reconstruction:
    """Pyramid estimation, multi-metric refinement, filtering and fusion of all views."""
    pset = estimate_pyramid(images, cameras, config, model)
    table = neighbor_table(pset.cameras[0], config.views_test)
    refined, replaced = aggregate_pyramid(pset, config.multimetric, table)
    views = filter_views(refined, cameras, images, config)
    cloud = fuse(views, config.multimetric)
    logger.info("fused %d points from %d views", len(cloud), len(views))
    return Reconstruction(refined, replaced, cloud, views)


def surviving_fraction(views: list[FilteredView]) -> float:
    return float(np.mean([v.mask.mean() for v in views]))
