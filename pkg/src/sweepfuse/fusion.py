"""Confidence and geometric filtering of depth maps, point fusion, and cloud evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import MultiMetricParams
from .errors import ContractError, ShapeError
from .geometry import Camera, grid_camera, pixel_grid, project, unproject
from .pipeline import DepthEstimate
from .pyramid import area_resample, neighbor_consistency

logger = logging.getLogger(__name__)

FUSION_MIN_VIEWS = 3


@dataclass
class PointCloud:
    points: np.ndarray  # [P, 3] float64, world millimetres
    colors: np.ndarray  # [P, 3] uint8
    source_view: np.ndarray  # [P] int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.colors = (
            np.zeros((n, 3), np.uint8) if self.colors is None else np.asarray(self.colors, np.uint8).reshape(-1, 3)
        )
        self.source_view = (
            np.zeros(n, np.int64) if self.source_view is None else np.asarray(self.source_view, np.int64).reshape(-1)
        )
        if len(self.colors) != n or len(self.source_view) != n:
            raise ShapeError("points, colors and source_view must have equal length")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class FilteredView:
    """Surviving pixels of one view on its depth-map grid."""

    camera: Camera  # grid camera of the depth map
    mask: np.ndarray
    depth: np.ndarray
    colors: np.ndarray | None = None  # [3, H, W] in [0, 1]


def filter_depth(
    est: DepthEstimate,
    camera: Camera,
    neighbor_estimates: list[DepthEstimate],
    neighbor_cameras: list[Camera],
    conf_threshold: float,
    params: MultiMetricParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Mask of reliable pixels and their depth averaged over consistent neighbours.

    A pixel survives when its confidence is strictly above ``conf_threshold``
    and it is geometrically consistent with at least three neighbours.
    """
    cam = grid_camera(camera, est.depth.shape)
    depth = est.depth.astype(np.float64)
    total = depth.copy()
    count = np.zeros(depth.shape, np.int32)
    for nb, nb_cam in zip(neighbor_estimates, neighbor_cameras):
        ok, _, reproj = neighbor_consistency(
            depth, cam, nb.depth, grid_camera(nb_cam, nb.depth.shape), params.tau1, params.tau2
        )
        count += ok
        total += np.where(ok, reproj, 0.0)
    mask = (est.confidence > conf_threshold) & (count >= FUSION_MIN_VIEWS) & (depth > 0)
    averaged = np.where(mask, total / (count + 1), 0.0)
    return mask, averaged


def fuse(views: list[FilteredView], params: MultiMetricParams) -> PointCloud:
    """Unproject surviving pixels view by view, skipping points already explained by an earlier view.

    A point of view ``v`` is a duplicate when it projects into an earlier
    view within ``tau1`` pixels of a surviving pixel whose depth agrees
    within ``tau2`` relative.
    """
    points, colors, sources = [], [], []
    for v, view in enumerate(views):
        cam = view.camera
        h, w = view.mask.shape
        pix = pixel_grid(w, h)[view.mask]
        if len(pix) == 0:
            continue
        X = unproject(cam, pix, view.depth[view.mask])
        keep = np.ones(len(X), bool)
        for prev in views[:v]:
            uv, z = project(prev.camera, X)
            ph, pw = prev.mask.shape
            with np.errstate(invalid="ignore"):
                q = np.rint(uv)
                inside = np.isfinite(uv).all(axis=1) & (q[:, 0] >= 0) & (q[:, 0] < pw) & (q[:, 1] >= 0) & (q[:, 1] < ph)
            qi = np.where(inside[:, None], q, 0).astype(np.int64)
            d_prev = prev.depth[qi[:, 1], qi[:, 0]]
            near = np.linalg.norm(uv - q, axis=1) < params.tau1
            dup = inside & near & prev.mask[qi[:, 1], qi[:, 0]] & (np.abs(z - d_prev) < params.tau2 * d_prev)
            keep &= ~dup
        points.append(X[keep])
        if view.colors is not None:
            rgb = area_resample(np.asarray(view.colors, np.float64), w, h)
            c = rgb[:, view.mask].T[keep]
            colors.append(np.clip(np.rint(c * 255.0), 0, 255).astype(np.uint8))
        else:
            colors.append(np.zeros((int(keep.sum()), 3), np.uint8))
        sources.append(np.full(int(keep.sum()), v, np.int64))
        logger.debug("view %d: %d of %d points kept", v, int(keep.sum()), len(keep))
    if not points:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.int64))
    return PointCloud(np.concatenate(points), np.concatenate(colors), np.concatenate(sources))


@dataclass
class EvalReport:
    accuracy_mm: float
    completeness_mm: float
    overall_mm: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "accuracy_mm": self.accuracy_mm,
            "completeness_mm": self.completeness_mm,
            "overall_mm": self.overall_mm,
            "n_points": self.n_points,
        }


def nearest_distances(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Distance from each query point to its nearest reference point."""
    dist, _ = cKDTree(reference).query(query, k=1)
    return dist


def evaluate(pred, gt, dist_threshold: float) -> EvalReport:
    """Accuracy (pred to GT, outliers beyond ``dist_threshold`` dropped), completeness and their mean.

    Accuracy is NaN when every predicted point is an outlier.
    """
    p = pred.points if isinstance(pred, PointCloud) else np.asarray(pred, np.float64).reshape(-1, 3)
    g = gt.points if isinstance(gt, PointCloud) else np.asarray(gt, np.float64).reshape(-1, 3)
    if len(p) == 0 or len(g) == 0:
        raise ContractError("evaluation needs non-empty predicted and GT clouds")
    if not dist_threshold > 0:
        raise ContractError("distance threshold must be positive")
    acc_d = nearest_distances(p, g)
    kept = acc_d[acc_d <= dist_threshold]
    accuracy = float(kept.mean()) if kept.size else float("nan")
    completeness = float(nearest_distances(g, p).mean())
    return EvalReport(accuracy, completeness, (accuracy + completeness) / 2, len(p))
