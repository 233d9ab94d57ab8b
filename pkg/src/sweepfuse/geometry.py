"""Pinhole cameras, plane-induced homographies and depth hypothesis sampling.

Conventions: ``x_cam = R @ x_world + t`` (world to camera), pixel centres at
integer coordinates, depth is the camera-frame z coordinate in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 0
    height: int = 0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ConfigError("rotation is not orthonormal")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    @property
    def extrinsic(self) -> np.ndarray:
        E = np.eye(4)
        E[:3, :3] = self.R
        E[:3, 3] = self.t
        return E

    def same_as(self, other: Camera) -> bool:
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )


@dataclass(frozen=True)
class DepthRange:
    d_min: float
    d_max: float
    count: int

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ConfigError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.count < 2:
            raise ConfigError(f"need at least 2 depth hypotheses, got {self.count}")

    @property
    def interval(self) -> float:
        """Mean spacing between hypotheses (informational; sampling is in 1/d)."""
        return (self.d_max - self.d_min) / (self.count - 1)


def sample_inverse_depth(depth_range: DepthRange) -> np.ndarray:
    """Hypotheses uniformly spaced in inverse depth, increasing in depth."""
    if depth_range.count < 2:
        raise ConfigError("need at least 2 depth hypotheses")
    inv_min, inv_max = 1.0 / depth_range.d_min, 1.0 / depth_range.d_max
    j = np.arange(depth_range.count, dtype=np.float64)
    depths = 1.0 / (inv_min + j / (depth_range.count - 1) * (inv_max - inv_min))
    depths[0], depths[-1] = depth_range.d_min, depth_range.d_max
    return depths


def local_spacing(depths: np.ndarray, d: np.ndarray | float) -> np.ndarray:
    """Gap between the two hypotheses bracketing ``d``."""
    depths = np.asarray(depths)
    i = np.clip(np.searchsorted(depths, d), 1, len(depths) - 1)
    return depths[i] - depths[i - 1]


def relative_pose(ref: Camera, src: Camera) -> tuple[np.ndarray, np.ndarray]:
    R_rel = src.R @ ref.R.T
    return R_rel, src.t - R_rel @ ref.t


def plane_homography(ref: Camera, src: Camera, d) -> np.ndarray:
    """Map reference pixels to source pixels via the fronto-parallel plane at depth ``d``.

    Accepts a scalar depth (returns 3x3) or an array of depths (returns
    ``[D, 3, 3]``). Each matrix is normalized so ``H[2, 2] == 1``.
    """
    d_arr = np.asarray(d, dtype=np.float64)
    if np.any(d_arr <= 0):
        raise ContractError("plane depth must be positive")
    R_rel, t_rel = relative_pose(ref, src)
    n = np.array([0.0, 0.0, 1.0])
    plane = R_rel[None] + np.outer(t_rel, n)[None] / d_arr.reshape(-1, 1, 1)
    H = src.K[None] @ plane @ ref.K_inv[None]
    H = H / H[:, 2:3, 2:3]
    return H[0] if d_arr.ndim == 0 else H


def project(cam: Camera, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World points ``[..., 3]`` to pixels ``[..., 2]`` and depths ``[...]``.

    Points at or behind the camera plane get NaN pixel coordinates.
    """
    X = np.asarray(X, dtype=np.float64)
    Xc = X @ cam.R.T + cam.t
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(z > 0, 1.0 / z, np.nan)
    u = cam.fx * Xc[..., 0] * inv + cam.cx
    v = cam.fy * Xc[..., 1] * inv + cam.cy
    return np.stack([u, v], axis=-1), z


def unproject(cam: Camera, pixels: np.ndarray, depth) -> np.ndarray:
    """Pixels ``[..., 2]`` at depths ``[...]`` back to world points ``[..., 3]``."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ContractError("unproject needs positive depth")
    x = (pixels[..., 0] - cam.cx) / cam.fx * depth
    y = (pixels[..., 1] - cam.cy) / cam.fy * depth
    Xc = np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)
    return (Xc - cam.t) @ cam.R


def scale_camera(cam: Camera, factor: float, factor_y: float | None = None) -> Camera:
    """Camera for an image resampled by ``factor`` (0.5 halves each extent).

    ``factor_y`` gives a separate vertical factor for anisotropic resampling.
    """
    fy_scale = factor if factor_y is None else factor_y
    if not (factor > 0 and fy_scale > 0):
        raise ConfigError(f"scale factor must be positive, got {factor}, {fy_scale}")
    if factor == 1 and fy_scale == 1:
        return cam
    return replace(
        cam,
        fx=cam.fx * factor,
        fy=cam.fy * fy_scale,
        cx=(cam.cx + 0.5) * factor - 0.5,
        cy=(cam.cy + 0.5) * fy_scale - 0.5,
        width=round(cam.width * factor),
        height=round(cam.height * fy_scale),
    )


def grid_camera(cam: Camera, shape: tuple[int, int]) -> Camera:
    """``cam`` rescaled to a map of ``shape`` (H, W) covering the same image."""
    h, w = shape
    if (w, h) == (cam.width, cam.height):
        return cam
    return scale_camera(cam, w / cam.width, h / cam.height)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Integer pixel centres as ``[H, W, 2]`` (x, y)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``center`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ center
