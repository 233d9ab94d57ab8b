"""Ray-cast renderer for textured piecewise-planar scenes with analytic depth.

Textures are sums of sinusoids in surface coordinates whose frequencies stay
below the Nyquist limit of the coarsest sampling grid used downstream, so
every pyramid level sees matchable texture.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .geometry import Camera, DepthRange, look_at, pixel_grid, unproject

N_WAVES = 6


@dataclass
class Surface:
    """A textured rectangle (unbounded when ``half_extent`` is infinite).

    ``origin`` is the rectangle centre; ``u_axis``/``v_axis`` span the plane.
    """

    origin: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    v_axis: tuple[float, float, float]
    half_extent: tuple[float, float] = (float("inf"), float("inf"))
    texture_seed: int = 0
    max_frequency: float = 0.004

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u_axis, self.v_axis)
        return n / np.linalg.norm(n)

    def texture(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(base colour [3], frequencies [K, 2] in cycles/mm, phases [K, 3], amplitudes [K, 3])."""
        rng = np.random.default_rng(self.texture_seed)
        base = rng.uniform(0.35, 0.65, size=3)
        theta = rng.uniform(0, np.pi, size=N_WAVES)
        mag = self.max_frequency * rng.uniform(0.3, 1.0, size=N_WAVES)
        freqs = np.stack([mag * np.cos(theta), mag * np.sin(theta)], axis=1)
        phases = rng.uniform(0, 2 * np.pi, size=(N_WAVES, 3))
        amps = rng.uniform(0.2, 1.0, size=(N_WAVES, 3))
        amps *= 0.3 / amps.sum(axis=0, keepdims=True)
        return base, freqs, phases, amps

    def color(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        base, freqs, phases, amps = self.texture()
        arg = 2 * np.pi * (u[..., None] * freqs[:, 0] + v[..., None] * freqs[:, 1])
        waves = np.sin(arg[..., None] + phases) * amps
        return base + waves.sum(axis=-2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["half_extent"] = [None if np.isinf(x) else x for x in self.half_extent]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Surface:
        d = dict(d)
        d["half_extent"] = tuple(float("inf") if x is None else x for x in d["half_extent"])
        for key in ("origin", "u_axis", "v_axis"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SyntheticScene:
    surfaces: list[Surface]
    cameras: list[Camera]
    depth_range: DepthRange = field(default_factory=lambda: DepthRange(425.0, 935.0, 192))
    seed: int = 0


@dataclass
class RenderedView:
    image: np.ndarray  # [3, H, W] in [0, 1]
    depth: np.ndarray  # [H, W] millimetres, 0 where nothing is hit
    valid: np.ndarray  # [H, W] bool


def cast(surfaces: list[Surface], cam: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel nearest hit: (depth, surface index or -1, local coords [H, W, 2])."""
    pix = pixel_grid(cam.width, cam.height)
    dirs_cam = np.stack(
        [(pix[..., 0] - cam.cx) / cam.fx, (pix[..., 1] - cam.cy) / cam.fy, np.ones(pix.shape[:2])], axis=-1
    )
    dirs = dirs_cam @ cam.R  # camera-z component of each ray is 1, so ray parameter == depth
    origin = cam.center
    depth = np.full(pix.shape[:2], np.inf)
    index = np.full(pix.shape[:2], -1)
    coords = np.zeros(pix.shape[:2] + (2,))
    for k, s in enumerate(surfaces):
        n = s.normal
        p0 = np.asarray(s.origin, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - origin) @ n) / denom
        hit = origin + t[..., None] * dirs
        u = (hit - p0) @ np.asarray(s.u_axis)
        v = (hit - p0) @ np.asarray(s.v_axis)
        ok = np.isfinite(t) & (t > 0) & (np.abs(u) <= s.half_extent[0]) & (np.abs(v) <= s.half_extent[1])
        closer = ok & (t < depth)
        depth = np.where(closer, t, depth)
        index = np.where(closer, k, index)
        coords = np.where(closer[..., None], np.stack([u, v], axis=-1), coords)
    valid = index >= 0
    return np.where(valid, depth, 0.0), index, coords


def render_view(scene: SyntheticScene, cam: Camera) -> RenderedView:
    depth, index, coords = cast(scene.surfaces, cam)
    image = np.zeros((3,) + depth.shape)
    for k, s in enumerate(scene.surfaces):
        sel = index == k
        if sel.any():
            image[:, sel] = s.color(coords[sel][:, 0], coords[sel][:, 1]).T
    return RenderedView(np.clip(image, 0.0, 1.0), depth, index >= 0)


def render(scene: SyntheticScene) -> list[RenderedView]:
    return [render_view(scene, cam) for cam in scene.cameras]


def render_depth(scene: SyntheticScene, cam: Camera) -> np.ndarray:
    return cast(scene.surfaces, cam)[0]


def arc_cameras(
    n_views: int,
    width: int,
    height: int,
    radius: float = 680.0,
    step_deg: float = 7.0,
    focal_ratio: float = 1.2,
) -> list[Camera]:
    """Cameras on a horizontal arc around a point ``radius`` mm in front of view 0.

    View 0 sits at the origin looking down +z; later views alternate right and
    left with a small alternating elevation so epipolar lines are not all
    horizontal.
    """
    target = np.array([0.0, 0.0, radius])
    f = focal_ratio * width
    cams = []
    for i in range(n_views):
        k = (i + 1) // 2
        side = 1 if i % 2 else -1
        yaw = np.deg2rad(side * k * step_deg)
        pitch = np.deg2rad(0.25 * step_deg * (1 if k % 2 else -1)) if k else 0.0
        offset = np.array([np.sin(yaw) * np.cos(pitch), np.sin(pitch), -np.cos(yaw) * np.cos(pitch)])
        R, t = look_at(target + radius * offset, target)
        cams.append(Camera(f, f, (width - 1) / 2, (height - 1) / 2, R, t, width, height))
    return cams


def nyquist_frequency(cameras: list[Camera], depth_range: DepthRange, stride: float) -> float:
    """Highest texture frequency (cycles/mm) resolvable on a grid ``stride`` pixels apart at d_max."""
    fx = min(c.fx for c in cameras)
    spacing = stride * depth_range.d_max / fx
    return 0.8 / (2.0 * spacing)


def plane_scene(
    depth: float = 680.0,
    n_views: int = 3,
    width: int = 160,
    height: int = 128,
    seed: int = 0,
    depth_range: DepthRange | None = None,
    nyquist_stride: float = 16.0,
) -> SyntheticScene:
    """A single textured fronto-parallel plane at ``depth`` in view 0's frame."""
    depth_range = depth_range or DepthRange(425.0, 935.0, 64)
    cams = arc_cameras(n_views, width, height, radius=depth)
    fmax = nyquist_frequency(cams, depth_range, nyquist_stride)
    surf = Surface((0.0, 0.0, depth), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), texture_seed=seed, max_frequency=fmax)
    return SyntheticScene([surf], cams, depth_range, seed)


def _rotation(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def box_scene(
    index: int = 0,
    seed: int = 0,
    n_views: int = 5,
    width: int = 160,
    height: int = 128,
    depth_range: DepthRange | None = None,
    nyquist_stride: float = 16.0,
) -> SyntheticScene:
    """A slanted backdrop with a box in front of it.

    Geometry depends only on ``index`` and the camera layout is fixed, so two
    seeds give different textures over identical cameras.
    """
    depth_range = depth_range or DepthRange(425.0, 935.0, 192)
    cams = arc_cameras(n_views, width, height)
    fmax = nyquist_frequency(cams, depth_range, nyquist_stride)
    geo = np.random.default_rng([index, 7919])
    tex = np.random.default_rng([seed, index])
    tex_seeds = tex.integers(0, 2**31, size=4)

    back_depth = geo.uniform(660.0, 740.0)
    R_back = _rotation([0, 1, 0], geo.uniform(-0.15, 0.15)) @ _rotation([1, 0, 0], geo.uniform(-0.1, 0.1))
    surfaces = [
        Surface(
            (0.0, 0.0, back_depth),
            tuple(R_back[:, 0]),
            tuple(R_back[:, 1]),
            texture_seed=int(tex_seeds[0]),
            max_frequency=fmax,
        )
    ]
    front = geo.uniform(540.0, 640.0)
    half = geo.uniform(90.0, 140.0, size=2)
    depth_half = geo.uniform(40.0, 70.0)
    cx, cy = geo.uniform(-60.0, 60.0, size=2)
    yaw = geo.uniform(-0.4, 0.4)
    Rb = _rotation([0, 1, 0], yaw)
    ex, ey, ez = Rb[:, 0], Rb[:, 1], Rb[:, 2]
    centre = np.array([cx, cy, front + depth_half])
    faces = [
        (centre - depth_half * ez, ex, ey, (half[0], half[1])),
        (centre - half[0] * ex, -ez, ey, (depth_half, half[1])),
        (centre + half[0] * ex, ez, ey, (depth_half, half[1])),
    ]
    for k, (o, u, v, ext) in enumerate(faces):
        surfaces.append(Surface(tuple(o), tuple(u), tuple(v), ext, int(tex_seeds[1 + k % 3]), fmax))
    return SyntheticScene(surfaces, cams, depth_range, seed)


def scene_to_manifest(scene: SyntheticScene) -> dict:
    c0 = scene.cameras[0]
    return {
        "views": len(scene.cameras),
        "image_size": [c0.width, c0.height],
        "depth_range": [scene.depth_range.d_min, scene.depth_range.d_max, scene.depth_range.count],
        "surfaces": [s.to_dict() for s in scene.surfaces],
        "seed": scene.seed,
    }


def write_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write images, cameras, GT depth maps and the manifest for one scene."""
    out = Path(out_dir)
    for sub in ("images", "cams", "depths"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, (cam, view) in enumerate(zip(scene.cameras, render(scene))):
        io.write_image(out / "images" / f"{i:04d}.png", view.image)
        io.write_camera(out / "cams" / f"{i:04d}_cam.txt", cam, scene.depth_range)
        io.write_pfm(out / "depths" / f"{i:04d}.pfm", view.depth)
    (out / "manifest.json").write_text(json.dumps(scene_to_manifest(scene), indent=2, sort_keys=True) + "\n")
    return out


def make_dataset(
    out_dir,
    count: int,
    width: int = 160,
    height: int = 128,
    seed: int = 0,
    n_views: int = 5,
    depth_range: DepthRange | None = None,
) -> list[Path]:
    """Write ``count`` box scenes under ``out_dir/scene_XXXX`` plus a dataset manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(count):
        scene = box_scene(k, seed, n_views, width, height, depth_range)
        paths.append(write_scene(scene, out / f"scene_{k:04d}"))
    manifest = {"scenes": [p.name for p in paths], "seed": seed, "views": n_views, "image_size": [width, height]}
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


@dataclass
class SceneData:
    """A scene loaded from disk."""

    images: list[np.ndarray]
    cameras: list[Camera]
    depth_range: DepthRange
    gt_depths: list[np.ndarray]
    manifest: dict


def load_scene(scene_dir) -> SceneData:
    d = Path(scene_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    w, h = manifest["image_size"]
    images, cams, depths = [], [], []
    depth_range = None
    for i in range(manifest["views"]):
        images.append(io.read_image(d / "images" / f"{i:04d}.png"))
        cam, depth_range = io.read_camera(d / "cams" / f"{i:04d}_cam.txt", w, h)
        cams.append(cam)
        gt = d / "depths" / f"{i:04d}.pfm"
        depths.append(io.read_pfm(gt) if gt.exists() else None)
    return SceneData(images, cams, depth_range, depths, manifest)


def scene_from_manifest(manifest: dict, cameras: list[Camera]) -> SyntheticScene:
    d_min, d_max, count = manifest["depth_range"]
    return SyntheticScene(
        [Surface.from_dict(s) for s in manifest["surfaces"]], cameras, DepthRange(d_min, d_max, count), manifest["seed"]
    )


def gt_cloud(scene: SyntheticScene, stride: int = 1) -> np.ndarray:
    """Analytic surface samples: every ``stride``-th GT pixel of every view, unprojected."""
    pts = []
    for cam in scene.cameras:
        depth = render_depth(scene, cam)
        pix = pixel_grid(cam.width, cam.height)[::stride, ::stride]
        d = depth[::stride, ::stride]
        ok = d > 0
        pts.append(unproject(cam, pix[ok], d[ok]))
    return np.concatenate(pts, axis=0)
