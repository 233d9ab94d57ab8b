"""Readers and writers for PFM depth maps, PLY clouds, camera text files and images."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import Camera, DepthRange


def write_pfm(path, image: np.ndarray) -> None:
    """Write a single-channel float map as little-endian ``Pf`` with bottom-up rows."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise FormatError(f"PFM writer expects a 2-D map, got shape {list(image.shape)}")
    h, w = image.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(image).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    pos = 0
    fields = []
    # header is three whitespace-separated lines: id, "w h", scale
    for expected in (1, 2, 1):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated PFM header", pos)
        line = buf[pos:end].decode("ascii", errors="replace").strip()
        parts = line.split()
        if len(parts) != expected:
            raise FormatError(f"malformed PFM header line {line!r}", pos)
        fields.append((parts, pos))
        pos = end + 1
    (ident,), ident_pos = fields[0]
    if ident == "PF":
        raise FormatError("colour PFM ('PF') where a single-channel map was expected", ident_pos)
    if ident != "Pf":
        raise FormatError(f"not a PFM file (identifier {ident!r})", ident_pos)
    try:
        w, h = (int(v) for v in fields[1][0])
        scale = float(fields[2][0][0])
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}", fields[1][1]) from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError("invalid PFM extents or scale", fields[1][1])
    dtype = "<f4" if scale < 0 else ">f4"
    need = 4 * w * h
    if len(buf) - pos < need:
        raise FormatError(f"truncated PFM payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return np.flipud(data).astype(np.float32)


_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uchar red\n"
    "property uchar green\n"
    "property uchar blue\n"
    "end_header\n"
)
_PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if colors is None:
        colors = np.full(points.shape, 255, dtype=np.uint8)
    colors = np.clip(np.asarray(colors), 0, 255).astype(np.uint8).reshape(-1, 3)
    rec = np.empty(len(points), dtype=_PLY_DTYPE)
    for i, axis in enumerate("xyz"):
        rec[axis] = points[:, i]
    for i, ch in enumerate(("red", "green", "blue")):
        rec[ch] = colors[:, i]
    Path(path).write_bytes(_PLY_HEADER.format(n=len(points)).encode("ascii") + rec.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read the vertex layout written by :func:`write_ply`; returns (points, colors)."""
    buf = Path(path).read_bytes()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file", 0)
    header = buf[:end].decode("ascii")
    if "format binary_little_endian 1.0" not in header:
        raise FormatError("only binary_little_endian PLY is supported", 0)
    m = re.search(r"element vertex (\d+)", header)
    if m is None:
        raise FormatError("PLY header has no vertex element", 0)
    props = re.findall(r"property (\w+) (\w+)", header)
    if props != [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ]:
        raise FormatError(f"unsupported PLY vertex layout {props}", 0)
    n = int(m.group(1))
    start = end + len(b"end_header\n")
    if len(buf) - start < n * _PLY_DTYPE.itemsize:
        raise FormatError("truncated PLY payload", len(buf))
    rec = np.frombuffer(buf, dtype=_PLY_DTYPE, count=n, offset=start)
    points = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return points, colors


def _fmt(x: float) -> str:
    return repr(float(x))


def format_camera(cam: Camera, depth_range: DepthRange) -> str:
    E = cam.extrinsic
    lines = ["extrinsic"]
    lines += [" ".join(_fmt(v) for v in row) for row in E]
    lines += ["", "intrinsic"]
    lines += [" ".join(_fmt(v) for v in row) for row in cam.K]
    lines += [
        "",
        f"{_fmt(depth_range.d_min)} {_fmt(depth_range.interval)} {depth_range.count} {_fmt(depth_range.d_max)}",
    ]
    return "\n".join(lines) + "\n"


def write_camera(path, cam: Camera, depth_range: DepthRange) -> None:
    Path(path).write_text(format_camera(cam, depth_range))


def parse_camera(text: str, width: int = 0, height: int = 0) -> tuple[Camera, DepthRange]:
    """Parse the extrinsic/intrinsic/depth-range text layout.

    Image extents are not part of the file and are supplied by the caller.
    """
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, ln) for no, ln in lines if ln]

    def block(keyword: str, rows: int, cols: int) -> tuple[np.ndarray, int]:
        for k, (no, ln) in enumerate(lines):
            if ln == keyword:
                body = lines[k + 1 : k + 1 + rows]
                if len(body) < rows:
                    raise FormatError(f"'{keyword}' block at line {no} is truncated", no)
                try:
                    mat = np.array([[float(v) for v in ln.split()] for _, ln in body])
                except ValueError:
                    raise FormatError(f"non-numeric entry in '{keyword}' block after line {no}", no) from None
                if mat.shape != (rows, cols):
                    raise FormatError(f"'{keyword}' block at line {no} is not {rows}x{cols}", no)
                return mat, k + 1 + rows
        missing_at = lines[-1][0] if lines else 0
        raise FormatError(f"missing '{keyword}' block (file ends at line {missing_at})", missing_at)

    E, _ = block("extrinsic", 4, 4)
    K, after = block("intrinsic", 3, 3)
    if after >= len(lines):
        raise FormatError("missing depth range line after intrinsic block", lines[-1][0])
    no, ln = lines[after]
    parts = ln.split()
    if len(parts) != 4:
        raise FormatError(f"depth range line {no} needs 'd_min d_interval d_count d_max'", no)
    try:
        d_min, _, count, d_max = float(parts[0]), float(parts[1]), int(float(parts[2])), float(parts[3])
    except ValueError:
        raise FormatError(f"non-numeric depth range on line {no}", no) from None
    cam = Camera(K[0, 0], K[1, 1], K[0, 2], K[1, 2], E[:3, :3], E[:3, 3], width, height)
    return cam, DepthRange(d_min, d_max, count)


def read_camera(path, width: int = 0, height: int = 0) -> tuple[Camera, DepthRange]:
    return parse_camera(Path(path).read_text(), width, height)


def write_image(path, image: np.ndarray) -> None:
    """Write a ``[3, H, W]`` float image in [0, 1] as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    """Read an 8-bit RGB image as ``[3, H, W]`` float32 in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()
