"""Pinhole cameras, the BEV voxel query grid, and view projection.

Conventions:
  * world -> camera: p_cam = R @ p_world + t  (R orthonormal, det +1)
  * pixel projection: u = fx * x/z + cx, v = fy * y/z + cy
  * feature-map coordinates are pixel coordinates divided by the camera's
    feature stride, preserving sub-cell precision
  * a projection is valid when its depth exceeds ``z_near`` and its
    feature-map location falls inside the sample-able lattice
    [0, W_f - 1] x [0, H_f - 1] expanded by ``margin`` cells
Invalid entries carry the sentinel coordinate and must never be dereferenced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Z_NEAR = 1e-4
SENTINEL = -1.0e4


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics, world-to-camera extrinsics, image geometry."""

    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) world -> camera
    translation: np.ndarray   # (3,) meters
    width: int
    height: int
    feature_stride: int = 1

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        err = np.abs(r @ r.T - np.eye(3)).max()
        det = np.linalg.det(r)
        if err > 1e-7 or abs(det - 1.0) > 1e-6:
            raise ValueError(
                f"camera '{self.name}': rotation not orthonormal "
                f"(|RR^T - I| = {err:.2e}, det = {det:.9f})")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"camera '{self.name}': focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"camera '{self.name}': principal point ({self.cx}, {self.cy}) "
                             f"outside image {self.width}x{self.height}")
        if self.feature_stride < 1 or self.width % self.feature_stride or self.height % self.feature_stride:
            raise ValueError(f"camera '{self.name}': feature_stride {self.feature_stride} "
                             f"must divide image {self.width}x{self.height}")

    @property
    def feature_width(self) -> int:
        return self.width // self.feature_stride

    @property
    def feature_height(self) -> int:
        return self.height // self.feature_stride

    def with_stride(self, feature_stride: int) -> "Camera":
        return Camera(self.name, self.fx, self.fy, self.cx, self.cy,
                      self.rotation, self.translation, self.width, self.height,
                      feature_stride)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class BevGrid:
    """Voxel grid over the workspace; reference points are voxel centers in
    row-major (x, y, z) index order."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    resolution: tuple[float, float, float]
    counts: tuple[int, int, int]
    reference_points: np.ndarray = field(repr=False)  # (N, 3) float64

    @property
    def num_points(self) -> int:
        return self.counts[0] * self.counts[1] * self.counts[2]


def build_grid(ranges, resolution) -> BevGrid:
    """Build the voxel grid from per-axis (min, max) ranges and cell sizes."""
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    resolution = tuple(float(d) for d in resolution)
    counts = []
    for (lo, hi), delta in zip(ranges, resolution):
        if hi <= lo:
            raise ValueError(f"range ({lo}, {hi}) is empty")
        if delta <= 0:
            raise ValueError(f"resolution {delta} must be positive")
        cells = (hi - lo) / delta
        n = round(cells)
        if abs(cells - n) > 1e-6 or n < 1:
            raise ValueError(
                f"range ({lo}, {hi}) is not an integral number of {delta} cells "
                f"(remainder {cells - n:+.3e})")
        counts.append(int(n))
    axes = [lo + (np.arange(n) + 0.5) * d
            for (lo, _), d, n in zip(ranges, resolution, counts)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    points = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return BevGrid(ranges[0], ranges[1], ranges[2], resolution,
                   (counts[0], counts[1], counts[2]), points)


@dataclass(frozen=True)
class ProjectionTable:
    """Per (query, view) feature-map location, depth, and validity."""

    uv: np.ndarray      # (N, M, 2) feature-map coordinates; sentinel when invalid
    depth: np.ndarray   # (N, M) meters
    valid: np.ndarray   # (N, M) bool

    @property
    def num_queries(self) -> int:
        return self.uv.shape[0]

    @property
    def num_views(self) -> int:
        return self.uv.shape[1]


def project_points(camera: Camera, points: np.ndarray,
                   margin: float = 0.5, z_near: float = Z_NEAR):
    """Project world points into one camera's feature map.

    Returns (uv (N, 2), depth (N,), valid (N,)); invalid rows hold the
    sentinel coordinate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ camera.rotation.T + camera.translation
    z = cam[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    u = (camera.fx * cam[:, 0] / safe_z + camera.cx) / camera.feature_stride
    v = (camera.fy * cam[:, 1] / safe_z + camera.cy) / camera.feature_stride
    wf, hf = camera.feature_width, camera.feature_height
    valid = ((z > z_near)
             & (u >= -margin) & (u <= wf - 1 + margin)
             & (v >= -margin) & (v <= hf - 1 + margin))
    uv = np.stack([np.where(valid, u, SENTINEL), np.where(valid, v, SENTINEL)], axis=1)
    return uv, z, valid


def project(camera: Camera, point, margin: float = 0.5,
            z_near: float = Z_NEAR) -> tuple[float, float, float, bool]:
    """Project a single world point; never raises on bad geometry."""
    uv, z, valid = project_points(camera, np.asarray(point, dtype=np.float64).reshape(1, 3),
                                  margin=margin, z_near=z_near)
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0]), bool(valid[0])


def project_grid(cameras: list[Camera], grid: BevGrid,
                 margin: float = 0.5, z_near: float = Z_NEAR) -> ProjectionTable:
    """Project every grid reference point into every view."""
    if not cameras:
        raise ValueError("project_grid requires at least one camera")
    uvs, depths, valids = [], [], []
    for cam in cameras:
        uv, z, valid = project_points(cam, grid.reference_points, margin=margin, z_near=z_near)
        uvs.append(uv)
        depths.append(z)
        valids.append(valid)
    return ProjectionTable(np.stack(uvs, axis=1), np.stack(depths, axis=1),
                           np.stack(valids, axis=1))


def rig_coverage(table: ProjectionTable) -> np.ndarray:
    """Fraction of queries each view observes (rig-sanity diagnostic)."""
    return table.valid.mean(axis=0)


def look_at_camera(name: str, position, target, fx: float, fy: float,
                   width: int, height: int, feature_stride: int = 1,
                   up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera at ``position`` looking toward ``target`` (x right, y down, z forward)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with its target")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, -up)
    if np.linalg.norm(right) < 1e-9:  # looking straight along up: pick any right
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward], axis=0)
    t = -r @ position
    return Camera(name, fx, fy, width / 2.0, height / 2.0, r, t, width, height,
                  feature_stride)


def save_rig(path: str | Path, cameras: list[Camera]) -> None:
    records = [{
        "name": c.name, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "R": [float(x) for x in c.rotation.ravel()],
        "t": [float(x) for x in c.translation],
        "width": c.width, "height": c.height,
    } for c in cameras]
    Path(path).write_text(json.dumps(records, indent=1))


def load_rig(path: str | Path, feature_stride: int = 1) -> list[Camera]:
    """Load a camera rig; orthonormality is re-validated on construction."""
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list) or not records:
        raise ValueError(f"rig file {path} must hold a non-empty camera array")
    return [Camera(r["name"], r["fx"], r["fy"], r["cx"], r["cy"],
                   np.asarray(r["R"], dtype=np.float64).reshape(3, 3),
                   np.asarray(r["t"], dtype=np.float64),
                   r["width"], r["height"], feature_stride)
            for r in records]
