"""Truncated signed distance fusion of depth maps into a voxel grid.

The fused grid is used to extract a single static point set from a whole
input video.  Moving content is not masked out; it is averaged away because
free-space observations outnumber the frames in which an object passes
through a voxel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, ColoredPointSet, Pose, valid_depth


@dataclass(frozen=True)
class TSDFConfig:
    """Fusion parameters; ``None`` fields are derived from the scene extent."""

    resolution: int = 128
    voxel_size: float | None = None
    truncation_voxels: float = 4.0
    weight_min: float = 2.0
    band: float = 0.25
    padding_voxels: int = 4


class VoxelGrid:
    """Dense TSDF volume with running-mean color.

    ``tsdf`` holds normalized signed distances in ``[-1, 1]`` (positive in
    front of the surface), ``weight`` the number of fused observations.
    """

    def __init__(self, origin, voxel_size: float, dims):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        self.tsdf = np.ones(self.dims)
        self.weight = np.zeros(self.dims)
        self.color = np.zeros(self.dims + (3,))

    @classmethod
    def from_bounds(cls, lo, hi, config: TSDFConfig = TSDFConfig()) -> "VoxelGrid":
        """Grid covering the box ``[lo, hi]`` with ``config`` sizing and padding."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        extent = float(np.max(hi - lo))
        voxel = config.voxel_size or extent / config.resolution
        pad = config.padding_voxels * voxel
        lo = lo - pad
        dims = np.ceil((hi + pad - lo) / voxel).astype(int) + 1
        return cls(lo, voxel, dims)

    def centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape ``dims + (3,)``."""
        axes = [self.origin[k] + self.voxel_size * np.arange(self.dims[k]) for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def copy(self) -> "VoxelGrid":
        out = VoxelGrid(self.origin, self.voxel_size, self.dims)
        out.tsdf = self.tsdf.copy()
        out.weight = self.weight.copy()
        out.color = self.color.copy()
        return out


def integrate(
    grid: VoxelGrid,
    frame: np.ndarray,
    depth: np.ndarray,
    K: CameraIntrinsics,
    pose: Pose,
    truncation: float,
) -> VoxelGrid:
    """Fuse one RGB-D observation into ``grid`` in place and return it.

    Each voxel center is projected to its nearest pixel.  Where that pixel has
    a valid depth, the signed distance ``pixel depth - voxel depth`` is clamped
    to ``truncation``, normalized, and averaged in with unit weight.  Voxels
    more than ``truncation`` behind the observed surface are left alone.
    """
    if truncation < grid.voxel_size:
        raise ValueError("truncation must be at least one voxel")
    frame = np.asarray(frame, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if frame.shape[:2] != K.shape or depth.shape != K.shape:
        raise ValueError("frame/depth dimensions do not match intrinsics")

    pts = grid.centers().reshape(-1, 3)
    cam = pose.transform(pts)
    z = cam[:, 2]
    front = z > 1e-12
    idx = np.nonzero(front)[0]
    u = np.floor(K.fx * cam[idx, 0] / z[idx] + K.cx + 0.5)
    v = np.floor(K.fy * cam[idx, 1] / z[idx] + K.cy + 0.5)
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    idx, u, v = idx[inside], u[inside].astype(np.int64), v[inside].astype(np.int64)
    ok = valid_depth(depth)[v, u]
    idx, u, v = idx[ok], u[ok], v[ok]
    sd = depth[v, u] - z[idx]
    keep = sd >= -truncation
    idx, u, v, sd = idx[keep], u[keep], v[keep], sd[keep]
    obs = np.minimum(sd, truncation) / truncation

    tsdf = grid.tsdf.reshape(-1)
    weight = grid.weight.reshape(-1)
    color = grid.color.reshape(-1, 3)
    w = weight[idx]
    tsdf[idx] = (tsdf[idx] * w + obs) / (w + 1.0)
    color[idx] = (color[idx] * w[:, None] + frame[v, u]) / (w + 1.0)[:, None]
    weight[idx] = w + 1.0
    return grid


def extract_static_points(grid: VoxelGrid, weight_min: float = 2.0, band: float = 0.25) -> ColoredPointSet:
    """Voxel centers near the fused surface, colored by their mean color."""
    if weight_min < 1:
        raise ValueError("weight_min must be at least 1")
    if not 0 < band <= 1:
        raise ValueError("band must lie in (0, 1]")
    sel = (grid.weight >= weight_min) & (np.abs(grid.tsdf) <= band)
    return ColoredPointSet(grid.centers()[sel], grid.color[sel])


def fuse_video(frames, depths, K: CameraIntrinsics, poses, config: TSDFConfig = TSDFConfig(), bounds=None):
    """Integrate a whole video and return ``(grid, static points)``.

    ``bounds`` is an optional ``(lo, hi)`` box; by default it is the
    bounding box of all valid unprojected depths.
    """
    if bounds is None:
        bounds = _depth_bounds(depths, K, poses)
    if bounds is None:
        return None, ColoredPointSet.empty()
    grid = VoxelGrid.from_bounds(*bounds, config=config)
    trunc = config.truncation_voxels * grid.voxel_size
    for frame, depth, pose in zip(frames, depths, poses):
        integrate(grid, frame, depth, K, pose, trunc)
    return grid, extract_static_points(grid, config.weight_min, config.band)


def _depth_bounds(depths, K: CameraIntrinsics, poses):
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for depth, pose in zip(depths, poses):
        depth = np.asarray(depth, dtype=np.float64)
        v, u = np.nonzero(valid_depth(depth))
        if len(v) == 0:
            continue
        d = depth[v, u]
        cam = np.stack([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d], axis=1)
        xyz = (cam - pose.translation) @ pose.rotation
        lo = np.minimum(lo, xyz.min(axis=0))
        hi = np.maximum(hi, xyz.max(axis=0))
    if not np.all(np.isfinite(lo)):
        return None
    return lo, hi
