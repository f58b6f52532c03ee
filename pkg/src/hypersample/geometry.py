"""Pinhole camera model, depth unprojection and z-buffered point splatting.

Conventions used throughout the package:

* Poses are camera-from-world: ``x_cam = R @ x_world + t``.
* Camera axes follow the usual computer-vision layout (x right, y down,
  z forward); depth is the camera-space z coordinate, not ray length.
* Pixel ``(row v, col u)`` has its center at image coordinate ``(u, v)``.
  Projected sub-pixel positions are rounded half-up to the nearest center.
* Images are ``(H, W, 3)`` float arrays, depths ``(H, W)`` floats and masks
  ``(H, W)`` booleans.  A depth is valid when it is finite and positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "CameraIntrinsics":
        """Square-pixel intrinsics with the principal point at the image center."""
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics of the image downsampled by an integer box factor."""
        if self.width % factor or self.height % factor:
            raise ValueError(f"factor {factor} does not divide {self.width}x{self.height}")
        s = 1.0 / factor
        return CameraIntrinsics(
            self.fx * s,
            self.fy * s,
            (self.cx + 0.5) * s - 0.5,
            (self.cy + 0.5) * s - 0.5,
            self.width // factor,
            self.height // factor,
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-from-world transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite entries")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        """From a 3x4 or 4x4 camera-from-world matrix."""
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_camera_to_world(cls, m) -> "Pose":
        """Convert a camera-to-world (camera pose in world) matrix.

        This is the single conversion point for data that stores poses the
        other way around; everything internal is camera-from-world.
        """
        m = np.asarray(m, dtype=np.float64)
        r = m[:3, :3]
        return cls(r.T, -r.T @ m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0)) -> "Pose":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        down = -np.asarray(up, dtype=np.float64)
        x = np.cross(down, z)
        norm = np.linalg.norm(x)
        if norm < 1e-12:
            raise ValueError("view direction is parallel to the up vector")
        x /= norm
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        return cls(r, -r @ eye)

    @property
    def matrix(self) -> np.ndarray:
        """3x4 camera-from-world matrix ``[R | t]``."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def inverse_matrix(self) -> np.ndarray:
        """3x4 camera-to-world matrix."""
        rt = self.rotation.T
        return np.concatenate([rt, (-rt @ self.translation)[:, None]], axis=1)

    def transform(self, xyz: np.ndarray) -> np.ndarray:
        """World points (N, 3) to camera coordinates."""
        return xyz @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True, eq=False)
class ColoredPointSet:
    """World-space points with RGB colors.

    ``source`` optionally records where each point came from as integer rows
    ``(frame, v, u)``.
    """

    xyz: np.ndarray
    colors: np.ndarray
    source: np.ndarray | None = field(default=None)

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        colors = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(xyz) != len(colors):
            raise ValueError(f"{len(xyz)} points but {len(colors)} colors")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("point coordinates must be finite")
        xyz.setflags(write=False)
        colors.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "colors", colors)
        if self.source is not None:
            src = np.array(self.source, dtype=np.int64).reshape(-1, 3)
            if len(src) != len(xyz):
                raise ValueError("provenance length does not match point count")
            src.setflags(write=False)
            object.__setattr__(self, "source", src)

    @classmethod
    def empty(cls) -> "ColoredPointSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.xyz)


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


def _check_image(K: CameraIntrinsics, *grids):
    for g in grids:
        if g.shape[:2] != K.shape:
            raise ValueError(f"grid of shape {g.shape[:2]} does not match intrinsics {K.shape}")


def unproject(
    frame: np.ndarray,
    depth: np.ndarray,
    K: CameraIntrinsics,
    pose: Pose,
    frame_index: int = 0,
) -> ColoredPointSet:
    """Lift every pixel with a valid depth into a world-space colored point.

    Pixels with non-finite or non-positive depth are skipped.  Points are
    emitted in row-major pixel order.
    """
    frame = np.asarray(frame, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    _check_image(K, frame, depth)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {frame.shape}")
    v, u = np.nonzero(valid_depth(depth))
    d = depth[v, u]
    cam = np.stack([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d], axis=1)
    xyz = (cam - pose.translation) @ pose.rotation
    source = np.stack([np.full_like(u, frame_index), v, u], axis=1)
    return ColoredPointSet(xyz, frame[v, u], source)


def project_points(xyz: np.ndarray, K: CameraIntrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Continuous image coordinates ``(N, 2)`` as ``(u, v)`` and camera depths ``(N,)``."""
    cam = pose.transform(np.asarray(xyz, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    return np.stack([u, v], axis=1), z


def splat(xyz: np.ndarray, K: CameraIntrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer points into the image raster.

    Returns
    -------
    winner : (H, W) int array
        Index of the point owning each pixel, ``-1`` where nothing landed.
    depth : (H, W) float array
        Camera-space depth of the winning point, ``inf`` where empty.

    Each point goes to its nearest pixel center; the smallest positive depth
    wins and equal depths go to the lower point index.
    """
    uv, z = project_points(xyz, K, pose)
    winner = np.full(K.shape, -1, dtype=np.int64)
    zbuf = np.full(K.shape, np.inf)
    if len(z) == 0:
        return winner, zbuf
    with np.errstate(invalid="ignore"):
        front = np.isfinite(z) & (z > 0)
    idx = np.nonzero(front)[0]
    pu = np.floor(uv[idx, 0] + 0.5)
    pv = np.floor(uv[idx, 1] + 0.5)
    inside = (pu >= 0) & (pu < K.width) & (pv >= 0) & (pv < K.height)
    idx, pu, pv = idx[inside], pu[inside].astype(np.int64), pv[inside].astype(np.int64)
    if len(idx) == 0:
        return winner, zbuf
    lin = pv * K.width + pu
    order = np.lexsort((idx, z[idx], lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    win = idx[order[first]]
    cells = lin_sorted[first]
    winner.reshape(-1)[cells] = win
    zbuf.reshape(-1)[cells] = z[win]
    return winner, zbuf


def project(
    points: ColoredPointSet, K: CameraIntrinsics, pose: Pose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a point set as ``(colors, mask, depth)``; empty pixels are black with depth ``inf``."""
    winner, depth = splat(points.xyz, K, pose)
    mask = winner >= 0
    colors = np.zeros(K.shape + (3,))
    colors[mask] = points.colors[winner[mask]]
    return colors, mask, depth


def warp_frame(frame, depth, K: CameraIntrinsics, src_pose: Pose, dst_pose: Pose):
    """Forward-warp a frame into another view; returns ``(colors, mask)``."""
    colors, mask, _ = project(unproject(frame, depth, K, src_pose), K, dst_pose)
    return colors, mask


def warp_depth(depth, K: CameraIntrinsics, src_pose: Pose, dst_pose: Pose):
    """Forward-warp a depth map; returns destination-camera ``(depth, mask)``.

    Empty pixels carry ``inf``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    dummy = np.zeros(depth.shape + (3,))
    _, mask, warped = project(unproject(dummy, depth, K, src_pose), K, dst_pose)
    return warped, mask
