"""World-state hyperspace: base states from the input video plus incremental
states lifted from every generated view."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation, Slerp

from . import tsdf as _tsdf
from .geometry import CameraIntrinsics, ColoredPointSet, Pose, unproject, valid_depth, warp_depth

BASE_DYNAMIC = "base_dynamic"
BASE_STATIC = "base_static"
INCREMENTAL = "incremental"


@dataclass(frozen=True)
class InputVideo:
    """Monocular input: frames ``(T, H, W, 3)``, depths ``(T, H, W)``, T poses, shared intrinsics."""

    frames: np.ndarray
    depths: np.ndarray
    poses: tuple[Pose, ...]
    K: CameraIntrinsics

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        depths = np.asarray(self.depths, dtype=np.float64)
        poses = tuple(self.poses)
        if not (len(frames) == len(depths) == len(poses)) or len(frames) == 0:
            raise ValueError(
                f"inconsistent sequence lengths: {len(frames)} frames, {len(depths)} depths, {len(poses)} poses"
            )
        if frames.shape[1:3] != self.K.shape or depths.shape[1:] != self.K.shape:
            raise ValueError("frame/depth dimensions do not match intrinsics")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "poses", poses)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class WorldState:
    """One hyperspace entry.

    Dynamic kinds hold one point set per frame; ``base_static`` holds a
    single set shared by all frames.  ``skipped`` lists frames left empty by
    the skip rule.
    """

    kind: str
    points: tuple[ColoredPointSet, ...]
    origin: str
    skipped: tuple[int, ...] = ()

    def at(self, frame_index: int) -> ColoredPointSet:
        if self.kind == BASE_STATIC:
            return self.points[0]
        return self.points[frame_index]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Hyperspace:
    base_dynamic: WorldState
    base_static: WorldState | None = None
    incremental: tuple[WorldState, ...] = field(default=())

    @property
    def num_frames(self) -> int:
        return len(self.base_dynamic)

    def append(self, state: WorldState) -> "Hyperspace":
        if state.kind != INCREMENTAL or len(state) != self.num_frames:
            raise ValueError("incremental state must hold one point set per frame")
        return Hyperspace(self.base_dynamic, self.base_static, self.incremental + (state,))

    def without_static(self) -> "Hyperspace":
        return Hyperspace(self.base_dynamic, None, self.incremental)


class DepthCompleter(Protocol):
    def __call__(
        self, gen_frames: np.ndarray, warped_depth: np.ndarray, warped_valid: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return completed depths ``(T, H, W)`` and a per-frame success flag ``(T,)``."""


def build_base(
    video: InputVideo,
    with_static: bool = True,
    tsdf_config: _tsdf.TSDFConfig = _tsdf.TSDFConfig(),
    bounds=None,
) -> Hyperspace:
    """Base hyperspace: per-frame unprojection plus optional TSDF static points."""
    dynamic = tuple(
        unproject(f, d, video.K, p, frame_index=i)
        for i, (f, d, p) in enumerate(zip(video.frames, video.depths, video.poses))
    )
    base = WorldState(BASE_DYNAMIC, dynamic, origin="input")
    static = None
    if with_static:
        _, pts = _tsdf.fuse_video(video.frames, video.depths, video.K, video.poses, tsdf_config, bounds)
        static = WorldState(BASE_STATIC, (pts,), origin="input")
    return Hyperspace(base, static)


def make_auxiliary_trajectory(targets: Sequence[Pose], num_frames: int) -> list[Pose]:
    """Camera sweep visiting ``targets`` in order over ``num_frames`` frames.

    Segment boundaries are spread evenly over ``[0, T-1]``.  Camera centers
    move linearly and orientations are slerped at constant speed within each
    segment.
    """
    targets = list(targets)
    m = len(targets)
    if m < 2:
        raise ValueError("auxiliary trajectory needs at least two target poses")
    if num_frames < m:
        raise ValueError(f"need at least {m} frames for {m} targets, got {num_frames}")
    centers = np.stack([q.center for q in targets])
    rots = Rotation.from_matrix(np.stack([q.rotation for q in targets]))
    slerps = [Slerp([0.0, 1.0], rots[k : k + 2]) for k in range(m - 1)]
    out = []
    for i in range(num_frames):
        s = i * (m - 1) / (num_frames - 1)
        k = min(int(np.floor(s)), m - 2)
        f = s - k
        if f == 0.0:
            r = targets[k].rotation
            c = centers[k]
        elif f == 1.0:
            r = targets[k + 1].rotation
            c = centers[k + 1]
        else:
            r = slerps[k]([f]).as_matrix()[0]
            c = (1.0 - f) * centers[k] + f * centers[k + 1]
        r = _orthonormalize(r)
        out.append(Pose(r, -r @ c))
    return out


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def fill_holes(depth: np.ndarray, valid: np.ndarray, tol: float = 1e-6, max_sweeps: int = 1000) -> np.ndarray:
    """Fill invalid pixels by repeated 4-neighbour averaging.

    Holes start from their nearest valid value, then every hole pixel is
    replaced by the mean of its in-bounds neighbours until the largest update
    drops below ``tol``.  Valid pixels are never modified.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if valid.all():
        return depth.copy()
    if not valid.any():
        raise ValueError("cannot fill a depth map with no valid pixels")
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    h, w = depth.shape
    # flat buffer with a trailing zero slot standing in for out-of-image neighbours
    flat = np.append(depth[iy, ix].reshape(-1), 0.0)
    hv, hu = np.nonzero(~valid)
    hole = hv * w + hu
    pad = h * w
    neighbours = np.stack(
        [
            np.where(hv > 0, hole - w, pad),
            np.where(hv < h - 1, hole + w, pad),
            np.where(hu > 0, hole - 1, pad),
            np.where(hu < w - 1, hole + 1, pad),
        ]
    )
    count = (neighbours != pad).sum(axis=0).astype(np.float64)
    for _ in range(max_sweeps):
        new = flat[neighbours].sum(axis=0) / count
        delta = np.max(np.abs(new - flat[hole]))
        flat[hole] = new
        if delta < tol:
            break
    return flat[:pad].reshape(h, w)


@dataclass
class IterativeDepthCompleter:
    """Default completer: keep warped depth where valid, harmonic fill elsewhere.

    ``temporal_smoothing``, if given, is called on the completed ``(T, H, W)``
    stack together with the validity masks and must return a stack of the
    same shape; it is off by default.
    """

    tol: float = 1e-6
    max_sweeps: int = 1000
    temporal_smoothing: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __call__(self, gen_frames, warped_depth, warped_valid):
        return complete_depth_default(
            gen_frames, warped_depth, warped_valid, self.tol, self.max_sweeps, self.temporal_smoothing
        )


def complete_depth_default(
    gen_frames,
    warped_depth,
    warped_valid,
    tol: float = 1e-6,
    max_sweeps: int = 1000,
    temporal_smoothing=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Complete a warped depth video.

    Frames with no valid pixel come back as all-``nan`` with their flag set to
    ``False``.
    """
    warped_depth = np.asarray(warped_depth, dtype=np.float64)
    warped_valid = np.asarray(warped_valid, dtype=bool)
    if len(gen_frames) != len(warped_depth) or warped_depth.shape != warped_valid.shape:
        raise ValueError("generated frames and warped depths are not aligned")
    out = np.full(warped_depth.shape, np.nan)
    ok = warped_valid.reshape(len(warped_valid), -1).any(axis=1)
    for i in np.nonzero(ok)[0]:
        out[i] = fill_holes(warped_depth[i], warped_valid[i], tol, max_sweeps)
    if temporal_smoothing is not None:
        smoothed = np.asarray(temporal_smoothing(out, warped_valid), dtype=np.float64)
        if smoothed.shape != out.shape:
            raise ValueError("temporal smoothing changed the depth stack shape")
        out = np.where(warped_valid | ~ok[:, None, None], out, smoothed)
    return out, ok


def _pose_sequence(target, num_frames: int) -> list[Pose]:
    if isinstance(target, Pose):
        return [target] * num_frames
    seq = list(target)
    if len(seq) != num_frames:
        raise ValueError(f"pose sequence has {len(seq)} entries, expected {num_frames}")
    return seq


def warp_input_depths(video: InputVideo, target) -> tuple[np.ndarray, np.ndarray]:
    """Input depths warped frame by frame to a target pose (or pose sequence)."""
    poses = _pose_sequence(target, video.num_frames)
    depths = np.empty(video.depths.shape)
    masks = np.empty(video.depths.shape, dtype=bool)
    for i, q in enumerate(poses):
        depths[i], masks[i] = warp_depth(video.depths[i], video.K, video.poses[i], q)
    return depths, masks


def add_incremental(
    hs: Hyperspace,
    gen_frames: np.ndarray,
    target,
    video: InputVideo,
    completer: DepthCompleter | None = None,
    origin: str = "",
) -> Hyperspace:
    """Lift a generated video at ``target`` into a new incremental state.

    ``target`` is a fixed pose or one pose per frame (the auxiliary sweep).
    Frames whose warped input depth has no valid pixel stay empty.
    """
    gen_frames = np.asarray(gen_frames, dtype=np.float64)
    if len(gen_frames) != hs.num_frames or len(gen_frames) != video.num_frames:
        raise ValueError(f"expected {hs.num_frames} generated frames, got {len(gen_frames)}")
    completer = completer or IterativeDepthCompleter()
    poses = _pose_sequence(target, video.num_frames)
    warped, valid = warp_input_depths(video, poses)
    completed, ok = completer(gen_frames, warped, valid)
    completed = np.asarray(completed, dtype=np.float64)
    ok = np.asarray(ok, dtype=bool) & valid.reshape(len(valid), -1).any(axis=1)
    points = []
    for i, q in enumerate(poses):
        if not ok[i]:
            points.append(ColoredPointSet.empty())
            continue
        lifted = unproject(gen_frames[i], completed[i], video.K, q, frame_index=i)
        points.append(lifted)
    skipped = tuple(int(i) for i in np.nonzero(~ok)[0])
    state = WorldState(INCREMENTAL, tuple(points), origin=origin, skipped=skipped)
    return hs.append(state)


def completion_consistent(completed: np.ndarray, warped: np.ndarray, valid: np.ndarray) -> bool:
    """True when a completer reproduced the warped depth exactly on valid pixels."""
    return bool(np.array_equal(completed[valid], warped[valid]) and valid_depth(completed[valid]).all())
