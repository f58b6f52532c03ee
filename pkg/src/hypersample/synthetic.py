"""Analytic 4D test scenes, exact ray-cast ground truth, and target-driven
noise predictors.

Scenes are built from textured rectangles, axis-aligned boxes and spheres
(optionally moving).  Every surface is piecewise constant in color, and the
renderer reports a patch id per pixel so that consistency checks can compare
only pixels that see the same constant-color patch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, Pose
from .hyperspace import InputVideo
from .sampler import NoiseSchedule, ViewContext

NO_HIT = -1
_PATCH_SHIFT = 1 << 20


@dataclass
class Texture:
    """``solid`` uses ``colors[0]``; ``checker`` alternates ``colors`` over square cells of side ``scale``."""

    kind: str = "solid"
    colors: list = field(default_factory=lambda: [[0.5, 0.5, 0.5]])
    scale: float = 1.0


@dataclass
class Plane:
    """Rectangle spanned by unit axes ``u`` and ``v`` with half sizes ``half``."""

    center: list
    u: list
    v: list
    half: list
    texture: Texture = field(default_factory=Texture)


@dataclass
class Box:
    """Axis-aligned box; ``face_colors`` are ordered -x, +x, -y, +y, -z, +z."""

    center: list
    half: list
    face_colors: list


@dataclass
class Sphere:
    """Sphere with a checkered longitude/latitude texture.

    ``path`` is ``{"kind": "linear", "velocity": [...]}`` (per frame) or
    ``{"kind": "circle", "radius": r, "degrees_per_frame": w, "phase_deg": p}``
    around ``center`` in the horizontal plane; a static sphere has no path.
    """

    center: list
    radius: float
    colors: list
    bands: list = field(default_factory=lambda: [6, 3])
    path: dict | None = None

    @property
    def dynamic(self) -> bool:
        return self.path is not None

    def position(self, frame: int) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        if self.path is None:
            return c
        kind = self.path["kind"]
        if kind == "linear":
            return c + frame * np.asarray(self.path["velocity"], dtype=np.float64)
        if kind == "circle":
            a = np.radians(self.path.get("phase_deg", 0.0) + frame * self.path["degrees_per_frame"])
            r = self.path["radius"]
            return c + np.array([r * np.cos(a), 0.0, r * np.sin(a)])
        raise ValueError(f"unknown path kind {kind!r}")


@dataclass
class OrbitViews:
    """External target views on a horizontal circle around ``pivot``.

    Angle 0 places the camera at ``pivot - radius * z``, looking at the pivot.
    """

    pivot: list
    radius: float
    height: float
    angles_deg: list

    def poses(self) -> list[Pose]:
        p = np.asarray(self.pivot, dtype=np.float64)
        out = []
        for a in np.radians(self.angles_deg):
            eye = np.array([p[0] + self.radius * np.sin(a), self.height, p[2] - self.radius * np.cos(a)])
            out.append(Pose.look_at(eye, p))
        return out


@dataclass
class SceneSpec:
    width: int = 112
    height: int = 64
    fov_deg: float = 60.0
    num_frames: int = 16
    seed: int = 0
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    camera_start: list = field(default_factory=lambda: [0.0, 1.4, 0.0])
    camera_end: list = field(default_factory=lambda: [0.0, 1.4, 0.0])
    camera_target: list = field(default_factory=lambda: [0.0, 0.8, 5.0])
    planes: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    spheres: list = field(default_factory=list)
    views: OrbitViews | None = None

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_deg)

    def input_poses(self) -> list[Pose]:
        a = np.asarray(self.camera_start, dtype=np.float64)
        b = np.asarray(self.camera_end, dtype=np.float64)
        n = self.num_frames
        out = []
        for i in range(n):
            f = i / (n - 1) if n > 1 else 0.0
            out.append(Pose.look_at((1 - f) * a + f * b, self.camera_target))
        return out

    def target_poses(self) -> list[Pose]:
        if self.views is None:
            raise ValueError("scene has no target views")
        return self.views.poses()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = "hypersample.scene/1"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        schema = d.pop("schema", "hypersample.scene/1")
        if schema != "hypersample.scene/1":
            raise ValueError(f"unsupported scene schema {schema!r}")
        planes = [Plane(**{**p, "texture": Texture(**p.get("texture", {}))}) for p in d.pop("planes", [])]
        boxes = [Box(**b) for b in d.pop("boxes", [])]
        spheres = [Sphere(**s) for s in d.pop("spheres", [])]
        views = d.pop("views", None)
        return cls(
            **d, planes=planes, boxes=boxes, spheres=spheres, views=OrbitViews(**views) if views else None
        )


def _rays(K: CameraIntrinsics, pose: Pose):
    v, u = np.mgrid[0 : K.height, 0 : K.width]
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones(u.shape)], axis=-1).reshape(-1, 3)
    return pose.center, d_cam @ pose.rotation


def _hit_plane(o, d, p: Plane):
    c, u, v = (np.asarray(x, dtype=np.float64) for x in (p.center, p.u, p.v))
    n = np.cross(u, v)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((c - o) @ n) / denom
    hit = o + t[:, None] * d
    a = (hit - c) @ u
    b = (hit - c) @ v
    ok = np.isfinite(t) & (t > 1e-9) & (np.abs(a) <= p.half[0]) & (np.abs(b) <= p.half[1])
    t = np.where(ok, t, np.inf)
    tex = p.texture
    if tex.kind == "solid":
        cell = np.zeros(len(t), dtype=np.int64)
        colors = np.broadcast_to(np.asarray(tex.colors[0], dtype=np.float64), (len(t), 3))
    elif tex.kind == "checker":
        i = np.floor(np.where(ok, a, 0.0) / tex.scale).astype(np.int64)
        j = np.floor(np.where(ok, b, 0.0) / tex.scale).astype(np.int64)
        palette = np.asarray(tex.colors, dtype=np.float64)
        colors = palette[(i + j) % len(palette)]
        cell = (i % 1024) * 1024 + (j % 1024)
    else:
        raise ValueError(f"unknown texture kind {tex.kind!r}")
    return t, colors, cell


def _hit_box(o, d, b: Box):
    c = np.asarray(b.center, dtype=np.float64)
    h = np.asarray(b.half, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (c - h - o) * inv
        t2 = (c + h - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    ok = (near <= far) & (near > 1e-9)
    axis = tmin.argmax(axis=1)
    positive_side = d[np.arange(len(d)), axis] < 0
    face = 2 * axis + positive_side.astype(np.int64)
    palette = np.asarray(b.face_colors, dtype=np.float64)
    return np.where(ok, near, np.inf), palette[face % len(palette)], face


def _hit_sphere(o, d, s: Sphere, frame: int):
    c = s.position(frame)
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    bb = 2.0 * (d @ oc)
    cc = oc @ oc - s.radius**2
    disc = bb * bb - 4 * a * cc
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t = (-bb - root) / (2 * a)
    ok &= t > 1e-9
    t = np.where(ok, t, np.inf)
    hit = o + np.where(ok, t, 0.0)[:, None] * d - c
    lon = np.arctan2(hit[:, 2], hit[:, 0])
    lat = np.arcsin(np.clip(hit[:, 1] / s.radius, -1.0, 1.0))
    i = np.floor((lon + np.pi) / (2 * np.pi) * s.bands[0]).astype(np.int64) % s.bands[0]
    j = np.minimum(np.floor((lat + np.pi / 2) / np.pi * s.bands[1]).astype(np.int64), s.bands[1] - 1)
    palette = np.asarray(s.colors, dtype=np.float64)
    return t, palette[(i + j) % len(palette)], i * 64 + j


@dataclass
class GroundTruth:
    frame: np.ndarray
    depth: np.ndarray
    patch: np.ndarray
    dynamic: np.ndarray


def raycast(spec: SceneSpec, pose: Pose, frame_index: int) -> GroundTruth:
    """Exact per-pixel render: color, camera depth, patch id and dynamic-object mask."""
    if not 0 <= frame_index < spec.num_frames:
        raise ValueError(f"frame {frame_index} outside 0..{spec.num_frames - 1}")
    K = spec.intrinsics
    o, d = _rays(K, pose)
    n = len(d)
    best = np.full(n, np.inf)
    color = np.broadcast_to(np.asarray(spec.background, dtype=np.float64), (n, 3)).copy()
    patch = np.full(n, NO_HIT, dtype=np.int64)
    dynamic = np.zeros(n, dtype=bool)
    hits = [_hit_plane(o, d, p) for p in spec.planes]
    hits += [_hit_box(o, d, b) for b in spec.boxes]
    hits += [_hit_sphere(o, d, s, frame_index) for s in spec.spheres]
    flags = [False] * (len(spec.planes) + len(spec.boxes)) + [s.dynamic for s in spec.spheres]
    for k, ((t, c, cell), is_dyn) in enumerate(zip(hits, flags)):
        closer = t < best
        best[closer] = t[closer]
        color[closer] = c[closer]
        patch[closer] = k * _PATCH_SHIFT + cell[closer]
        dynamic[closer] = is_dyn
    shape = K.shape
    return GroundTruth(color.reshape(shape + (3,)), best.reshape(shape), patch.reshape(shape), dynamic.reshape(shape))


def render_ground_truth(spec: SceneSpec, pose: Pose, frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame and depth at ``pose``; empty pixels get the background color and depth ``inf``."""
    gt = raycast(spec, pose, frame_index)
    return gt.frame, gt.depth


def render_video(spec: SceneSpec, target) -> list[GroundTruth]:
    """Ground truth for all frames at a fixed pose or a per-frame pose sequence."""
    poses = [target] * spec.num_frames if isinstance(target, Pose) else list(target)
    return [raycast(spec, q, i) for i, q in enumerate(poses)]


def input_video(spec: SceneSpec) -> InputVideo:
    poses = spec.input_poses()
    gts = render_video(spec, poses)
    return InputVideo(
        np.stack([g.frame for g in gts]), np.stack([g.depth for g in gts]), tuple(poses), spec.intrinsics
    )


def procedural_texture(seed: int, shape: tuple[int, int], cell: float = 6.0) -> np.ndarray:
    """Smooth random color field ``(h, w, 3)`` in ``[0, 1]``, fixed by ``seed``."""
    h, w = shape
    rng = np.random.default_rng(seed)
    gh = int(np.ceil(h / cell)) + 2
    gw = int(np.ceil(w / cell)) + 2
    coarse = rng.random((gh, gw, 3))
    ys = np.arange(h) / cell + 0.5
    xs = np.arange(w) / cell + 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack(
        [ndimage.map_coordinates(coarse[..., k], [yy, xx], order=1, mode="nearest") for k in range(3)], axis=-1
    )
    return np.clip(out, 0.0, 1.0)


class TargetPredictor:
    """Predicts exactly the noise that moves a latent onto a per-stream target.

    The target for a stream with encoded condition ``x = (color, mask)`` is
    ``color + (1 - mask) * fill(context)``: the condition where it is
    covered, a view-dependent fill elsewhere.  With fused weights the sampler
    therefore lands on the weighted blend of the stream targets.
    """

    def __init__(self, schedule: NoiseSchedule, fill: Callable[[ViewContext, tuple], np.ndarray]):
        self.schedule = schedule
        self.fill = fill
        self._cache: dict = {}

    def target(self, x: np.ndarray, context: ViewContext) -> np.ndarray:
        key = (context.index, context.seed, context.poses, x.shape[:-1])
        if key not in self._cache:
            self._cache[key] = np.asarray(self.fill(context, x.shape[:-1]), dtype=np.float64)
        return x[..., :3] + (1.0 - x[..., 3:4]) * self._cache[key]

    def __call__(self, z, x, t, *, cfg_scale=6.0, context: ViewContext):
        sigma = float(self.schedule.noise(t))
        if sigma == 0.0:
            raise ValueError("target predictor is undefined at t = 0")
        return (z - self.schedule.signal(t) * self.target(x, context)) / sigma


def hallucinating_predictor(schedule: NoiseSchedule, cell: float = 6.0) -> TargetPredictor:
    """Fills uncovered regions with a smooth texture drawn from the view's seed."""

    def fill(ctx: ViewContext, shape):
        t, h, w = shape
        tex = procedural_texture(ctx.seed, (h, w), cell / ctx.downsample)
        return np.broadcast_to(tex, (t, h, w, 3))

    return TargetPredictor(schedule, fill)


def oracle_predictor(schedule: NoiseSchedule, spec: SceneSpec) -> TargetPredictor:
    """Fills uncovered regions with the exact ground truth at the view's poses."""
    from .conditioning import box_downsample

    def fill(ctx: ViewContext, shape):
        frames = np.stack([raycast(spec, q, i).frame for i, q in enumerate(ctx.poses)])
        return box_downsample(frames, ctx.downsample)

    return TargetPredictor(schedule, fill)


def constant_predictor(schedule: NoiseSchedule, value) -> TargetPredictor:
    """Fills uncovered regions with one constant color."""
    value = np.asarray(value, dtype=np.float64)
    return TargetPredictor(schedule, lambda ctx, shape: np.broadcast_to(value, tuple(shape) + (3,)))
