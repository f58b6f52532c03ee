"""Bundled occlusion scenes and the guided-vs-independent comparison harness."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .hyperspace import InputVideo, build_base
from .metrics import ConsistencyReport, cross_view_consistency, missing_ratio
from .sampler import EXTERNAL, SchedulerConfig, sample_independent, sample_multiview
from .synthetic import (
    Box,
    OrbitViews,
    Plane,
    SceneSpec,
    Sphere,
    Texture,
    hallucinating_predictor,
    input_video,
    render_video,
)
from .tsdf import TSDFConfig


def standard_scene(variant: int = 0, num_frames: int = 16, width: int = 112, height: int = 64) -> SceneSpec:
    """Room with a static pillar and two moving spheres, seen by a near-static camera.

    ``variant`` 0 is the reference scene; 1-4 perturb object placement,
    motion and the input camera sweep so the suite covers different
    occlusion layouts.  Target views orbit the pivot over 60 degrees.
    """
    rng = np.random.default_rng(1000 + variant)
    jitter = (lambda s: rng.uniform(-s, s)) if variant else (lambda s: 0.0)
    floor = Plane(
        [0, 0, 4], [1, 0, 0], [0, 0, 1], [5, 5],
        Texture("checker", [[0.85, 0.8, 0.7], [0.35, 0.3, 0.25]], 0.75),
    )
    back = Plane(
        [0, 2, 9], [1, 0, 0], [0, 1, 0], [5, 2],
        Texture("checker", [[0.2, 0.45, 0.7], [0.8, 0.85, 0.9]], 1.0),
    )
    left = Plane(
        [-5, 2, 4], [0, 0, 1], [0, 1, 0], [5, 2],
        Texture("checker", [[0.7, 0.3, 0.3], [0.95, 0.75, 0.6]], 1.0),
    )
    right = Plane(
        [5, 2, 4], [0, 0, -1], [0, 1, 0], [5, 2],
        Texture("checker", [[0.3, 0.6, 0.35], [0.75, 0.9, 0.6]], 1.0),
    )
    pillar = Box(
        [-1.2 + jitter(0.4), 0.8, 5.0 + jitter(0.5)],
        [0.4, 0.8, 0.4],
        [[0.9, 0.6, 0.1], [0.6, 0.35, 0.05], [0.5, 0.5, 0.5], [0.95, 0.8, 0.3], [0.75, 0.5, 0.1], [0.4, 0.2, 0.0]],
    )
    crate = Box(
        [1.6 + jitter(0.4), 0.35, 6.5 + jitter(0.5)],
        [0.5, 0.35, 0.5],
        [[0.5, 0.2, 0.6], [0.3, 0.1, 0.4], [0.2, 0.2, 0.2], [0.8, 0.6, 0.9], [0.6, 0.3, 0.7], [0.2, 0.05, 0.3]],
    )
    speed = 3.0 / max(num_frames - 1, 1)
    mover = Sphere(
        [-1.5 + jitter(0.3), 0.5, 3.8 + jitter(0.3)],
        0.45,
        [[0.95, 0.2, 0.2], [1.0, 1.0, 1.0]],
        path={"kind": "linear", "velocity": [speed * (1 + jitter(0.2)), 0.0, 0.0]},
    )
    orbiter = Sphere(
        [0.6 + jitter(0.3), 0.6, 5.8 + jitter(0.3)],
        0.4,
        [[0.1, 0.3, 0.95], [0.95, 0.95, 0.2]],
        path={"kind": "circle", "radius": 0.9, "degrees_per_frame": 240.0 / max(num_frames - 1, 1),
              "phase_deg": 30.0 * variant},
    )
    sway = 0.3 + jitter(0.2)
    return SceneSpec(
        width=width,
        height=height,
        fov_deg=60.0,
        num_frames=num_frames,
        seed=variant,
        camera_start=[-sway, 1.4, 0.5],
        camera_end=[sway, 1.4, 0.5],
        camera_target=[0.0, 0.8, 5.0],
        planes=[floor, back, left, right],
        boxes=[pillar, crate],
        spheres=[mover, orbiter],
        views=OrbitViews([0.0, 0.8, 5.0], 4.5, 1.4, [-30.0, -15.0, 0.0, 15.0, 30.0]),
    )


def scene_suite(num_frames: int = 16) -> list[SceneSpec]:
    return [standard_scene(v, num_frames) for v in range(5)]


@dataclass
class SceneTruth:
    """Ground truth at target views, indexed ``[view][frame]``."""

    depths: list
    patches: list
    static: list

    @classmethod
    def at_views(cls, spec: SceneSpec, targets) -> "SceneTruth":
        renders = [render_video(spec, q) for q in targets]
        return cls(
            [np.stack([g.depth for g in r]) for r in renders],
            [np.stack([g.patch for g in r]) for r in renders],
            [np.stack([~g.dynamic & np.isfinite(g.depth) for g in r]) for r in renders],
        )


def score_videos(videos, targets, spec: SceneSpec, truth: SceneTruth, static_only: bool = False) -> ConsistencyReport:
    return cross_view_consistency(
        videos,
        targets,
        spec.intrinsics,
        truth.depths,
        truth.patches,
        truth.static if static_only else None,
    )


@dataclass
class AblationFlags:
    with_ish: bool = True
    with_hgs: bool = True
    with_static: bool = True


@dataclass
class RunOutcome:
    videos: list
    report: ConsistencyReport
    static_report: ConsistencyReport
    observed_sizes: list = field(default_factory=list)


def run_ablation(
    spec: SceneSpec,
    config: SchedulerConfig = SchedulerConfig(),
    flags: AblationFlags = AblationFlags(),
    predictor=None,
    tsdf_config: TSDFConfig = TSDFConfig(),
    video: InputVideo | None = None,
    truth: SceneTruth | None = None,
) -> RunOutcome:
    """Guided external-view run under the given component switches, scored on ground truth."""
    video = video or input_video(spec)
    targets = spec.target_poses()
    truth = truth or SceneTruth.at_views(spec, targets)
    predictor = predictor or hallucinating_predictor(config.schedule)
    hs = build_base(video, with_static=flags.with_static, tsdf_config=tsdf_config)
    result = sample_multiview(
        video, hs, targets, EXTERNAL, predictor, config, with_ish=flags.with_ish, with_hgs=flags.with_hgs
    )
    report = score_videos(result.videos, targets, spec, truth)
    report.missing_ratios = [missing_ratio(hs, q, video.K) for q in targets]
    return RunOutcome(result.videos, report, score_videos(result.videos, targets, spec, truth, True),
                      result.observed_sizes)


def run_baseline(
    spec: SceneSpec,
    config: SchedulerConfig = SchedulerConfig(),
    predictor=None,
    video: InputVideo | None = None,
    truth: SceneTruth | None = None,
) -> RunOutcome:
    """Every target view sampled independently from the input's own warp."""
    video = video or input_video(spec)
    targets = spec.target_poses()
    truth = truth or SceneTruth.at_views(spec, targets)
    predictor = predictor or hallucinating_predictor(config.schedule)
    videos = sample_independent(video, targets, predictor, config)
    return RunOutcome(videos, score_videos(videos, targets, spec, truth),
                      score_videos(videos, targets, spec, truth, True))


def with_frames(spec: SceneSpec, num_frames: int) -> SceneSpec:
    out = copy.deepcopy(spec)
    out.num_frames = num_frames
    return out
