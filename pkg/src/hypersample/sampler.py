"""Deterministic denoising with fused, state-conditioned noise predictions.

Latents live at image resolution divided by ``downsample``; a condition is
encoded as box-averaged color plus a box-averaged mask channel, and a latent
decodes back to frames by replicating each cell over its block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .conditioning import (
    CHI,
    OMEGA_MU,
    RenderedCondition,
    WeightMaps,
    accumulate_dynamic,
    box_downsample,
    build_weight_maps,
    integrate_static_dynamic,
    render_all_states,
    scalar_weight_maps,
    split_conditions,
)
from .geometry import CameraIntrinsics, Pose, warp_frame
from .hyperspace import (
    DepthCompleter,
    Hyperspace,
    InputVideo,
    IterativeDepthCompleter,
    _pose_sequence,
    add_incremental,
    make_auxiliary_trajectory,
)

INTERNAL = "internal"
EXTERNAL = "external"


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule with a linear noise rate.

    ``signal(t)**2 + noise(t)**2 == 1``, ``signal(0) == 1`` and both are
    strictly monotone on ``[0, 1]``.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0

    def _log_alpha_bar(self, t):
        t = np.asarray(t, dtype=np.float64)
        return -(self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)

    def signal(self, t):
        return np.exp(0.5 * self._log_alpha_bar(t))

    def noise(self, t):
        return np.sqrt(-np.expm1(self._log_alpha_bar(t)))


@dataclass(frozen=True)
class SchedulerConfig:
    steps: int = 30
    cfg_scale: float = 6.0
    seed: int = 0
    downsample: int = 1
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")

    def timesteps(self) -> np.ndarray:
        return np.linspace(1.0, 0.0, self.steps + 1)


@dataclass(frozen=True)
class ViewContext:
    """What a predictor may know about the view being sampled."""

    index: int
    poses: tuple[Pose, ...]
    seed: int
    downsample: int = 1


class NoisePredictor(Protocol):
    def __call__(
        self, z: np.ndarray, x: np.ndarray, t: float, *, cfg_scale: float, context: ViewContext
    ) -> np.ndarray: ...


def view_seed(seed: int, index: int) -> int:
    """Per-view seed shared by the guided and the independent pipelines."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def encode_condition(cond: RenderedCondition, factor: int = 1) -> np.ndarray:
    """``(T, h, w, 4)`` latent condition: box-averaged color and mask."""
    stacked = np.concatenate([cond.frames, cond.masks[..., None].astype(np.float64)], axis=-1)
    return box_downsample(stacked, factor)


def decode_latent(z: np.ndarray, factor: int = 1) -> np.ndarray:
    if factor == 1:
        return np.array(z, dtype=np.float64)
    return np.repeat(np.repeat(z, factor, axis=1), factor, axis=2)


def scheduler_step(z_t, eps_hat, t: float, s: float, config: SchedulerConfig) -> np.ndarray:
    """Noise-free update from time ``t`` down to ``s``."""
    if not 1.0 >= t > s >= 0.0:
        raise ValueError(f"need 1 >= t > s >= 0, got t={t}, s={s}")
    sched = config.schedule
    x0 = (z_t - sched.noise(t) * eps_hat) / sched.signal(t)
    if s == 0.0:
        return x0
    return sched.signal(s) * x0 + sched.noise(s) * eps_hat


def fused_epsilon(
    z_t: np.ndarray,
    streams: Sequence[tuple[np.ndarray, np.ndarray]],
    predictor: NoisePredictor,
    t: float,
    cfg_scale: float,
    context: ViewContext,
) -> np.ndarray:
    """Cell-wise weighted sum of one prediction per ``(weight, condition)`` stream."""
    eps = np.zeros_like(z_t)
    for w, x in streams:
        if w.shape != z_t.shape[:-1]:
            raise ValueError(f"weight map {w.shape} does not match latent {z_t.shape[:-1]}")
        pred = predictor(z_t, x, t, cfg_scale=cfg_scale, context=context)
        eps += w[..., None] * pred
    return eps


def denoise(streams, latent_shape, predictor: NoisePredictor, config: SchedulerConfig, context: ViewContext):
    """Run the full schedule from seeded noise and return the clean latent."""
    z = np.random.default_rng(context.seed).standard_normal(latent_shape)
    ts = config.timesteps()
    for t, s in zip(ts[:-1], ts[1:]):
        eps = fused_epsilon(z, streams, predictor, float(t), config.cfg_scale, context)
        z = scheduler_step(z, eps, float(t), float(s), config)
    return z


def hyperspace_streams(
    hs: Hyperspace, target, K: CameraIntrinsics, factor: int = 1, guidance: str = "hyperspace"
) -> tuple[WeightMaps, dict[str, RenderedCondition]]:
    """Conditions and weights for one target view.

    ``guidance="hyperspace"`` composes the renders by priority and uses
    area-fraction weights; ``"scalar"`` keeps every state's render separate
    and weights them by their per-frame mask areas.
    """
    conditions = render_all_states(hs, target, K)
    omega, chi, incr = split_conditions(conditions)
    if guidance == "scalar":
        return scalar_weight_maps(conditions, factor), {c.label: c for c in conditions}
    if guidance != "hyperspace":
        raise ValueError(f"unknown guidance mode {guidance!r}")
    by_label = {CHI: chi}
    by_label.update({c.label: c for c in incr})
    if omega is not None:
        by_label[OMEGA_MU] = integrate_static_dynamic(accumulate_dynamic(chi, incr), omega)
    weights = build_weight_maps(chi, incr, factor, residual=OMEGA_MU if omega is not None else CHI)
    return weights, by_label


def sample_streams(weights: WeightMaps, conditions, predictor, config: SchedulerConfig, context: ViewContext):
    factor = config.downsample
    streams = [(weights[label], encode_condition(conditions[label], factor)) for label in weights.labels]
    shape = streams[0][1].shape[:-1] + (3,)
    return decode_latent(denoise(streams, shape, predictor, config, context), factor)


def sample_view(
    hs: Hyperspace,
    target,
    K: CameraIntrinsics,
    predictor: NoisePredictor,
    config: SchedulerConfig,
    index: int = 1,
    guidance: str = "hyperspace",
) -> np.ndarray:
    """Generate ``(T, H, W, 3)`` frames at ``target`` guided by every state of ``hs``."""
    poses = tuple(_pose_sequence(target, hs.num_frames))
    ctx = ViewContext(index, poses, view_seed(config.seed, index), config.downsample)
    weights, conditions = hyperspace_streams(hs, poses, K, config.downsample, guidance)
    return sample_streams(weights, conditions, predictor, config, ctx)


def sample_view_baseline(
    video: InputVideo,
    target,
    predictor: NoisePredictor,
    config: SchedulerConfig,
    index: int = 1,
) -> np.ndarray:
    """Independent single-state sampling: warp the input and use one stream."""
    poses = tuple(_pose_sequence(target, video.num_frames))
    frames = np.zeros(video.frames.shape)
    masks = np.zeros(video.depths.shape, dtype=bool)
    for i, q in enumerate(poses):
        frames[i], masks[i] = warp_frame(video.frames[i], video.depths[i], video.K, video.poses[i], q)
    cond = RenderedCondition(frames, masks, CHI)
    x = encode_condition(cond, config.downsample)
    ones = np.ones(x.shape[:-1])
    ctx = ViewContext(index, poses, view_seed(config.seed, index), config.downsample)
    z = denoise([(ones, x)], x.shape[:-1] + (3,), predictor, config, ctx)
    return decode_latent(z, config.downsample)


@dataclass
class MultiviewResult:
    videos: list[np.ndarray]
    hyperspace: Hyperspace
    aux_video: np.ndarray | None = None
    aux_poses: list[Pose] | None = None
    observed_sizes: list[int] = field(default_factory=list)
    timings: list[float] = field(default_factory=list)


def sample_multiview(
    video: InputVideo,
    hs_base: Hyperspace,
    targets: Sequence[Pose],
    mode: str,
    predictor: NoisePredictor,
    config: SchedulerConfig,
    completer: DepthCompleter | None = None,
    with_ish: bool = True,
    with_hgs: bool = True,
) -> MultiviewResult:
    """Autoregressive multi-view generation.

    In external mode an auxiliary sweep through all targets is generated
    first and becomes incremental state 0.  Each target is then sampled
    against everything built so far and lifted into a new state, in the order
    given.  ``with_ish=False`` never grows the hyperspace; ``with_hgs=False``
    swaps the fused guidance for scalar mask-ratio weights.
    """
    if mode not in (INTERNAL, EXTERNAL):
        raise ValueError(f"mode must be {INTERNAL!r} or {EXTERNAL!r}, got {mode!r}")
    targets = list(targets)
    if not targets:
        raise ValueError("at least one target pose is required")
    completer = completer or IterativeDepthCompleter()
    guidance = "hyperspace" if with_hgs else "scalar"
    hs = hs_base
    result = MultiviewResult([], hs)
    if mode == EXTERNAL and with_ish:
        aux_poses = make_auxiliary_trajectory(targets, video.num_frames)
        start = time.perf_counter()
        aux = sample_view(hs, aux_poses, video.K, predictor, config, index=0, guidance=guidance)
        hs = add_incremental(hs, aux, aux_poses, video, completer, origin="Q0")
        result.aux_video, result.aux_poses = aux, aux_poses
        result.timings.append(time.perf_counter() - start)
    for m, q in enumerate(targets, start=1):
        start = time.perf_counter()
        result.observed_sizes.append(len(hs.incremental))
        frames = sample_view(hs, q, video.K, predictor, config, index=m, guidance=guidance)
        if with_ish:
            hs = add_incremental(hs, frames, q, video, completer, origin=f"Q{m}")
        result.videos.append(frames)
        result.timings.append(time.perf_counter() - start)
    result.hyperspace = hs
    return result


def sample_independent(video: InputVideo, targets: Sequence[Pose], predictor, config: SchedulerConfig):
    """Baseline videos for every target, each sampled on its own."""
    return [sample_view_baseline(video, q, predictor, config, index=m) for m, q in enumerate(targets, start=1)]

