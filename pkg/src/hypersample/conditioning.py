"""Per-state renders at a target view, their priority composition, and the
fusion weights that split the image between conditioning streams.

Priority order everywhere is: base dynamic, then incremental states by index,
then the static state.  A pixel belongs to the first stream whose render
covers it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose, project
from .hyperspace import Hyperspace, WorldState, _pose_sequence

OMEGA = "omega"
CHI = "chi"
MU = "mu"
OMEGA_MU = "omega_mu"


def incremental_label(j: int) -> str:
    return f"incr{j}"


@dataclass(frozen=True)
class RenderedCondition:
    """Rendered frames ``(T, H, W, 3)`` and masks ``(T, H, W)`` of one stream."""

    frames: np.ndarray
    masks: np.ndarray
    label: str

    def __post_init__(self):
        if self.frames.shape[:-1] != self.masks.shape or self.frames.shape[-1] != 3:
            raise ValueError(f"frames {self.frames.shape} and masks {self.masks.shape} disagree")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.masks.shape


@dataclass(frozen=True)
class WeightMaps:
    """Fusion weights ``(S, T, h, w)`` for streams named by ``labels``."""

    labels: tuple[str, ...]
    weights: np.ndarray

    def __getitem__(self, label: str) -> np.ndarray:
        return self.weights[self.labels.index(label)]


def render_state(state: WorldState, poses: Sequence[Pose], K: CameraIntrinsics, label: str) -> RenderedCondition:
    n = len(poses)
    frames = np.zeros((n,) + K.shape + (3,))
    masks = np.zeros((n,) + K.shape, dtype=bool)
    for i, q in enumerate(poses):
        frames[i], masks[i], _ = project(state.at(i), K, q)
    return RenderedCondition(frames, masks, label)


def render_all_states(hs: Hyperspace, target, K: CameraIntrinsics) -> list[RenderedCondition]:
    """Render every state at ``target``: static first if present, then base dynamic, then incrementals."""
    poses = _pose_sequence(target, hs.num_frames)
    out = []
    if hs.base_static is not None:
        out.append(render_state(hs.base_static, poses, K, OMEGA))
    out.append(render_state(hs.base_dynamic, poses, K, CHI))
    for j, state in enumerate(hs.incremental):
        out.append(render_state(state, poses, K, incremental_label(j)))
    return out


def split_conditions(conditions: Sequence[RenderedCondition]):
    """Return ``(omega or None, chi, [incrementals...])`` from a render list."""
    by_label = {c.label: c for c in conditions}
    omega = by_label.get(OMEGA)
    chi = by_label[CHI]
    incr = [c for c in conditions if c.label not in (OMEGA, CHI)]
    return omega, chi, incr


def _check_aligned(*conds: RenderedCondition):
    shapes = {c.shape for c in conds}
    if len(shapes) > 1:
        raise ValueError(f"conditions have mismatched shapes {sorted(shapes)}")


def accumulate_dynamic(chi: RenderedCondition, incrementals: Sequence[RenderedCondition]) -> RenderedCondition:
    """Union of dynamic renders; each pixel keeps the first covering stream."""
    _check_aligned(chi, *incrementals)
    mask = chi.masks.copy()
    frames = np.where(mask[..., None], chi.frames, 0.0)
    for cond in incrementals:
        take = cond.masks & ~mask
        frames[take] = cond.frames[take]
        mask |= cond.masks
    return RenderedCondition(frames, mask, MU)


def integrate_static_dynamic(mu: RenderedCondition, omega: RenderedCondition | None) -> RenderedCondition:
    """Overlay the dynamic union on the static render; dynamic content wins."""
    if omega is None:
        return mu
    _check_aligned(mu, omega)
    take = omega.masks & ~mu.masks
    frames = mu.frames.copy()
    frames[take] = omega.frames[take]
    return RenderedCondition(frames, mu.masks | omega.masks, OMEGA_MU)


def box_downsample(a: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over axes 1 and 2 of a ``(T, H, W, ...)`` array."""
    a = np.asarray(a, dtype=np.float64)
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    t, h, w = a.shape[:3]
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide {h}x{w}")
    if factor == 1:
        return a.copy()
    rest = a.shape[3:]
    blocks = a.reshape((t, h // factor, factor, w // factor, factor) + rest)
    return blocks.mean(axis=(2, 4))


def ownership(chi: RenderedCondition, incrementals: Sequence[RenderedCondition]) -> np.ndarray:
    """Pixel owner ids ``(T, H, W)``: 0 for chi, ``j + 1`` for incremental ``j``, -1 for residual."""
    _check_aligned(chi, *incrementals)
    owner = np.where(chi.masks, 0, -1)
    for j, cond in enumerate(incrementals):
        owner[(owner < 0) & cond.masks] = j + 1
    return owner


def build_weight_maps(
    chi: RenderedCondition,
    incrementals: Sequence[RenderedCondition],
    factor: int = 1,
    residual: str = OMEGA_MU,
) -> WeightMaps:
    """Area-fraction fusion weights at latent resolution.

    Pixels are owned exclusively in priority order; everything no dynamic
    stream covers goes to the ``residual`` stream (``"omega_mu"``, or
    ``"chi"`` when there is no static state).  Each latent cell then gets the
    fraction of its ``factor x factor`` block owned by each stream, so the
    weights sum to one by construction.
    """
    if residual not in (OMEGA_MU, CHI):
        raise ValueError(f"unknown residual stream {residual!r}")
    owner = ownership(chi, incrementals)
    labels = [CHI] + [incremental_label(j) for j in range(len(incrementals))]
    planes = [owner == k for k in range(len(labels))]
    if residual == OMEGA_MU:
        labels.insert(0, OMEGA_MU)
        planes.insert(0, owner < 0)
    else:
        planes[0] = planes[0] | (owner < 0)
    stacked = np.stack(planes).astype(np.float64)
    s, t, h, w = stacked.shape
    weights = box_downsample(stacked.reshape(s * t, h, w), factor)
    return WeightMaps(tuple(labels), weights.reshape((s, t) + weights.shape[1:]))


def scalar_weight_maps(
    conditions: Sequence[RenderedCondition], factor: int = 1, fallback: str = CHI
) -> WeightMaps:
    """Per-frame scalar weights proportional to each stream's mask area.

    Used by the ablation that conditions every state independently; a frame
    where nothing is covered goes entirely to ``fallback``.
    """
    _check_aligned(*conditions)
    labels = tuple(c.label for c in conditions)
    area = np.stack([c.masks.reshape(len(c.masks), -1).mean(axis=1) for c in conditions])
    total = area.sum(axis=0)
    empty = total == 0
    frac = np.divide(area, total, out=np.zeros_like(area), where=~empty)
    frac[labels.index(fallback), empty] = 1.0
    t, h, w = conditions[0].shape
    shape = (len(labels), t, h // factor, w // factor)
    return WeightMaps(labels, np.broadcast_to(frac[:, :, None, None], shape).copy())
