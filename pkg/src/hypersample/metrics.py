"""Cross-view photometric consistency using known scene geometry, and the
missing-information ratio of a target view."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, project, splat, unproject, valid_depth
from .hyperspace import Hyperspace, _pose_sequence


@dataclass
class ConsistencyReport:
    """Scores for consecutive view pairs.

    ``scores[p, i]`` is the mean absolute color difference (per channel) for
    pair ``(p, p + 1)`` at timestamp ``i``; ``nan`` marks pairs with no
    co-visible pixel.  ``counts`` holds the number of compared pixels.
    """

    scores: np.ndarray
    counts: np.ndarray
    missing_ratios: list[float] = field(default_factory=list)

    @property
    def per_timestamp(self) -> np.ndarray:
        return _nanmean(self.scores, axis=0)

    @property
    def per_pair(self) -> np.ndarray:
        return _nanmean(self.scores, axis=1)

    @property
    def mean(self) -> float:
        finite = np.isfinite(self.scores)
        return float(self.scores[finite].mean()) if finite.any() else float("nan")

    def to_dict(self) -> dict:
        return {
            "mean": _json_float(self.mean),
            "per_pair": [_json_float(v) for v in self.per_pair],
            "per_timestamp": [_json_float(v) for v in self.per_timestamp],
            "scores": [[_json_float(v) for v in row] for row in self.scores],
            "counts": self.counts.astype(int).tolist(),
            "missing_ratios": [float(v) for v in self.missing_ratios],
        }

    def to_table(self) -> str:
        """Tab-separated pair x timestamp table with row and column means."""
        t = self.scores.shape[1]
        lines = ["pair\t" + "\t".join(f"t{i}" for i in range(t)) + "\tmean"]
        for p, row in enumerate(self.scores):
            cells = "\t".join(_fmt(v) for v in row)
            lines.append(f"{p}-{p + 1}\t{cells}\t{_fmt(self.per_pair[p])}")
        lines.append("mean\t" + "\t".join(_fmt(v) for v in self.per_timestamp) + f"\t{_fmt(self.mean)}")
        for m, r in enumerate(self.missing_ratios):
            lines.append(f"missing_ratio[{m}]\t{r:.6f}")
        return "\n".join(lines) + "\n"


def _nanmean(a: np.ndarray, axis: int) -> np.ndarray:
    finite = np.isfinite(a)
    total = np.where(finite, a, 0.0).sum(axis=axis)
    n = finite.sum(axis=axis)
    return np.divide(total, n, out=np.full(total.shape, np.nan), where=n > 0)


def _fmt(v: float) -> str:
    return "-" if not np.isfinite(v) else f"{v:.6f}"


def _json_float(v):
    return float(v) if np.isfinite(v) else None


def pair_difference(
    src_frame,
    dst_frame,
    src_depth,
    dst_depth,
    K: CameraIntrinsics,
    src_pose: Pose,
    dst_pose: Pose,
    src_patch=None,
    dst_patch=None,
    src_region=None,
    dst_region=None,
    depth_tol: float = 0.02,
) -> tuple[float, int]:
    """Mean absolute difference between ``dst_frame`` and ``src_frame`` warped onto it.

    A destination pixel is compared when a source pixel lands on it whose
    true depth agrees with the destination's true depth (relative tolerance
    ``depth_tol``) and, if patch ids are given, which sees the same patch.
    Returns ``(score, count)``; ``score`` is ``nan`` when ``count == 0``.
    """
    src_depth = np.asarray(src_depth, dtype=np.float64)
    dst_depth = np.asarray(dst_depth, dtype=np.float64)
    keep = valid_depth(src_depth)
    if src_region is not None:
        keep &= np.asarray(src_region, dtype=bool)
    pts = unproject(np.asarray(src_frame, dtype=np.float64), np.where(keep, src_depth, np.nan), K, src_pose)
    winner, zbuf = splat(pts.xyz, K, dst_pose)
    hit = winner >= 0
    dst_ok = valid_depth(dst_depth)
    with np.errstate(invalid="ignore"):
        agree = np.abs(zbuf - dst_depth) <= depth_tol * np.where(dst_ok, dst_depth, 0.0)
    covis = hit & dst_ok & agree
    if dst_region is not None:
        covis &= np.asarray(dst_region, dtype=bool)
    if src_patch is not None and dst_patch is not None:
        sv, su = pts.source[:, 1], pts.source[:, 2]
        src_ids = np.asarray(src_patch)[sv, su]
        carried = np.full(K.shape, -2, dtype=np.int64)
        carried[hit] = src_ids[winner[hit]]
        covis &= carried == np.asarray(dst_patch)
    n = int(covis.sum())
    if n == 0:
        return float("nan"), 0
    warped = pts.colors[winner[covis]]
    diff = np.abs(warped - np.asarray(dst_frame, dtype=np.float64)[covis])
    return float(diff.mean()), n


def cross_view_consistency(
    videos,
    poses,
    K: CameraIntrinsics,
    gt_depths,
    gt_patches=None,
    regions=None,
    depth_tol: float = 0.02,
) -> ConsistencyReport:
    """Score every consecutive view pair at every timestamp.

    ``poses[m]`` is a fixed pose or a per-frame sequence.  ``gt_depths``,
    ``gt_patches`` and ``regions`` are indexed ``[view][frame]``; ``regions``
    restricts the comparison to pixels flagged in both views.
    """
    m = len(videos)
    if m < 2:
        raise ValueError("need at least two views")
    t = len(videos[0])
    if any(len(v) != t for v in videos) or len(gt_depths) != m or len(poses) != m:
        raise ValueError("videos, poses and depths must cover the same views and frames")
    seqs = [_pose_sequence(p, t) for p in poses]
    scores = np.full((m - 1, t), np.nan)
    counts = np.zeros((m - 1, t), dtype=np.int64)
    for p in range(m - 1):
        for i in range(t):
            scores[p, i], counts[p, i] = pair_difference(
                videos[p][i],
                videos[p + 1][i],
                gt_depths[p][i],
                gt_depths[p + 1][i],
                K,
                seqs[p][i],
                seqs[p + 1][i],
                None if gt_patches is None else gt_patches[p][i],
                None if gt_patches is None else gt_patches[p + 1][i],
                None if regions is None else regions[p][i],
                None if regions is None else regions[p + 1][i],
                depth_tol,
            )
    return ConsistencyReport(scores, counts)


def missing_ratio(hs: Hyperspace, target, K: CameraIntrinsics) -> float:
    """Fraction of target pixels the base dynamic state does not cover, averaged over frames."""
    poses = _pose_sequence(target, hs.num_frames)
    covered = [project(hs.base_dynamic.at(i), K, q)[1].mean() for i, q in enumerate(poses)]
    return float(1.0 - np.mean(covered))
