"""Dataset layout, run configuration and the synth / generate / evaluate steps.

Dataset directory::

    scene.json         scene spec (optional; needed for ground-truth scoring)
    intrinsics.txt     shared intrinsics
    poses.txt          one input pose per frame
    targets.txt        external target poses (optional)
    frames/NNNNNN.ppm  input frames
    depths/NNNNNN.depth input depths

Run directory::

    views/view_MM/NNNNNN.ppm   generated frames of target view MM (1-based)
    aux/NNNNNN.ppm             auxiliary sweep (external guided runs only)
    aux_poses.txt, targets.txt poses used for the sweep and the target views
    hyperspace.bin             final hyperspace snapshot
    manifest.json              config echo, growth record, artifact hashes
    run.log                    timings (not part of the manifest)
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .experiments import SceneTruth, score_videos
from .hyperspace import InputVideo, IterativeDepthCompleter, build_base
from .metrics import missing_ratio
from .protocol import SubprocessPredictor
from .sampler import EXTERNAL, INTERNAL, SchedulerConfig, sample_independent, sample_multiview
from .synthetic import SceneSpec, constant_predictor, hallucinating_predictor, input_video, oracle_predictor
from .tsdf import TSDFConfig

log = logging.getLogger("hypersample")

RUN_SCHEMA = "hypersample.run/1"
MANIFEST_SCHEMA = "hypersample.manifest/1"
REPORT_SCHEMA = "hypersample.report/1"


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class DataError(RuntimeError):
    """Missing or malformed input data (exit code 3)."""


class ThresholdError(RuntimeError):
    """An evaluation threshold was violated (exit code 4)."""


def default_view_indices(num_frames: int, count: int = 5) -> list[int]:
    """Evenly spaced frame indices; ``[0, 12, 24, 36, 48]`` for 49 frames."""
    return [int(round(v)) for v in np.linspace(0, num_frames - 1, count)]


@dataclass
class RunConfig:
    dataset: str = ""
    output: str = ""
    mode: str = INTERNAL
    pipeline: str = "guided"
    num_frames: int = 49
    width: int = 672
    height: int = 384
    target_indices: list | None = None
    targets: object = "scene"
    steps: int = 30
    cfg_scale: float = 6.0
    seed: int = 0
    downsample: int = 1
    with_ish: bool = True
    with_hgs: bool = True
    with_static: bool = True
    tsdf: dict = field(default_factory=dict)
    completer: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=lambda: {"kind": "hallucinating"})
    schema: str = RUN_SCHEMA

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            for name in ("dataset", "output"):
                value = getattr(cfg, name)
                if value and not Path(value).is_absolute():
                    setattr(cfg, name, str((base_dir / value).resolve()))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.schema != RUN_SCHEMA:
            raise ConfigError(f"schema must be {RUN_SCHEMA!r}, got {self.schema!r}")
        if not self.dataset:
            raise ConfigError("'dataset' is required")
        if not self.output:
            raise ConfigError("'output' is required")
        if self.mode not in (INTERNAL, EXTERNAL):
            raise ConfigError(f"'mode' must be 'internal' or 'external', got {self.mode!r}")
        if self.pipeline not in ("guided", "baseline"):
            raise ConfigError(f"'pipeline' must be 'guided' or 'baseline', got {self.pipeline!r}")
        for name in ("num_frames", "width", "height", "steps", "downsample"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"'{name}' must be a positive integer, got {value!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"'seed' must be a non-negative integer, got {self.seed!r}")
        for name in ("with_ish", "with_hgs", "with_static"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"'{name}' must be true or false")
        if self.width % self.downsample or self.height % self.downsample:
            raise ConfigError(f"'downsample' {self.downsample} must divide {self.width}x{self.height}")
        if self.target_indices is not None:
            if not self.target_indices or not all(
                isinstance(i, int) and 0 <= i < self.num_frames for i in self.target_indices
            ):
                raise ConfigError(f"'target_indices' must be frame indices in [0, {self.num_frames - 1}]")
        if self.mode == EXTERNAL and self.targets != "scene":
            if not isinstance(self.targets, list) or not all(
                isinstance(p, list) and len(p) == 12 for p in self.targets
            ):
                raise ConfigError("'targets' must be \"scene\" or a list of 12-number camera-from-world matrices")
        unknown_tsdf = sorted(set(self.tsdf) - {f.name for f in fields(TSDFConfig)})
        if unknown_tsdf:
            raise ConfigError(f"unknown tsdf field(s): {', '.join(unknown_tsdf)}")
        unknown_completer = sorted(set(self.completer) - {"tol", "max_sweeps"})
        if unknown_completer:
            raise ConfigError(f"unknown completer field(s): {', '.join(unknown_completer)}")
        kind = self.predictor.get("kind") if isinstance(self.predictor, dict) else None
        if kind not in ("hallucinating", "oracle", "constant", "subprocess"):
            raise ConfigError(f"predictor kind must be hallucinating, oracle, constant or subprocess, got {kind!r}")
        if kind == "subprocess" and not self.predictor.get("command"):
            raise ConfigError("subprocess predictor needs a 'command' list")

    def scheduler(self) -> SchedulerConfig:
        return SchedulerConfig(self.steps, float(self.cfg_scale), self.seed, self.downsample)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(raw, base_dir=path.parent)


def load_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        return SceneSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise DataError(f"scene spec not found: {path}") from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid scene spec: {exc}") from exc


def write_scene(path, spec: SceneSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_frames(directory: Path, frames) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = directory / f"{io.frame_name(i)}.ppm"
        io.write_ppm(p, frame)
        paths.append(p)
    return paths


def synth(scene_path, out_dir) -> Path:
    """Render the input video of a scene spec into a dataset directory."""
    spec = load_scene(scene_path)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        video = input_video(spec)
        write_scene(out / "scene.json", spec)
        io.write_intrinsics(out / "intrinsics.txt", video.K)
        io.write_poses(out / "poses.txt", video.poses)
        if spec.views is not None:
            io.write_poses(out / "targets.txt", spec.target_poses())
        _write_frames(out / "frames", video.frames)
        (out / "depths").mkdir(exist_ok=True)
        for i, depth in enumerate(video.depths):
            io.write_depth(out / "depths" / f"{io.frame_name(i)}.depth", depth)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    return out


@dataclass
class Dataset:
    video: InputVideo
    targets: list | None
    scene: SceneSpec | None


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    try:
        K = io.read_intrinsics(root / "intrinsics.txt")
        poses = io.read_poses(root / "poses.txt")
        frames = [io.read_ppm(root / "frames" / f"{io.frame_name(i)}.ppm") for i in range(len(poses))]
        depths = [io.read_depth(root / "depths" / f"{io.frame_name(i)}.depth") for i in range(len(poses))]
        targets = io.read_poses(root / "targets.txt") if (root / "targets.txt").exists() else None
    except FileNotFoundError as exc:
        raise DataError(f"dataset incomplete: {exc.filename} is missing") from exc
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc
    scene = load_scene(root / "scene.json") if (root / "scene.json").exists() else None
    try:
        video = InputVideo(np.stack(frames), np.stack(depths), tuple(poses), K)
    except ValueError as exc:
        raise DataError(f"{root}: {exc}") from exc
    return Dataset(video, targets, scene)


def resolve_targets(cfg: RunConfig, data: Dataset) -> list:
    video = data.video
    if cfg.mode == INTERNAL:
        indices = cfg.target_indices or default_view_indices(video.num_frames)
        return [video.poses[i] for i in indices]
    if cfg.targets == "scene":
        if not data.targets:
            raise DataError("external mode with targets \"scene\" needs targets.txt in the dataset")
        return list(data.targets)
    from .geometry import Pose

    return [Pose.from_matrix(np.asarray(p, dtype=np.float64).reshape(3, 4)) for p in cfg.targets]


def make_predictor(cfg: RunConfig, data: Dataset):
    sched = cfg.scheduler().schedule
    spec = cfg.predictor
    kind = spec["kind"]
    if kind == "hallucinating":
        return hallucinating_predictor(sched, float(spec.get("cell", 6.0)))
    if kind == "constant":
        return constant_predictor(sched, spec.get("value", [0.5, 0.5, 0.5]))
    if kind == "oracle":
        if data.scene is None:
            raise DataError("oracle predictor needs scene.json in the dataset")
        return oracle_predictor(sched, data.scene)
    return SubprocessPredictor(spec["command"], sched)


def _check_dims(cfg: RunConfig, video: InputVideo) -> None:
    got = (video.num_frames, video.K.width, video.K.height)
    want = (cfg.num_frames, cfg.width, cfg.height)
    if got != want:
        raise ConfigError(
            f"config expects {want[0]} frames of {want[1]}x{want[2]} but dataset has {got[0]} frames of {got[1]}x{got[2]}"
        )


def generate(cfg: RunConfig) -> dict:
    """Run the configured pipeline and write the run directory; returns the manifest."""
    data = load_dataset(cfg.dataset)
    video = data.video
    _check_dims(cfg, video)
    targets = resolve_targets(cfg, data)
    if cfg.mode == EXTERNAL and cfg.pipeline == "guided" and cfg.with_ish:
        if len(targets) < 2:
            raise ConfigError("external mode needs at least two target views")
        if video.num_frames < len(targets):
            raise ConfigError(
                f"external mode needs at least one frame per target view ({len(targets)} targets, "
                f"{video.num_frames} frames)"
            )
    out = Path(cfg.output)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    sched = cfg.scheduler()
    predictor = make_predictor(cfg, data)
    file_log = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    file_log.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    log.addHandler(file_log)
    log.setLevel(logging.INFO)
    try:
        start = time.perf_counter()
        aux = aux_poses = None
        growth, observed, skipped = [], [], {}
        if cfg.pipeline == "baseline":
            videos = sample_independent(video, targets, predictor, sched)
            hyperspace = None
            timings = []
        else:
            tsdf_cfg = TSDFConfig(**cfg.tsdf)
            hs = build_base(video, with_static=cfg.with_static, tsdf_config=tsdf_cfg)
            log.info("base hyperspace built in %.3fs", time.perf_counter() - start)
            completer = IterativeDepthCompleter(**cfg.completer)
            res = sample_multiview(
                video, hs, targets, cfg.mode, predictor, sched, completer, cfg.with_ish, cfg.with_hgs
            )
            videos, hyperspace, timings = res.videos, res.hyperspace, res.timings
            aux, aux_poses, observed = res.aux_video, res.aux_poses, res.observed_sizes
            growth = list(range(1, len(hyperspace.incremental) + 1))
            skipped = {s.origin: list(s.skipped) for s in hyperspace.incremental}
        labels = (["Q0"] if aux is not None else []) + [f"view {m}" for m in range(1, len(videos) + 1)]
        for label, seconds in zip(labels, timings):
            log.info("%s sampled in %.3fs", label, seconds)
        log.info("total %.3fs", time.perf_counter() - start)
    finally:
        log.removeHandler(file_log)
        file_log.close()
        if isinstance(predictor, SubprocessPredictor):
            predictor.close()

    extra = {
        "config": cfg.to_dict(),
        "mode": cfg.mode,
        "observed_incremental_sizes": observed,
        "incremental_growth": growth,
        "skipped_frames": skipped,
    }
    if aux is not None:
        paths = _write_frames(out / "aux", aux)
        io.write_poses(out / "aux_poses.txt", aux_poses)
        extra["aux"] = {"poses": "aux_poses.txt", "frames": [p.relative_to(out).as_posix() for p in paths]}
    if hyperspace is not None:
        io.write_snapshot(out / "hyperspace.bin", hyperspace)
    return write_run(out, videos, targets, cfg.pipeline, extra)


def write_run(out, videos, targets, pipeline: str, extra: dict | None = None) -> dict:
    """Write view frames, ``targets.txt`` and ``manifest.json`` into a run directory.

    Every file already in ``out`` except ``run.log`` is hashed into the
    manifest, so auxiliary artifacts must be written first.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_poses(out / "targets.txt", targets)
    views = []
    for m, frames in enumerate(videos, start=1):
        paths = _write_frames(out / "views" / f"view_{m:02d}", frames)
        views.append(
            {
                "index": m,
                "pose": targets[m - 1].matrix.reshape(-1).tolist(),
                "frames": [p.relative_to(out).as_posix() for p in paths],
            }
        )
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "pipeline": pipeline,
        "num_frames": len(videos[0]) if videos else 0,
        "views": views,
        "aux": None,
        **(extra or {}),
    }
    artifacts = sorted(
        p for p in out.rglob("*") if p.is_file() and p.name not in ("manifest.json", "run.log")
    )
    manifest["artifacts"] = [{"path": p.relative_to(out).as_posix(), "sha256": io.sha256(p)} for p in artifacts]
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _load_run(run_dir: Path):
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{run_dir}: manifest.json is missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    from .geometry import Pose

    videos, poses = [], []
    for expected, view in enumerate(manifest["views"], start=1):
        if view["index"] != expected:
            raise DataError(f"{run_dir}: view {expected} is absent from the manifest")
        vdir = run_dir / "views" / f"view_{expected:02d}"
        if not vdir.is_dir():
            raise DataError(f"{run_dir}: view {expected} is missing ({vdir} not found)")
        try:
            videos.append(np.stack([io.read_ppm(run_dir / f) for f in view["frames"]]))
        except FileNotFoundError as exc:
            raise DataError(f"{run_dir}: view {expected} is incomplete: {exc.filename} not found") from exc
        poses.append(Pose.from_matrix(np.asarray(view["pose"]).reshape(3, 4)))
    return manifest, videos, poses


def evaluate(run_dirs, dataset_dir, out_dir=None, max_score=None, static_only=False) -> dict:
    """Score runs against dataset ground truth and write ``report.tsv`` / ``report.json``.

    Raises :class:`ThresholdError` after writing the reports if any run's
    mean score exceeds ``max_score``.
    """
    data = load_dataset(dataset_dir)
    if data.scene is None:
        raise DataError(f"{dataset_dir}: scene.json is required for ground-truth scoring")
    run_dirs = [Path(r) for r in run_dirs]
    loaded = [_load_run(r) for r in run_dirs]
    counts = {len(v) for _, v, _ in loaded}
    if len(counts) > 1:
        raise DataError(f"runs have different view counts: {sorted(counts)}")
    hs = build_base(data.video, with_static=False)
    summary = {"schema": REPORT_SCHEMA, "dataset": str(Path(dataset_dir)), "runs": []}
    tables = []
    truth_cache = {}
    for run_dir, (manifest, videos, poses) in zip(run_dirs, loaded):
        if len(videos) < 2:
            raise DataError(f"{run_dir}: need at least two views to score")
        key = tuple(p.matrix.tobytes() for p in poses)
        if key not in truth_cache:
            truth_cache[key] = SceneTruth.at_views(data.scene, poses)
        truth = truth_cache[key]
        report = score_videos(videos, poses, data.scene, truth, static_only)
        report.missing_ratios = [missing_ratio(hs, q, data.video.K) for q in poses]
        entry = {"run": str(run_dir), "pipeline": manifest.get("pipeline"), **report.to_dict()}
        summary["runs"].append(entry)
        tables.append(f"# run {run_dir} ({manifest.get('pipeline')})\n" + report.to_table())
    summary["means"] = {e["run"]: e["mean"] for e in summary["runs"]}
    out = Path(out_dir) if out_dir else run_dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    lines = ["run\tpipeline\tmean"] + [f"{e['run']}\t{e['pipeline']}\t{e['mean']}" for e in summary["runs"]]
    (out / "report.tsv").write_text("\n".join(lines) + "\n\n" + "\n".join(tables), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if max_score is not None:
        bad = [e for e in summary["runs"] if e["mean"] is None or e["mean"] > max_score]
        if bad:
            names = ", ".join(f"{e['run']} ({e['mean']})" for e in bad)
            raise ThresholdError(f"consistency above {max_score}: {names}")
    return summary
