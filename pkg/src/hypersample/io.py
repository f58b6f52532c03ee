"""On-disk formats.

frames
    Binary PPM (``P6``), 8 bits per channel.  Float frames in ``[0, 1]`` are
    quantized with ``round(255 * clip(x, 0, 1))``; reading returns ``k / 255``.
depths
    16-byte header (8-byte magic ``HSDEPTH1``, little-endian uint32 width,
    uint32 height) followed by ``width * height`` little-endian float32
    values in row-major order.  Invalid pixels are stored as ``inf``.
poses
    Text, one camera-from-world 3x4 matrix per line, 12 numbers in row-major
    order ``r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2``.  ``#`` lines are
    comments.  Numbers are written with 17 significant digits so a round
    trip is exact.
intrinsics
    Text, one line ``fx fy cx cy width height``.
hyperspace snapshot
    8-byte magic ``HSSPACE1``, uint32 header length, UTF-8 JSON header
    describing the states, then for every point set its ``xyz`` and
    ``colors`` as little-endian float64 rows.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, ColoredPointSet, Pose
from .hyperspace import Hyperspace, WorldState

DEPTH_MAGIC = b"HSDEPTH1"
SNAPSHOT_MAGIC = b"HSSPACE1"


class FormatError(ValueError):
    """A file exists but does not follow its documented format."""


def quantize(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame)
    data = frame if frame.dtype == np.uint8 else quantize(frame)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) frame, got {data.shape}")
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_ppm_bytes(path) -> np.ndarray:
    """Raw ``(H, W, 3)`` uint8 pixels of a P6 file."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(f"{path}: not an 8-bit P6 file")
    w, h = int(tokens[1]), int(tokens[2])
    body = raw[pos + 1 :]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    return read_ppm_bytes(path).astype(np.float64) / 255.0


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    out = np.where(np.isfinite(depth) & (depth > 0), depth, np.inf).astype("<f4")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(out.tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != DEPTH_MAGIC:
        raise FormatError(f"{path}: bad depth header")
    w, h = struct.unpack("<II", raw[8:16])
    if len(raw) != 16 + 4 * w * h:
        raise FormatError(f"{path}: expected {w * h} depth values")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(h, w).astype(np.float64)


def _num(v: float) -> str:
    return repr(float(v))


def format_poses(poses) -> str:
    lines = ["# camera-from-world 3x4, row-major: r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2"]
    for p in poses:
        lines.append(" ".join(_num(v) for v in p.matrix.reshape(-1)))
    return "\n".join(lines) + "\n"


def write_poses(path, poses) -> None:
    Path(path).write_text(format_poses(poses), encoding="utf-8")


def parse_poses(text: str, source: str = "<poses>") -> list[Pose]:
    poses = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        values = line.split()
        if len(values) != 12:
            raise FormatError(f"{source}:{n}: expected 12 numbers, found {len(values)}")
        try:
            poses.append(Pose.from_matrix(np.array([float(v) for v in values]).reshape(3, 4)))
        except ValueError as exc:
            raise FormatError(f"{source}:{n}: {exc}") from exc
    return poses


def read_poses(path) -> list[Pose]:
    return parse_poses(Path(path).read_text(encoding="utf-8"), str(path))


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    text = "# fx fy cx cy width height\n"
    text += " ".join([_num(K.fx), _num(K.fy), _num(K.cx), _num(K.cy), str(K.width), str(K.height)]) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_intrinsics(path) -> CameraIntrinsics:
    rows = [l.split() for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip() and not l.startswith("#")]
    if len(rows) != 1 or len(rows[0]) != 6:
        raise FormatError(f"{path}: expected one line 'fx fy cx cy width height'")
    fx, fy, cx, cy = (float(v) for v in rows[0][:4])
    return CameraIntrinsics(fx, fy, cx, cy, int(rows[0][4]), int(rows[0][5]))


def write_snapshot(path, hs: Hyperspace) -> None:
    states = [hs.base_dynamic] + ([hs.base_static] if hs.base_static is not None else []) + list(hs.incremental)
    header = {
        "schema": "hypersample.hyperspace/1",
        "states": [
            {"kind": s.kind, "origin": s.origin, "skipped": list(s.skipped), "counts": [len(p) for p in s.points]}
            for s in states
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + struct.pack("<I", len(blob)) + blob)
        for s in states:
            for p in s.points:
                fh.write(p.xyz.astype("<f8").tobytes())
                fh.write(p.colors.astype("<f8").tobytes())


def read_snapshot(path) -> Hyperspace:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad hyperspace snapshot header")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    pos = 12 + n
    states = []
    for entry in header["states"]:
        sets = []
        for count in entry["counts"]:
            size = count * 3 * 8
            xyz = np.frombuffer(raw[pos : pos + size], dtype="<f8").reshape(count, 3)
            colors = np.frombuffer(raw[pos + size : pos + 2 * size], dtype="<f8").reshape(count, 3)
            pos += 2 * size
            sets.append(ColoredPointSet(xyz, colors))
        states.append(WorldState(entry["kind"], tuple(sets), entry["origin"], tuple(entry["skipped"])))
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after last state")
    dynamic = states[0]
    rest = states[1:]
    static = rest.pop(0) if rest and rest[0].kind == "base_static" else None
    return Hyperspace(dynamic, static, tuple(rest))


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def frame_name(i: int) -> str:
    return f"{i:06d}"
