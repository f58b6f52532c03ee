"""Framed binary protocol for noise predictors running in a child process.

One request per predictor call is written to the child's stdin and one
response is read back from its stdout.  Every message is::

    magic      4 bytes   b"HSRQ" (request) or b"HSRS" (response)
    length     uint32    little-endian byte length of the JSON header
    header     UTF-8 JSON
    payload    raw little-endian float64 tensors, C order

Request header fields: ``op`` (``"predict"`` or ``"close"``), ``t``,
``cfg_scale``, ``seed``, ``view_index``, ``downsample``, ``poses`` (one
list of 12 camera-from-world numbers per frame), ``z_shape`` and
``x_shape``, and ``schedule`` (``beta_min``, ``beta_max`` of the sampler's
noise schedule).  The payload is ``z`` followed by ``x``.

Response header fields: ``shape`` of the returned noise prediction, or
``error`` with a message (then the payload is empty).

A ``close`` request (or EOF on stdin) ends the session.  Run
``python -m hypersample.protocol --kind hallucinating`` for a reference
server backed by the built-in predictors.
"""

from __future__ import annotations

import argparse
import json
import struct
import subprocess
import sys
from typing import BinaryIO, Sequence

import numpy as np

from .geometry import Pose
from .sampler import NoiseSchedule, ViewContext

REQUEST = b"HSRQ"
RESPONSE = b"HSRS"


class ProtocolError(RuntimeError):
    pass


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            raise EOFError("stream closed mid-message")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def write_message(stream: BinaryIO, magic: bytes, header: dict, tensors: Sequence[np.ndarray] = ()) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    stream.write(magic + struct.pack("<I", len(blob)) + blob)
    for arr in tensors:
        stream.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    stream.flush()


def read_message(stream: BinaryIO, magic: bytes) -> tuple[dict, bytes]:
    """Read one header; the caller pulls the payload using the shapes it names."""
    head = stream.read(4)
    if not head:
        raise EOFError("no message")
    if len(head) < 4:
        head += _read_exact(stream, 4 - len(head))
    if head != magic:
        raise ProtocolError(f"expected magic {magic!r}, got {head!r}")
    (n,) = struct.unpack("<I", _read_exact(stream, 4))
    return json.loads(_read_exact(stream, n).decode("utf-8")), b""


def read_tensor(stream: BinaryIO, shape) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape)) if shape else 1
    return np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8").reshape(shape).copy()


class SubprocessPredictor:
    """Noise predictor that forwards every call to a child process."""

    def __init__(self, command: Sequence[str], schedule: NoiseSchedule = NoiseSchedule()):
        self.command = list(command)
        self.schedule = schedule
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def __call__(self, z, x, t, *, cfg_scale=6.0, context: ViewContext):
        proc = self._ensure()
        header = {
            "op": "predict",
            "t": float(t),
            "cfg_scale": float(cfg_scale),
            "seed": int(context.seed),
            "view_index": int(context.index),
            "downsample": int(context.downsample),
            "poses": [p.matrix.reshape(-1).tolist() for p in context.poses],
            "z_shape": list(z.shape),
            "x_shape": list(x.shape),
            "schedule": {"beta_min": self.schedule.beta_min, "beta_max": self.schedule.beta_max},
        }
        try:
            write_message(proc.stdin, REQUEST, header, [z, x])
            reply, _ = read_message(proc.stdout, RESPONSE)
        except (BrokenPipeError, EOFError) as exc:
            raise ProtocolError(f"predictor process {self.command!r} died: {exc}") from exc
        if "error" in reply:
            raise ProtocolError(f"predictor error: {reply['error']}")
        out = read_tensor(proc.stdout, reply["shape"])
        if out.shape != z.shape:
            raise ProtocolError(f"predictor returned shape {out.shape}, expected {z.shape}")
        return out

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            write_message(self._proc.stdin, REQUEST, {"op": "close"})
            self._proc.stdin.close()
        except BrokenPipeError:
            pass
        self._proc.wait(timeout=30)
        self._proc.stdout.close()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(make_predictor, stdin: BinaryIO, stdout: BinaryIO) -> int:
    """Answer requests until ``close`` or EOF; returns the number served.

    ``make_predictor(schedule)`` builds the predictor for the schedule named
    in a request; one instance is kept per distinct schedule.
    """
    served = 0
    cache = {}
    while True:
        try:
            header, _ = read_message(stdin, REQUEST)
        except EOFError:
            return served
        if header.get("op") == "close":
            return served
        z = read_tensor(stdin, header["z_shape"])
        x = read_tensor(stdin, header["x_shape"])
        poses = tuple(Pose.from_matrix(np.asarray(p).reshape(3, 4)) for p in header["poses"])
        ctx = ViewContext(header["view_index"], poses, header["seed"], header["downsample"])
        sched = NoiseSchedule(**header.get("schedule", {}))
        if sched not in cache:
            cache[sched] = make_predictor(sched)
        predictor = cache[sched]
        try:
            eps = np.asarray(predictor(z, x, header["t"], cfg_scale=header["cfg_scale"], context=ctx))
        except Exception as exc:  # reported to the parent, which raises
            write_message(stdout, RESPONSE, {"error": f"{type(exc).__name__}: {exc}"})
            continue
        write_message(stdout, RESPONSE, {"shape": list(eps.shape)}, [eps])
        served += 1


def main(argv=None) -> int:
    from .synthetic import constant_predictor, hallucinating_predictor

    parser = argparse.ArgumentParser(description="Serve a built-in noise predictor over stdin/stdout.")
    parser.add_argument("--kind", choices=["hallucinating", "constant"], default="hallucinating")
    parser.add_argument("--cell", type=float, default=6.0, help="hallucination texture cell size in pixels")
    parser.add_argument("--value", type=float, nargs=3, default=[0.5, 0.5, 0.5])
    args = parser.parse_args(argv)
    if args.kind == "hallucinating":
        make = lambda sched: hallucinating_predictor(sched, args.cell)  # noqa: E731
    else:
        make = lambda sched: constant_predictor(sched, args.value)  # noqa: E731
    serve(make, sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
