import io as stdio
import sys

import numpy as np
import pytest

from hypersample.geometry import Pose
from hypersample.protocol import (
    REQUEST,
    RESPONSE,
    ProtocolError,
    SubprocessPredictor,
    read_message,
    read_tensor,
    serve,
    write_message,
)
from hypersample.sampler import NoiseSchedule, SchedulerConfig, ViewContext, sample_independent
from hypersample.synthetic import hallucinating_predictor, input_video
from hypersample.experiments import standard_scene

SERVER = [sys.executable, "-m", "hypersample.protocol", "--kind", "hallucinating"]


def test_message_framing_round_trip(rng):
    buf = stdio.BytesIO()
    z = rng.standard_normal((2, 3, 4))
    write_message(buf, REQUEST, {"a": 1}, [z])
    buf.seek(0)
    header, _ = read_message(buf, REQUEST)
    assert header == {"a": 1}
    np.testing.assert_array_equal(read_tensor(buf, z.shape), z)


def test_bad_magic():
    buf = stdio.BytesIO(b"XXXX\x00\x00\x00\x00")
    with pytest.raises(ProtocolError):
        read_message(buf, RESPONSE)


def test_in_memory_serve_matches_direct(rng):
    sched = NoiseSchedule()
    direct = hallucinating_predictor(sched)
    ctx = ViewContext(2, (Pose.identity(), Pose.look_at([1, 0, 0], [0, 0, 5])), 99)
    z, x = rng.standard_normal((2, 4, 6, 3)), rng.random((2, 4, 6, 4))
    req = stdio.BytesIO()
    header = {
        "op": "predict", "t": 0.4, "cfg_scale": 6.0, "seed": 99, "view_index": 2, "downsample": 1,
        "poses": [p.matrix.reshape(-1).tolist() for p in ctx.poses], "z_shape": [2, 4, 6, 3],
        "x_shape": [2, 4, 6, 4], "schedule": {"beta_min": 0.1, "beta_max": 20.0},
    }
    write_message(req, REQUEST, header, [z, x])
    write_message(req, REQUEST, {"op": "close"})
    req.seek(0)
    out = stdio.BytesIO()
    assert serve(lambda s: hallucinating_predictor(s), req, out) == 1
    out.seek(0)
    reply, _ = read_message(out, RESPONSE)
    got = read_tensor(out, reply["shape"])
    np.testing.assert_array_equal(got, direct(z, x, 0.4, cfg_scale=6.0, context=ctx))


def test_subprocess_bit_identical_to_in_process():
    spec = standard_scene(0, num_frames=2, width=28, height=16)
    video = input_video(spec)
    cfg = SchedulerConfig(steps=3)
    targets = spec.target_poses()[:2]
    want = sample_independent(video, targets, hallucinating_predictor(cfg.schedule), cfg)
    with SubprocessPredictor(SERVER, cfg.schedule) as remote:
        got = sample_independent(video, targets, remote, cfg)
    for a, b in zip(want, got):
        np.testing.assert_array_equal(a, b)


def test_dead_child_reported():
    pred = SubprocessPredictor([sys.executable, "-c", "pass"])
    ctx = ViewContext(1, (Pose.identity(),), 0)
    with pytest.raises(ProtocolError):
        pred(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 4)), 0.5, cfg_scale=1.0, context=ctx)
    pred.close()


def test_child_error_forwarded():
    with SubprocessPredictor(SERVER) as pred:
        ctx = ViewContext(1, (Pose.identity(),), 0)
        with pytest.raises(ProtocolError, match="ValueError"):
            pred(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 4)), 0.0, cfg_scale=1.0, context=ctx)
