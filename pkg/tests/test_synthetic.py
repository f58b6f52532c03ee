import json

import numpy as np
import pytest

from hypersample.geometry import Pose
from hypersample.sampler import NoiseSchedule, SchedulerConfig, sample_independent
from hypersample.synthetic import (
    NO_HIT,
    Box,
    OrbitViews,
    Plane,
    SceneSpec,
    Sphere,
    Texture,
    hallucinating_predictor,
    input_video,
    procedural_texture,
    raycast,
    render_ground_truth,
)
from hypersample.experiments import scene_suite, standard_scene


def test_empty_scene():
    spec = SceneSpec(width=8, height=6, background=[0.1, 0.2, 0.3])
    gt = raycast(spec, Pose.identity(), 0)
    assert np.isinf(gt.depth).all()
    np.testing.assert_array_equal(gt.frame, np.broadcast_to([0.1, 0.2, 0.3], (6, 8, 3)))
    assert (gt.patch == NO_HIT).all()


def test_fronto_parallel_plane_depth():
    spec = SceneSpec(width=16, height=12, planes=[Plane([0, 0, 3], [1, 0, 0], [0, 1, 0], [10, 10])])
    _, depth = render_ground_truth(spec, Pose.identity(), 0)
    np.testing.assert_allclose(depth, 3.0, rtol=1e-12)


def test_moving_sphere_centroid_monotone():
    spec = SceneSpec(width=64, height=48, num_frames=6,
                     spheres=[Sphere([-0.3, 0, 4], 0.4, [[1, 0, 0]], path={"kind": "linear", "velocity": [0.1, 0, 0]})])
    xs = []
    for i in range(6):
        gt = raycast(spec, Pose.identity(), i)
        v, u = np.nonzero(np.isfinite(gt.depth))
        assert gt.dynamic[v, u].all()
        xs.append(u.mean())
    assert np.all(np.diff(xs) > 0)


def test_box_faces_and_occlusion():
    spec = SceneSpec(width=32, height=32, planes=[Plane([0, 0, 6], [1, 0, 0], [0, 1, 0], [10, 10])],
                     boxes=[Box([0, 0, 3], [0.5, 0.5, 0.5], [[k / 6, 0, 0] for k in range(6)])])
    gt = raycast(spec, Pose.identity(), 0)
    assert gt.depth[16, 16] == pytest.approx(2.5)
    # camera looks along +z, so it sees the -z face (index 4)
    np.testing.assert_allclose(gt.frame[16, 16], [4 / 6, 0, 0])
    assert gt.depth[0, 0] > 5.9


def test_checker_patches_piecewise_constant():
    spec = SceneSpec(width=40, height=30, planes=[Plane([0, 0, 3], [1, 0, 0], [0, 1, 0], [5, 5],
                                                        Texture("checker", [[1, 0, 0], [0, 0, 1]], 0.5))])
    gt = raycast(spec, Pose.identity(), 0)
    for pid in np.unique(gt.patch):
        colors = gt.frame[gt.patch == pid]
        assert np.all(colors == colors[0])


def test_spec_round_trip():
    spec = standard_scene(2)
    text = json.dumps(spec.to_dict())
    back = SceneSpec.from_dict(json.loads(text))
    assert back == spec
    with pytest.raises(ValueError):
        SceneSpec.from_dict({**spec.to_dict(), "schema": "other/9"})


def test_input_video_shapes():
    spec = standard_scene(0, num_frames=3, width=28, height=16)
    video = input_video(spec)
    assert video.frames.shape == (3, 16, 28, 3) and video.depths.shape == (3, 16, 28)
    assert len(spec.target_poses()) == 5


def test_orbit_views_look_at_pivot():
    views = OrbitViews([0, 1, 5], 4.0, 1.0, [-30, 0, 30])
    for q in views.poses():
        cam = q.transform(np.array([[0.0, 1.0, 5.0]]))[0]
        np.testing.assert_allclose(cam[:2], 0.0, atol=1e-12)
        assert cam[2] == pytest.approx(4.0)


def test_suite_has_five_distinct_scenes():
    suite = scene_suite()
    assert len(suite) == 5
    assert len({json.dumps(s.to_dict(), sort_keys=True) for s in suite}) == 5
    assert all(sum(sp.dynamic for sp in s.spheres) == 2 for s in suite)


def test_procedural_texture_deterministic():
    a = procedural_texture(7, (10, 12))
    np.testing.assert_array_equal(a, procedural_texture(7, (10, 12)))
    assert not np.array_equal(a, procedural_texture(8, (10, 12)))
    assert a.min() >= 0 and a.max() <= 1


def test_hallucinated_holes_differ_between_views():
    spec = standard_scene(0, num_frames=2, width=56, height=32)
    video = input_video(spec)
    cfg = SchedulerConfig(steps=3)
    q = spec.target_poses()[0]
    a, b = sample_independent(video, [q, q], hallucinating_predictor(cfg.schedule), cfg)
    assert np.abs(a - b).max() > 0.05


def test_raycast_frame_range():
    with pytest.raises(ValueError):
        raycast(SceneSpec(num_frames=2), Pose.identity(), 2)
