import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_intrinsics, random_pose
from oracles import area_weights, priority_compose, random_condition
from hypersample.conditioning import (
    CHI,
    OMEGA,
    OMEGA_MU,
    RenderedCondition,
    accumulate_dynamic,
    box_downsample,
    build_weight_maps,
    incremental_label,
    integrate_static_dynamic,
    ownership,
    render_all_states,
    render_state,
    scalar_weight_maps,
)
from hypersample.geometry import ColoredPointSet
from hypersample.hyperspace import BASE_DYNAMIC, INCREMENTAL, Hyperspace, WorldState, build_base
from hypersample.synthetic import Plane, SceneSpec, Texture, input_video

RED, BLUE, GREEN, GRAY = [1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0], [0.5, 0.5, 0.5]


def pixel(color, on, label):
    return RenderedCondition(np.array(color, float).reshape(1, 1, 1, 3), np.array([[[on]]]), label)


class TestRender:
    def test_base_only_gives_single_condition(self):
        spec = SceneSpec(width=16, height=12, num_frames=2,
                         planes=[Plane([0, 1.4, 5], [1, 0, 0], [0, 1, 0], [5, 5], Texture())])
        hs = build_base(input_video(spec), with_static=False)
        conds = render_all_states(hs, spec.input_poses(), spec.intrinsics)
        assert [c.label for c in conds] == [CHI]

    def test_empty_entry_all_false(self, rng):
        K = random_intrinsics(rng, 8, 6)
        state = WorldState(INCREMENTAL, (ColoredPointSet.empty(),) * 2, "x")
        cond = render_state(state, [random_pose(rng)] * 2, K, "incr0")
        assert not cond.masks.any()

    def test_base_dynamic_reproduces_input(self):
        spec = SceneSpec(width=24, height=16, num_frames=3, camera_start=[-0.2, 1.4, 0], camera_end=[0.2, 1.4, 0],
                         planes=[Plane([0, 1.4, 5], [1, 0, 0], [0, 1, 0], [2, 1],
                                       Texture("checker", [RED, BLUE], 0.3))])
        video = input_video(spec)
        hs = build_base(video, with_static=False)
        cond = render_all_states(hs, video.poses, video.K)[0]
        valid = np.isfinite(video.depths)
        np.testing.assert_array_equal(cond.masks, valid)
        np.testing.assert_allclose(cond.frames[valid], video.frames[valid], atol=1e-6)

    def test_state_order(self):
        hs = Hyperspace(
            WorldState(BASE_DYNAMIC, (ColoredPointSet.empty(),), "input"),
            WorldState("base_static", (ColoredPointSet.empty(),), "input"),
            (WorldState(INCREMENTAL, (ColoredPointSet.empty(),), "Q0"),),
        )
        from hypersample.geometry import CameraIntrinsics, Pose

        conds = render_all_states(hs, Pose.identity(), CameraIntrinsics(1, 1, 0, 0, 2, 2))
        assert [c.label for c in conds] == [OMEGA, CHI, incremental_label(0)]


class TestComposition:
    def test_base_dynamic_priority(self):
        mu = accumulate_dynamic(pixel(RED, True, CHI), [pixel(BLUE, True, "incr0")])
        np.testing.assert_array_equal(mu.frames[0, 0, 0], RED)
        assert mu.masks.all()

    def test_lower_incremental_wins(self):
        mu = accumulate_dynamic(pixel(RED, False, CHI), [pixel(BLUE, True, "incr0"), pixel(GREEN, True, "incr1")])
        np.testing.assert_array_equal(mu.frames[0, 0, 0], BLUE)

    def test_dynamic_over_static(self):
        out = integrate_static_dynamic(pixel(RED, True, "mu"), pixel(GRAY, True, OMEGA))
        np.testing.assert_array_equal(out.frames[0, 0, 0], RED)
        out = integrate_static_dynamic(pixel(RED, False, "mu"), pixel(GRAY, True, OMEGA))
        np.testing.assert_array_equal(out.frames[0, 0, 0], GRAY)
        assert out.masks.all()

    def test_missing_static_passthrough(self):
        mu = pixel(RED, True, "mu")
        assert integrate_static_dynamic(mu, None) is mu

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 4))
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        chi = random_condition(rng, (2, 16, 16), CHI)
        incr = [random_condition(rng, (2, 16, 16), incremental_label(j)) for j in range(n)]
        omega = random_condition(rng, (2, 16, 16), OMEGA)
        mu = accumulate_dynamic(chi, incr)
        f, m = priority_compose([chi] + incr)
        np.testing.assert_array_equal(mu.frames, f)
        np.testing.assert_array_equal(mu.masks, m)
        om = integrate_static_dynamic(mu, omega)
        f, m = priority_compose([mu, omega])
        np.testing.assert_array_equal(om.frames, f)
        np.testing.assert_array_equal(om.masks, m)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            accumulate_dynamic(random_condition(rng, (1, 4, 4), CHI), [random_condition(rng, (1, 4, 5), "incr0")])


class TestWeights:
    def test_all_empty_goes_to_residual(self, rng):
        chi = RenderedCondition(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4), bool), CHI)
        wm = build_weight_maps(chi, [])
        np.testing.assert_array_equal(wm[OMEGA_MU], 1.0)
        np.testing.assert_array_equal(wm[CHI], 0.0)

    def test_full_chi(self):
        chi = RenderedCondition(np.zeros((1, 4, 4, 3)), np.ones((1, 4, 4), bool), CHI)
        incr = RenderedCondition(np.zeros((1, 4, 4, 3)), np.ones((1, 4, 4), bool), "incr0")
        wm = build_weight_maps(chi, [incr])
        np.testing.assert_array_equal(wm[CHI], 1.0)
        np.testing.assert_array_equal(wm["incr0"], 0.0)

    def test_area_fraction_quarter(self):
        masks = np.zeros((1, 2, 2), bool)
        masks[0, 0, 1] = True
        wm = build_weight_maps(RenderedCondition(np.zeros((1, 2, 2, 3)), masks, CHI), [], factor=2)
        assert wm[CHI].shape == (1, 1, 1)
        assert wm[CHI][0, 0, 0] == 0.25 and wm[OMEGA_MU][0, 0, 0] == 0.75

    def test_residual_to_chi_without_static(self, rng):
        chi = random_condition(rng, (1, 8, 8), CHI)
        wm = build_weight_maps(chi, [], residual=CHI)
        assert wm.labels == (CHI,)
        np.testing.assert_array_equal(wm[CHI], 1.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 3), factor=st.sampled_from([1, 2, 4]))
    def test_matches_owner_counting(self, seed, n, factor):
        rng = np.random.default_rng(seed)
        chi = random_condition(rng, (2, 8, 8), CHI)
        incr = [random_condition(rng, (2, 8, 8), incremental_label(j)) for j in range(n)]
        wm = build_weight_maps(chi, incr, factor)
        want = area_weights([chi.masks] + [c.masks for c in incr], factor)
        np.testing.assert_allclose(wm.weights, want, atol=1e-12)
        np.testing.assert_allclose(wm.weights.sum(axis=0), 1.0, atol=1e-12)

    def test_ownership_ids(self):
        chi = pixel(RED, False, CHI)
        incr = [pixel(BLUE, False, "incr0"), pixel(GREEN, True, "incr1")]
        assert ownership(chi, incr)[0, 0, 0] == 2
        assert ownership(chi, [])[0, 0, 0] == -1

    def test_scalar_weights(self, rng):
        a = RenderedCondition(np.zeros((2, 2, 2, 3)), np.array([[[1, 1], [0, 0]], [[0, 0], [0, 0]]], bool), CHI)
        b = RenderedCondition(np.zeros((2, 2, 2, 3)), np.array([[[1, 1], [1, 1]], [[0, 0], [0, 0]]], bool), "incr0")
        wm = scalar_weight_maps([a, b])
        np.testing.assert_allclose(wm[CHI][0], 1 / 3)
        np.testing.assert_allclose(wm["incr0"][0], 2 / 3)
        np.testing.assert_array_equal(wm[CHI][1], 1.0)
        np.testing.assert_allclose(wm.weights.sum(axis=0), 1.0)


class TestDownsample:
    def test_identity(self, rng):
        a = rng.random((2, 4, 4, 3))
        np.testing.assert_array_equal(box_downsample(a, 1), a)

    def test_block_means(self, rng):
        a = rng.random((1, 8, 8))
        out = box_downsample(a, 2)
        for y in range(4):
            for x in range(4):
                assert out[0, y, x] == pytest.approx(a[0, 2 * y:2 * y + 2, 2 * x:2 * x + 2].mean(), abs=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(box_downsample(np.full((1, 8, 8, 3), 0.7), 2), 0.7)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            box_downsample(np.zeros((1, 5, 4)), 2)
