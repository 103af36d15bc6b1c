import logging
import math

import numpy as np
import numpy.testing as npt
import pytest

from helpers import DictProvider, frame_with_channel, gaussian_grid, make_frame
from mocapfuse import pcm, synth, tracker
from mocapfuse.calib import Camera, CameraRig, project_points, rotate_pixel
from mocapfuse.labels import KEYPOINT_INDEX, KEYPOINTS
from mocapfuse.tracker import (
    LatticeConfig,
    lattice_offsets,
    lattice_search,
    pcm_weight,
    plan_rotations,
    score_points,
    trunk_tilt,
)


def axial_rig(n=4, behind=()):
    """Cameras stacked along the optical axis; the world origin projects to
    the (integer) principal point of every one.  ``behind`` puts a camera on
    the wrong side of the origin."""
    cams = []
    for i in range(n):
        tz = -500.0 * (i + 1) if i in behind else 500.0 * (i + 1)
        cams.append(Camera(id=i, width=64, height=48, fx=50.0, fy=50.0,
                           cx=32.0, cy=24.0, translation=(0.0, 0.0, tz)))
    return CameraRig(cameras=tuple(cams))


def orthogonal_rig():
    """One camera down +z, one down +x, both 1 m from the origin."""
    cam_z = Camera(id=0, width=64, height=48, fx=200.0, fy=200.0,
                   cx=32.0, cy=24.0, translation=(0.0, 0.0, 1000.0))
    R_x = np.array([[0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [1.0, 0.0, 0.0]])
    cam_x = Camera(id=1, width=64, height=48, fx=200.0, fy=200.0,
                   cx=32.0, cy=24.0, rotation=R_x,
                   translation=(0.0, 0.0, 1000.0))
    return CameraRig(cameras=(cam_z, cam_x))


def render_point(rig, point, label, sigma=3.0, frame_index=0):
    """Per-camera frames with a Gaussian at the exact projection of point."""
    frames = {}
    for cam in rig.cameras:
        px, in_front = project_points(cam, np.asarray(point, dtype=float))
        grid = (gaussian_grid(48, 64, px[0], px[1], sigma) if in_front
                else np.zeros((48, 64)))
        frames[(cam.id, frame_index, 0)] = frame_with_channel(
            label, grid, camera_id=cam.id, frame_index=frame_index)
    return DictProvider(frames)


def zero_provider(rig, frame_index=0):
    return DictProvider({(cam.id, frame_index, 0):
                         make_frame(camera_id=cam.id, frame_index=frame_index)
                         for cam in rig.cameras})


class TestLatticeOffsets:
    def test_center_first_and_count(self):
        offs = lattice_offsets(3)
        assert tuple(offs[0]) == (0, 0, 0)
        assert len(offs) == 7 ** 3
        assert not offs.flags.writeable

    def test_tie_break_order(self):
        offs = [tuple(o) for o in lattice_offsets(2)]
        cheb = [max(abs(a), abs(b), abs(c)) for a, b, c in offs]
        assert cheb == sorted(cheb)
        for d in set(cheb):
            shell = [o for o, c in zip(offs, cheb) if c == d]
            assert shell == sorted(shell)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LatticeConfig(s=0.0)
        with pytest.raises(ValueError):
            LatticeConfig(k=0)
        with pytest.raises(ValueError):
            LatticeConfig(tilt_threshold_deg=180.0)


class TestLatticeSearch:
    def test_zero_evidence_returns_center(self):
        rig = axial_rig()
        cfg = LatticeConfig(s=10.0, k=1)
        prev = {"neck": np.array([3.0, -4.0, 5.0])}
        p, score, cams = lattice_search(prev, "neck", zero_provider(rig), rig,
                                        cfg, 0)
        npt.assert_array_equal(p, prev["neck"])
        assert score == 0.0
        npt.assert_array_equal(cams, np.zeros(4))

    def test_tracks_one_lattice_step(self):
        rig = orthogonal_rig()
        cfg = LatticeConfig(s=10.0, k=3)
        prev = {"r_wrist": np.array([0.0, 0.0, 0.0])}
        true = prev["r_wrist"] + np.array([10.0, 0.0, 0.0])
        provider = render_point(rig, true, "r_wrist")
        p, score, _ = lattice_search(prev, "r_wrist", provider, rig, cfg, 0)
        npt.assert_allclose(p, true)
        assert score > 1.9

    def test_out_of_frame_camera_contributes_zero(self):
        rig = orthogonal_rig()
        cfg = LatticeConfig(s=10.0, k=2)
        prev = {"neck": np.array([0.0, 0.0, 0.0])}
        # Peak at prev in camera 0; camera 1's channel peaks far off-grid.
        frames = dict(render_point(rig, prev["neck"], "neck").frames)
        far = frame_with_channel("neck", np.zeros((48, 64)), camera_id=1)
        frames[(1, 0, 0)] = far
        p, score, cams = lattice_search(prev, "neck", DictProvider(frames),
                                        rig, cfg, 0)
        npt.assert_array_equal(p, prev["neck"])
        assert cams[1] == 0.0 and cams[0] > 0.99

    def test_result_is_on_the_lattice(self, rng):
        rig = orthogonal_rig()
        cfg = LatticeConfig(s=7.5, k=2)
        for _ in range(20):
            grids = {(cam.id, 0, 0): frame_with_channel(
                "l_knee", rng.uniform(0, 1, (48, 64)), camera_id=cam.id)
                for cam in rig.cameras}
            provider = DictProvider(grids)
            prev = {"l_knee": rng.uniform(-40, 40, 3)}
            p, score, _ = lattice_search(prev, "l_knee", provider, rig, cfg, 0)
            steps = (p - prev["l_knee"]) / cfg.s
            npt.assert_allclose(steps, np.round(steps), atol=1e-9)
            assert np.all(np.abs(np.round(steps)) <= cfg.k)
            # The maximum can never undercut the center's own score.
            center_score, _ = score_points(prev["l_knee"], "l_knee", provider,
                                           rig, 0, cfg)
            assert score >= center_score[0] - 1e-12

    def test_missing_rotation_zero_frame_is_an_error(self):
        rig = axial_rig(2)
        cfg = LatticeConfig()
        with pytest.raises(pcm.FrameMissing):
            lattice_search({"neck": np.zeros(3)}, "neck",
                           DictProvider({}), rig, cfg, 0)


class TestPcmWeight:
    def test_all_zero_channels(self):
        rig = axial_rig()
        w, cams = pcm_weight(np.zeros(3), "r_hip", zero_provider(rig), rig, 0,
                             LatticeConfig())
        assert w == 0.0

    def test_unit_peaks_in_all_cameras(self):
        rig = axial_rig(4)
        provider = render_point(rig, (0.0, 0.0, 0.0), "r_hip")
        w, cams = pcm_weight(np.zeros(3), "r_hip", provider, rig, 0,
                             LatticeConfig())
        assert w == pytest.approx(4.0, abs=1e-6)

    def test_point_behind_one_camera(self):
        rig = axial_rig(4, behind=(2,))
        provider = render_point(rig, (0.0, 0.0, 0.0), "r_hip")
        w, cams = pcm_weight(np.zeros(3), "r_hip", provider, rig, 0,
                             LatticeConfig())
        assert w == pytest.approx(3.0, abs=1e-6)
        assert cams[2] == 0.0

    def test_weight_bounded_by_camera_count(self, rng):
        rig = axial_rig(3)
        grids = {(cam.id, 0, 0): frame_with_channel(
            "neck", rng.uniform(0, 1, (48, 64)), camera_id=cam.id)
            for cam in rig.cameras}
        w, _ = pcm_weight(rng.uniform(-20, 20, 3), "neck",
                          DictProvider(grids), rig, 0, LatticeConfig())
        assert 0.0 <= w <= rig.n_c


class TestRotatedSampling:
    def make_rotated_scene(self):
        """Camera 0 sees the r_hip Gaussian only on its 90-degree render."""
        rig = axial_rig(1)
        cam = rig.cameras[0]
        point = np.array([20.0, 10.0, 0.0])
        px, _ = project_points(cam, point)
        p_rot = rotate_pixel(px, 90.0, cam.image_center)
        frames = {
            (0, 0, 0): make_frame(camera_id=0),
            (0, 0, 90): frame_with_channel(
                "r_hip", gaussian_grid(48, 64, p_rot[0], p_rot[1], 3.0),
                camera_id=0, rotation=90.0),
        }
        return rig, point, DictProvider(frames)

    def test_lower_body_uses_assigned_rotation(self):
        rig, point, provider = self.make_rotated_scene()
        cfg = LatticeConfig(rotation_enabled=True)
        scores, _ = score_points(point, "r_hip", provider, rig, 0, cfg,
                                 rotations={0: 90.0})
        assert scores[0] == pytest.approx(1.0, abs=1e-6)

    def test_non_lower_body_labels_stay_unrotated(self):
        rig, point, provider = self.make_rotated_scene()
        cfg = LatticeConfig(rotation_enabled=True)
        # neck is not a LowerBody label: rotation-0 frame (all zero) is used.
        scores, _ = score_points(point, "neck", provider, rig, 0, cfg,
                                 rotations={0: 90.0})
        assert scores[0] == 0.0

    def test_rotation_disabled_ignores_plan(self):
        rig, point, provider = self.make_rotated_scene()
        cfg = LatticeConfig(rotation_enabled=False)
        scores, _ = score_points(point, "r_hip", provider, rig, 0, cfg,
                                 rotations={0: 90.0})
        assert scores[0] == 0.0

    def test_missing_rotated_frame_falls_back(self, caplog):
        rig = axial_rig(1)
        point = np.zeros(3)
        provider = render_point(rig, point, "r_hip")  # rotation 0 only
        cfg = LatticeConfig(rotation_enabled=True)
        with caplog.at_level(logging.INFO, logger="mocapfuse.tracker"):
            scores, _ = score_points(point, "r_hip", provider, rig, 0, cfg,
                                     rotations={0: 45.0})
        assert scores[0] == pytest.approx(1.0, abs=1e-6)
        assert any("falling back" in r.message for r in caplog.records)


class TestTrunkTilt:
    def test_upright_is_zero(self):
        assert trunk_tilt((100, 50), (100, 150)) == pytest.approx(0.0)

    def test_horizontal_trunk(self):
        # Neck to the image right of the hips.
        assert trunk_tilt((200, 100), (100, 100)) == pytest.approx(-90.0)
        assert trunk_tilt((0, 100), (100, 100)) == pytest.approx(90.0)

    def test_diagonal(self):
        assert trunk_tilt((200, 100), (100, 200)) == pytest.approx(-45.0)

    def test_inverted_is_180(self):
        assert trunk_tilt((100, 200), (100, 100)) == pytest.approx(180.0)

    def test_range_is_half_open(self):
        for ang in np.linspace(-179, 180, 73):
            v = np.array([math.sin(math.radians(ang)),
                          -math.cos(math.radians(ang))])
            neck = np.array([100.0, 100.0]) - 50 * np.array([-v[0], v[1]])
            t = trunk_tilt(neck, (100.0, 100.0))
            assert -180.0 < t <= 180.0

    def test_rotating_by_tilt_uprights_the_trunk(self, rng):
        for _ in range(50):
            neck = rng.uniform(0, 500, 2)
            midhip = rng.uniform(0, 500, 2)
            if np.allclose(neck, midhip):
                continue
            t = trunk_tilt(neck, midhip)
            c = np.array([256.0, 192.0])
            t2 = trunk_tilt(rotate_pixel(neck, t, c), rotate_pixel(midhip, t, c))
            assert abs(t2) < 1e-6

    def test_coincident_pixels_rejected(self):
        with pytest.raises(ValueError):
            trunk_tilt((10, 10), (10, 10))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            trunk_tilt((np.nan, 0), (0, 0))


class TestPlanRotations:
    def upright_positions(self, spec):
        return synth.ground_truth_positions(spec, 0)

    def test_upright_pose_plans_zero(self, still_spec, still_rig):
        plan = plan_rotations(self.upright_positions(still_spec), still_rig,
                              LatticeConfig())
        assert set(plan) == {c.id for c in still_rig.cameras}
        assert all(a == 0.0 for a in plan.values())

    def test_inverted_pose_plans_half_turn(self, still_spec, still_rig):
        q = np.zeros(40)
        q[2] = 1000.0
        q[3] = math.pi           # root pitch: full inversion
        model = synth.build_model(still_spec)
        from mocapfuse import skeleton as sk
        positions = sk.forward_kinematics(model, q)
        plan = plan_rotations(positions, still_rig, LatticeConfig())
        for angle in plan.values():
            assert abs(angle) >= 170.0

    def test_below_threshold_plans_zero(self, still_spec, still_rig):
        q = np.zeros(40)
        q[2] = 1000.0
        q[3] = math.radians(30.0)
        model = synth.build_model(still_spec)
        from mocapfuse import skeleton as sk
        positions = sk.forward_kinematics(model, q)
        plan = plan_rotations(positions, still_rig, LatticeConfig())
        assert all(a == 0.0 for a in plan.values())

    def test_trunk_behind_camera_plans_zero(self, still_spec):
        cam = Camera(id=0, width=64, height=48, fx=50.0, fy=50.0, cx=32.0,
                     cy=24.0, translation=(0.0, 0.0, -5000.0))
        rig = CameraRig(cameras=(cam,))
        plan = plan_rotations(self.upright_positions(still_spec), rig,
                              LatticeConfig())
        assert plan == {0: 0.0}

    def test_degenerate_projection_plans_zero(self):
        # Camera straight above, looking down the trunk axis: neck and hips
        # project to the same pixel.
        R = np.diag([1.0, -1.0, -1.0])
        cam = Camera(id=0, width=64, height=48, fx=50.0, fy=50.0, cx=32.0,
                     cy=24.0, rotation=R, translation=(0.0, 0.0, 3000.0))
        rig = CameraRig(cameras=(cam,))
        positions = {"neck": np.array([0.0, 0.0, 1500.0]),
                     "r_hip": np.array([0.0, 0.0, 1000.0]),
                     "l_hip": np.array([0.0, 0.0, 1000.0])}
        plan = plan_rotations(positions, rig, LatticeConfig())
        assert plan == {0: 0.0}

    def test_angles_are_quantized(self, still_spec, still_rig):
        q = np.zeros(40)
        q[2] = 1000.0
        q[3] = math.radians(123.456)
        model = synth.build_model(still_spec)
        from mocapfuse import skeleton as sk
        positions = sk.forward_kinematics(model, q)
        plan = plan_rotations(positions, still_rig, LatticeConfig())
        for angle in plan.values():
            assert angle == float(int(angle))
