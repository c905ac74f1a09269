import math
from types import SimpleNamespace

import numpy as np
import pytest

from membranecal.detect import extract_plane, hough_threshold
from membranecal.exceptions import EmptySceneError, InsufficientDataError
from membranecal.metrics import feature_precision, transform_error
from membranecal.sim import (
    BeadPhantom,
    NoiseModel,
    acquire,
    locate_beads,
    protocol_poses,
    render_bead_volumes,
    render_volume,
    simulate_acquisitions,
)
from membranecal.sim.protocol import step_u2m
from membranecal.sim.render import true_positions
from membranecal.sim.scene import pose_from_degrees
from membranecal.solver import CalibrationProblem, solve
from membranecal.sos import SosContext


def test_protocol_poses(small_scene):
    poses = protocol_poses(small_scene, seed=1)
    assert len(poses) == 12
    again = protocol_poses(small_scene, seed=1)
    for a, b in zip(poses, again):
        np.testing.assert_array_equal(a.matrix, b.matrix)
    for a, b in zip(poses, poses[1:]):
        assert transform_error(a, b)[0] > 0.5 or transform_error(a, b)[1] > 0.5

    degenerate = protocol_poses(small_scene, seed=1, degenerate=True)
    for pose in degenerate:
        np.testing.assert_array_equal(pose.matrix, degenerate[0].matrix)


def test_step_places_membrane_at_depth(small_scene):
    u2m = step_u2m(small_scene, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0)
    origin = small_scene.probe.origin_mm(small_scene.scale)
    on_ray = origin + np.array([0.0, 0.5 * small_scene.extent_mm[1] - origin[1], 0.0])
    assert u2m.apply(on_ray)[2] == pytest.approx(0.0, abs=1e-9)


def test_membrane_visible_in_both_slices(small_scene, small_poses, noiseless):
    for index, pose in enumerate(small_poses):
        volume = render_volume(small_scene, pose, noiseless, seed=1, index=index)
        for image in volume.slices().values():
            bright = np.count_nonzero(image.pixels > hough_threshold(image))
            assert bright >= 40, f"pose {index} slice {image.name}"


def test_zero_beam_width_lights_exactly_the_crossed_voxels(small_scene, small_poses):
    noise = NoiseModel.noiseless(beam_width=0.0)
    pose = small_poses[5]
    volume = render_volume(small_scene, pose, noise)

    nx, ny, nz = small_scene.dims
    points = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), -1)
    positions = true_positions(small_scene, points.reshape(-1, 3))
    heights = np.abs(small_scene.membrane_in_volume(pose).signed_distance(positions))
    expected = np.nan_to_num(heights, nan=np.inf) < 0.5 * small_scene.scale.mean
    lit = volume.data.reshape(-1) == noise.membrane_level
    assert expected.any()
    np.testing.assert_array_equal(lit, expected)


def test_true_positions_inside_scan_head_are_nan(small_scene):
    origin = small_scene.probe.origin
    positions = true_positions(small_scene, [origin + [0.0, 1.0, 0.0], origin + [0.0, 30.0, 0.0]])
    assert np.isnan(positions[0]).all()
    assert np.isfinite(positions[1]).all()


def test_membrane_outside_volume(small_scene, noiseless):
    pose = small_scene.pose_for_u2m(step_u2m(small_scene, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    with pytest.raises(EmptySceneError):
        render_volume(small_scene, pose, noiseless)


def test_rendering_is_deterministic_per_acquisition(small_scene, small_poses):
    noise = NoiseModel(speckle_sigma=0.2, line_jitter=0.5)
    first = render_volume(small_scene, small_poses[0], noise, seed=3, index=0)
    again = render_volume(small_scene, small_poses[0], noise, seed=3, index=0)
    other = render_volume(small_scene, small_poses[0], noise, seed=3, index=1)
    np.testing.assert_array_equal(first.data, again.data)
    assert not np.array_equal(first.data, other.data)


def test_acquire_names_and_records(small_scene, small_poses):
    acquisitions = simulate_acquisitions(small_scene, small_poses[:3], seed=2, render=False)
    assert [a.acquisition_id for a in acquisitions] == ["a01", "a02", "a03"]
    for acquisition in acquisitions:
        assert acquisition.volume is None
        assert acquisition.observation.acquisition_id == acquisition.acquisition_id
        np.testing.assert_array_equal(
            acquisition.observation.pose.matrix, acquisition.recorded_pose.matrix
        )
        distance, _ = transform_error(acquisition.true_pose, acquisition.recorded_pose)
        assert 0 < distance < 3.0

    rendered = acquire(small_scene, small_poses[0], seed=2, index=0)
    assert rendered.volume.acquisition_id == "a01"
    np.testing.assert_array_equal(rendered.recorded_pose.matrix, acquisitions[0].recorded_pose.matrix)


def rendered_observations(scene, poses, context):
    observations = []
    for index, pose in enumerate(poses):
        volume = render_volume(scene, pose, NoiseModel.noiseless(), seed=1, index=index)
        observations.append(extract_plane(volume, context).with_pose(pose, f"a{index + 1:02d}"))
    return observations


def test_rendered_features_lie_on_true_membrane(small_scene, small_poses):
    observations = rendered_observations(small_scene, small_poses, small_scene.context)
    problem = CalibrationProblem(observations, small_scene.t_ph2m, small_scene.scale)
    truth = SimpleNamespace(t_u2pr=small_scene.true_t_u2pr)
    report = feature_precision(observations, truth, problem)
    assert report.rms_distance < 0.03
    assert report.max_distance < 0.05
    assert report.rms_angle < 0.05


@pytest.fixture(scope="module")
def full_resolution_observations(scene, poses):
    return rendered_observations(scene, poses, scene.context)


def test_full_resolution_features_lie_on_true_membrane(scene, full_resolution_observations):
    problem = CalibrationProblem(full_resolution_observations, scene.t_ph2m, scene.scale)
    truth = SimpleNamespace(t_u2pr=scene.true_t_u2pr)
    report = feature_precision(full_resolution_observations, truth, problem)
    assert report.max_distance < 0.05
    assert report.rms_angle < 0.02


def test_full_resolution_rendered_calibration(scene, full_resolution_observations):
    problem = CalibrationProblem(full_resolution_observations, scene.t_ph2m, scene.scale)
    result = solve(problem, seed=0, restarts=10)
    distance, angle = transform_error(result.t_u2pr, scene.true_t_u2pr)
    assert distance < 0.02
    assert angle < 0.02


def test_sound_speed_correction_is_needed(small_scene, small_poses):
    water = small_scene.context.v_water
    uncorrected = SosContext(water, water)
    observations = rendered_observations(small_scene, small_poses, uncorrected)
    problem = CalibrationProblem(observations, small_scene.t_ph2m, small_scene.scale)
    truth = SimpleNamespace(t_u2pr=small_scene.true_t_u2pr)
    assert feature_precision(observations, truth, problem).rms_distance > 1.0


def test_bead_phantom_geometry():
    placement = pose_from_degrees((10.0, -5.0, 0.0), (20.0, 10.0, -30.0))
    bead = BeadPhantom.build(60.0, placement)
    assert bead.d_b == pytest.approx(60.0, abs=1e-9)
    offsets = (bead.centers - bead.centers[0]) @ bead.normal
    np.testing.assert_allclose(offsets, 0.0, atol=1e-9)
    assert abs(bead.axis @ bead.normal) < 1e-9
    with pytest.raises(ValueError):
        BeadPhantom.build(0.0)


@pytest.fixture(scope="module")
def bead_acquisitions(small_scene):
    return render_bead_volumes(small_scene, BeadPhantom.build(), per_side=1, noise=NoiseModel.noiseless())


def test_bead_volumes(bead_acquisitions):
    assert [(a.acquisition_id, a.side) for a in bead_acquisitions] == [
        ("l01", "left"),
        ("r01", "right"),
    ]
    for acquisition in bead_acquisitions:
        np.testing.assert_allclose(acquisition.centers, acquisition.true_centers)
        np.testing.assert_array_equal(acquisition.recorded_pose.matrix, acquisition.true_pose.matrix)


def test_located_beads_match_rendered_centers(bead_acquisitions):
    for acquisition in bead_acquisitions:
        found = locate_beads(acquisition.volume)
        assert found.shape == (3, 3)
        for center in acquisition.centers:
            nearest = np.min(np.linalg.norm(found - center, axis=1))
            assert nearest < 0.5, acquisition.acquisition_id

        with pytest.raises(InsufficientDataError):
            locate_beads(acquisition.volume, count=4)


def test_bead_triangle_reconstructs_in_phantom_space(small_scene, bead_acquisitions):
    bead = BeadPhantom.build()
    for acquisition in bead_acquisitions:
        u2ph = acquisition.true_pose @ small_scene.true_t_u2pr
        corrected = true_positions(small_scene, acquisition.centers)
        np.testing.assert_allclose(
            u2ph.apply(corrected), bead.triangle(acquisition.side), atol=1e-6
        )
        assert math.isclose(np.linalg.norm(corrected[0] - corrected[1]), 20.0, rel_tol=1e-6)
