import math

import numpy as np
import pytest

from membranecal.exceptions import DegenerateGeometryError
from membranecal.geometry import (
    EulerPose,
    Plane,
    RigidTransform,
    ScaleVector,
    apply_chain,
    euler_matrix,
    euler_matrix_derivatives,
    fit_plane_robust,
    membrane_frame,
    precalibrate_membrane,
)


def random_transform(rng):
    angles = rng.uniform(-math.pi, math.pi, 3)
    angles[1] = rng.uniform(-1.4, 1.4)
    return EulerPose(angles, rng.uniform(-100, 100, 3)).to_transform()


def test_euler_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        angles = np.array(
            [rng.uniform(-3.0, 3.0), rng.uniform(-1.5, 1.5), rng.uniform(-3.0, 3.0)]
        )
        pose = EulerPose(angles, rng.uniform(-50, 50, 3))
        back = EulerPose.from_transform(pose.to_transform())
        np.testing.assert_allclose(back.angles, angles, atol=1e-9)
        np.testing.assert_allclose(back.translation, pose.translation)


def test_euler_matrix_is_intrinsic_zyx():
    yaw, pitch, roll = 0.3, -0.2, 1.1
    expected = (
        RigidTransform.from_rotation_vector([0, 0, yaw])
        @ RigidTransform.from_rotation_vector([0, pitch, 0])
        @ RigidTransform.from_rotation_vector([roll, 0, 0])
    )
    np.testing.assert_allclose(euler_matrix((yaw, pitch, roll)), expected.rotation, atol=1e-12)


def test_euler_derivatives_match_finite_differences():
    angles = np.array([0.4, -0.7, 2.1])
    derivatives = euler_matrix_derivatives(angles)
    h = 1e-6
    for k in range(3):
        delta = np.zeros(3)
        delta[k] = h
        numeric = (euler_matrix(angles + delta) - euler_matrix(angles - delta)) / (2 * h)
        np.testing.assert_allclose(derivatives[k], numeric, atol=1e-8)


def test_compose_and_inverse():
    rng = np.random.default_rng(5)
    a, b, c = (random_transform(rng) for _ in range(3))
    points = rng.uniform(-10, 10, (20, 3))

    np.testing.assert_allclose(((a @ b) @ c).matrix, (a @ (b @ c)).matrix, atol=1e-9)
    np.testing.assert_allclose((a @ b).apply(points), a.apply(b.apply(points)), atol=1e-9)
    np.testing.assert_allclose((a @ a.inverse()).matrix, np.eye(4), atol=1e-12)
    assert (a @ b).is_rigid()


def test_quaternion_round_trip():
    rng = np.random.default_rng(7)
    transform = random_transform(rng)
    quaternion = transform.to_quaternion()
    assert quaternion[0] >= 0
    assert np.linalg.norm(quaternion) == pytest.approx(1.0)
    back = RigidTransform.from_quaternion(quaternion, transform.translation)
    np.testing.assert_allclose(back.matrix, transform.matrix, atol=1e-12)


def test_from_matrix_rejects_non_rigid():
    matrix = np.eye(4)
    matrix[0, 0] = 1.1
    with pytest.raises(DegenerateGeometryError):
        RigidTransform.from_matrix(matrix)

    matrix = np.eye(4)
    matrix[3, 0] = 1.0
    with pytest.raises(DegenerateGeometryError):
        RigidTransform.from_matrix(matrix)

    reflection = np.diag([1.0, 1.0, -1.0, 1.0])
    with pytest.raises(DegenerateGeometryError):
        RigidTransform.from_matrix(reflection)


def test_scale_vector_rejects_non_positive():
    with pytest.raises(ValueError):
        ScaleVector(0.5, 0.0, 0.5)
    assert ScaleVector.isotropic(0.477) == ScaleVector(0.477, 0.477, 0.477)


def test_plane_transformed_and_canonical():
    plane = Plane([0, 0, 2], 5)
    np.testing.assert_allclose(plane.normal, [0, 0, 1])

    flipped = Plane([0, 0, -1], -5).canonical()
    np.testing.assert_allclose(flipped.normal, [0, 0, 1])
    assert flipped.offset == 5

    transform = RigidTransform.from_rotation_vector([math.pi / 2, 0, 0], [1, 2, 3])
    moved = plane.transformed(transform)
    point = transform.apply([4.0, -2.0, 5.0])
    assert moved.signed_distance(point) == pytest.approx(0.0, abs=1e-12)


def test_apply_chain_scales_before_mapping():
    scale = ScaleVector(0.5, 1.0, 2.0)
    identity = RigidTransform.identity()
    shift = RigidTransform(np.eye(3), [0, 0, 1])
    result = apply_chain(shift, identity, identity, scale, [[2.0, 2.0, 2.0]])
    np.testing.assert_allclose(result, [[1.0, 2.0, 5.0]])


def plane_points(rng, count, noise=0.0):
    xy = rng.uniform(-100, 100, (count, 2))
    z = 0.1 * xy[:, 0] - 0.2 * xy[:, 1] + 5.0
    points = np.column_stack([xy, z])
    normal = np.array([-0.1, 0.2, 1.0]) / np.linalg.norm([-0.1, 0.2, 1.0])
    return points + rng.standard_normal(count)[:, None] * noise * normal, normal


def test_fit_plane_exact():
    rng = np.random.default_rng(11)
    points, normal = plane_points(rng, 50)
    fit = fit_plane_robust(points)
    assert fit.rms == pytest.approx(0.0, abs=1e-9)
    assert fit.plane.angle_to(Plane(normal, 0.0)) == pytest.approx(0.0, abs=1e-9)
    assert not fit.outliers.any()


def test_fit_plane_rejects_outliers():
    rng = np.random.default_rng(13)
    inliers, normal = plane_points(rng, 200, noise=0.2)
    outliers, _ = plane_points(rng, 40)
    outliers = outliers + 10.0 * normal
    fit = fit_plane_robust(np.vstack([inliers, outliers]))

    reference = fit_plane_robust(inliers, iterations=0)
    assert math.degrees(fit.plane.angle_to(reference.plane)) < 0.5
    assert abs(fit.plane.offset - reference.plane.offset) < 0.1
    assert fit.outliers[200:].all()
    assert fit.inliers[:200].mean() > 0.95


@pytest.mark.parametrize("points", [
    [[0, 0, 0], [1, 1, 1]],
    [[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]],
    [[1, 2, 3]] * 5,
])
def test_fit_plane_degenerate(points):
    with pytest.raises(DegenerateGeometryError):
        fit_plane_robust(points)


def test_membrane_frame_maps_plane_to_z0():
    rng = np.random.default_rng(17)
    points, normal = plane_points(rng, 30)
    frame = membrane_frame(fit_plane_robust(points).plane)
    assert frame.is_rigid()
    np.testing.assert_allclose(frame.apply(points)[:, 2], 0.0, atol=1e-9)


def test_precalibration_rms_matches_digitizer_noise():
    rng = np.random.default_rng(19)
    points, _ = plane_points(rng, 500, noise=0.43)
    transform, rms = precalibrate_membrane(points)
    assert rms == pytest.approx(0.43, rel=0.3)
    assert np.abs(transform.apply(points)[:, 2]).mean() < 1.0


def test_euler_round_trip_over_many_poses():
    rng = np.random.default_rng(23)
    limit = math.radians(80.0)
    for _ in range(10000):
        angles = np.array(
            [rng.uniform(-math.pi, math.pi), rng.uniform(-limit, limit), rng.uniform(-math.pi, math.pi)]
        )
        back = EulerPose.from_transform(EulerPose(angles, np.zeros(3)).to_transform())
        wrapped = np.angle(np.exp(1j * (back.angles - angles)))
        np.testing.assert_allclose(wrapped, 0.0, atol=1e-9)


def test_fit_plane_follows_rigid_motion():
    rng = np.random.default_rng(29)
    inliers, normal = plane_points(rng, 150, noise=0.3)
    outliers, _ = plane_points(rng, 15)
    points = np.vstack([inliers, outliers + 8.0 * normal])
    motion = RigidTransform.from_rotation_vector([0.4, -1.1, 0.7], [30.0, -12.0, 55.0])

    fit = fit_plane_robust(points)
    moved = fit_plane_robust(motion.apply(points))
    expected = fit.plane.transformed(motion)
    sign = np.sign(expected.normal @ moved.plane.normal)
    np.testing.assert_allclose(sign * moved.plane.normal, expected.normal, atol=1e-9)
    assert sign * moved.plane.offset == pytest.approx(expected.offset, abs=1e-9)
    assert moved.rms == pytest.approx(fit.rms, abs=1e-9)
    np.testing.assert_array_equal(moved.inliers, fit.inliers)

    queries = rng.uniform(-80, 80, (25, 3))
    np.testing.assert_allclose(
        sign * moved.plane.signed_distance(motion.apply(queries)),
        fit.plane.signed_distance(queries),
        atol=1e-9,
    )


def test_precalibration_inliers_within_three_rms():
    rng = np.random.default_rng(31)
    xy = rng.uniform(-100, 100, (400, 2))
    z = 0.1 * xy[:, 0] - 0.2 * xy[:, 1] + 5.0 + rng.uniform(-0.5, 0.5, 400)
    points = np.column_stack([xy, z])
    points[:20, 2] += 12.0
    precalibration = precalibrate_membrane(points)
    assert precalibration.fit.outliers[:20].all()
    heights = np.abs(precalibration.transform.apply(points)[:, 2])
    assert np.all(heights[precalibration.fit.inliers] <= 3.0 * precalibration.rms)
