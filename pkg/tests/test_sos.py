import numpy as np
import pytest

from membranecal.exceptions import ProbeGeometryError, SosRangeError, UndefinedRayError
from membranecal.geometry import ScaleVector
from membranecal.sos import ProbeGeometry, SosContext, correct_point, distort_point, water_sos

# Marczak (1997) fit, used as an independent check of the water curve.
MARCZAK = (1.402385e3, 5.038813e0, -5.799136e-2, 3.287156e-4, -1.398845e-6, 2.787860e-9)


def marczak(temperature):
    return sum(k * temperature ** i for i, k in enumerate(MARCZAK))


@pytest.mark.parametrize("temperature", [0, 5, 10, 15, 20, 23, 25, 30, 37, 40, 45, 50, 55, 60])
def test_water_sos_matches_independent_fit(temperature):
    assert water_sos(temperature) == pytest.approx(marczak(temperature), abs=0.1)


def test_water_sos_at_room_temperature():
    assert water_sos(23.0) == pytest.approx(1491.21, abs=0.01)
    assert water_sos(20.0) < water_sos(30.0)


@pytest.mark.parametrize("temperature", [-1.0, 74.5, 100.0])
def test_water_sos_out_of_range(temperature):
    with pytest.raises(SosRangeError):
        water_sos(temperature)
    with pytest.raises(ValueError):
        water_sos(temperature)


def test_context_rejects_unphysical_speeds():
    with pytest.raises(SosRangeError):
        SosContext(1800.0, 1480.0)
    with pytest.raises(SosRangeError):
        SosContext(1540.0, 1200.0)


@pytest.fixture
def probe():
    return ProbeGeometry([0.0, 0.0, 0.0], 5.0)


@pytest.fixture
def scale():
    return ScaleVector.isotropic(1.0)


def test_correct_point_scales_distance_beyond_surface(probe, scale):
    context = SosContext(1540.0, 1480.0)
    corrected = correct_point([0.0, 15.0, 0.0], scale, probe, context)
    np.testing.assert_allclose(corrected, [0.0, 5.0 + 10.0 * 1540.0 / 1480.0, 0.0])
    assert corrected[1] == pytest.approx(15.4054, abs=1e-4)


def test_correct_point_properties(probe):
    scale = ScaleVector(0.5, 0.4, 0.6)
    context = SosContext.from_temperature(23.0)
    rng = np.random.default_rng(1)
    directions = rng.standard_normal((100, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    metric = directions * rng.uniform(6.0, 120.0, (100, 1))
    points = metric / scale.as_array()

    corrected = correct_point(points, scale, probe, context)
    moved = corrected * scale.as_array()
    # stays on the ray
    np.testing.assert_allclose(np.cross(moved, metric), 0.0, atol=1e-7)
    assert np.all(np.einsum("ij,ij->i", moved, metric) > 0)
    # distance beyond the surface scales by the speed ratio
    np.testing.assert_allclose(
        np.linalg.norm(moved, axis=1) - 5.0,
        (np.linalg.norm(metric, axis=1) - 5.0) * context.ratio,
    )
    np.testing.assert_allclose(distort_point(corrected, scale, probe, context), points, atol=1e-9)


def test_correct_point_is_monotone_along_ray(probe, scale):
    context = SosContext(1540.0, 1480.0)
    distances = np.linspace(5.0, 150.0, 40)
    points = np.column_stack([distances, distances, np.zeros(40)]) / np.sqrt(2.0)
    corrected = correct_point(points, scale, probe, context)
    assert np.all(np.diff(np.linalg.norm(corrected, axis=1)) > 0)


def test_identity_cases(probe, scale):
    point = np.array([3.0, 40.0, -2.0])
    same = SosContext(1500.0, 1500.0)
    np.testing.assert_allclose(correct_point(point, scale, probe, same), point)

    on_surface = np.array([3.0, 4.0, 0.0])
    context = SosContext(1540.0, 1480.0)
    np.testing.assert_allclose(correct_point(on_surface, scale, probe, context), on_surface)


def test_point_at_origin(scale):
    probe = ProbeGeometry([10.0, -5.0, 10.0], 0.0)
    context = SosContext(1540.0, 1480.0)
    with pytest.raises(UndefinedRayError):
        correct_point([10.0, -5.0, 10.0], scale, probe, context)


def test_point_inside_scan_head(probe, scale):
    with pytest.raises(ProbeGeometryError):
        correct_point([0.0, 2.0, 0.0], scale, probe, SosContext(1540.0, 1480.0))


def test_inverted_context_undoes_correction(probe, scale):
    context = SosContext.from_temperature(10.0)
    point = np.array([[20.0, 50.0, -10.0]])
    twice = correct_point(correct_point(point, scale, probe, context), scale, probe, context.inverted())
    np.testing.assert_allclose(twice, point)
