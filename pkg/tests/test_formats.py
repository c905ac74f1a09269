import numpy as np
import pytest

from membranecal.exceptions import AcquisitionMismatchError, FormatError
from membranecal.formats import (
    PoseRecord,
    format_report,
    parse_record,
    read_beads,
    read_calibration,
    read_calibrations,
    read_pgm,
    read_points,
    read_pose_log,
    read_precalibration,
    read_volume,
    read_volumes,
    write_beads,
    write_calibration,
    write_pgm,
    write_points,
    write_pose_log,
    write_precalibration,
    write_volume,
)
from membranecal.geometry import EulerPose, RigidTransform, ScaleVector, precalibrate_membrane
from membranecal.metrics import AccuracyReport, PrecisionReport
from membranecal.solver import CalibrationResult, ObservabilityReport
from membranecal.sos import ProbeGeometry
from membranecal.volume import Volume


def make_volume(acquisition_id="a01"):
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, (7, 5, 3), dtype=np.uint8)
    return Volume(data, ScaleVector(0.4, 0.5, 0.6), ProbeGeometry([3, -1, 1], 8.0), 21.5, acquisition_id)


def test_volume_round_trip(tmp_path):
    volume = make_volume()
    write_volume(tmp_path / "a01.vol", volume)
    back = read_volume(tmp_path / "a01.vol")
    np.testing.assert_array_equal(back.data, volume.data)
    assert back.scale == volume.scale
    np.testing.assert_array_equal(back.probe.origin, volume.probe.origin)
    assert back.probe.surface_radius == 8.0
    assert back.temperature == 21.5
    assert back.acquisition_id == "a01"


def test_volume_payload_is_x_fastest(tmp_path):
    volume = make_volume()
    write_volume(tmp_path / "a01.vol", volume)
    content = (tmp_path / "a01.vol").read_bytes()
    payload = content[content.index(b"\nend\n") + 5:]
    assert payload[:2] == bytes([volume.data[0, 0, 0], volume.data[1, 0, 0]])


def test_volume_truncated(tmp_path):
    write_volume(tmp_path / "a01.vol", make_volume())
    path = tmp_path / "a01.vol"
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_volume(path)

    path.write_bytes(b"not a volume\n")
    with pytest.raises(FormatError):
        read_volume(path)


VOLUME_HEADER = (
    b"membranecal-volume 1\nid a01\ndims 1 5 3\nscale 1 1 1\n"
    b"probe_origin 0 -1 0\nprobe_radius 0\ntemperature 20\nend\n"
)


def test_volume_header_values_raise_format_errors(tmp_path):
    path = tmp_path / "a01.vol"
    write_volume(path, make_volume())
    content = path.read_bytes()
    path.write_bytes(content.replace(b"membranecal-volume 1\n", b"membranecal-volume one\n", 1))
    with pytest.raises(FormatError):
        read_volume(path)

    path.write_bytes(VOLUME_HEADER + bytes(15))
    with pytest.raises(FormatError):
        read_volume(path)


def test_read_volumes_names_unlabeled_volumes(tmp_path):
    write_volume(tmp_path / "b.vol", make_volume("x07"))
    write_volume(tmp_path / "a.vol", make_volume(None))
    volumes = read_volumes(tmp_path)
    assert [v.acquisition_id for v in volumes] == ["a", "x07"]


def test_pose_log_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    records = [
        PoseRecord(f"a{i:02d}", EulerPose(rng.uniform(-1, 1, 3), rng.uniform(-200, 200, 3)).to_transform(), i * 1.5)
        for i in range(1, 4)
    ]
    write_pose_log(tmp_path / "poses.csv", records)
    back = read_pose_log(tmp_path / "poses.csv")
    assert list(back) == ["a01", "a02", "a03"]
    for record in records:
        loaded = back[record.acquisition_id]
        np.testing.assert_allclose(loaded.transform.rotation, record.transform.rotation, atol=1e-8)
        np.testing.assert_allclose(loaded.transform.translation, record.transform.translation, atol=1e-6)
        assert loaded.timestamp == record.timestamp


POSE_HEADER = "id,tx,ty,tz,qw,qx,qy,qz,timestamp\n"


def test_pose_log_duplicate_id(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "a01,0,0,0,1,0,0,0,0\na01,1,0,0,1,0,0,0,1\n")
    with pytest.raises(AcquisitionMismatchError):
        read_pose_log(path)


@pytest.mark.parametrize("row", ["a01,0,0,0,0.5,0,0,0,0", "a01,0,0,x,1,0,0,0,0"])
def test_pose_log_bad_rows(tmp_path, row):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + row + "\n")
    with pytest.raises(FormatError):
        read_pose_log(path)


def test_parse_record():
    values = parse_record("# comment\n\na = 1 2 3\nb=text # trailing\n")
    assert values == {"a": "1 2 3", "b": "text"}
    with pytest.raises(FormatError):
        parse_record("no separator here")


def make_result(transform):
    return CalibrationResult(
        t_u2pr=transform,
        pose=EulerPose.from_transform(transform),
        rms_residual=0.31,
        max_residual=0.9,
        per_observation_residuals=(np.zeros(20),) * 12,
        diagnostics=ObservabilityReport((900.0, 500.0, 120.0, 3.0, 2.0, 1.0), False),
        cost=1.0,
        restart=3,
        converged_restarts=17,
        options={"seed": 0, "restarts": 20, "ftol": 1e-12},
    )


def test_calibration_round_trip(tmp_path):
    transform = EulerPose(np.radians([12.0, -18.0, 165.0]), [-42.0, 31.0, 118.0]).to_transform()
    path = tmp_path / "c01.txt"
    scale = ScaleVector.isotropic(0.477)
    write_calibration(path, make_result(transform), scale, [("solver.seed", "0")])

    calibration = read_calibration(path)
    np.testing.assert_allclose(calibration.transform.matrix, transform.matrix, atol=1e-8)
    assert calibration.scale == scale
    assert calibration.values["converged_restarts"] == "17"
    assert calibration.values["condition_flag"] == "false"
    assert calibration.values["solver.ftol"] == "1.000000e-12"
    assert calibration.values["config.solver.seed"] == "0"
    assert "tool_version" in calibration.values
    assert calibration.dims is None

    write_calibration(path, make_result(transform), scale, dims=(199, 199, 199))
    assert read_calibration(path).dims == (199, 199, 199)

    assert len(read_calibrations(tmp_path)) == 1
    with pytest.raises(FormatError):
        read_calibrations(tmp_path / "missing")


def test_calibration_must_be_rigid(tmp_path):
    path = tmp_path / "c01.txt"
    path.write_text(
        "matrix.0 = 2 0 0 0\nmatrix.1 = 0 1 0 0\nmatrix.2 = 0 0 1 0\nmatrix.3 = 0 0 0 1\n"
        "scale = 1 1 1\n"
    )
    with pytest.raises(FormatError):
        read_calibration(path)
    path.write_text("scale = 1 1 1\n")
    with pytest.raises(FormatError):
        read_calibration(path)
    path.write_text(
        "matrix.0 = 1 0 0 0\nmatrix.1 = 0 1 0 0\nmatrix.2 = 0 0 1 0\nmatrix.3 = 0 0 0 1\n"
        "scale = 1 1 1\ndims = 1 61 61\n"
    )
    with pytest.raises(FormatError):
        read_calibration(path)


def test_precalibration_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    points = np.column_stack([rng.uniform(-50, 50, (30, 2)), rng.normal(0, 0.1, 30)])
    write_points(tmp_path / "points.csv", points)
    loaded = read_points(tmp_path / "points.csv")
    np.testing.assert_allclose(loaded, points, atol=1e-6)

    precalibration = precalibrate_membrane(loaded)
    write_precalibration(tmp_path / "precalib.txt", precalibration)
    transform, rms = read_precalibration(tmp_path / "precalib.txt")
    np.testing.assert_allclose(transform.matrix, precalibration.transform.matrix, atol=1e-8)
    assert rms == pytest.approx(precalibration.rms, abs=1e-6)


def test_beads_round_trip(tmp_path):
    beads = [("l01", "left", np.arange(9.0).reshape(3, 3)), ("r01", "right", np.ones((3, 3)))]
    write_beads(tmp_path / "beads.csv", beads)
    back = read_beads(tmp_path / "beads.csv")
    assert list(back) == ["l01", "r01"]
    side, centers = back["l01"]
    assert side == "left"
    np.testing.assert_allclose(centers, beads[0][2])

    (tmp_path / "bad.csv").write_text("id,side,bead,x,y,z\nl01,up,0,1,2,3\n")
    with pytest.raises(FormatError):
        read_beads(tmp_path / "bad.csv")


def test_pgm_round_trip(tmp_path):
    image = np.arange(60, dtype=np.uint8).reshape(6, 10)
    write_pgm(tmp_path / "slice.pgm", image)
    assert (tmp_path / "slice.pgm").read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(read_pgm(tmp_path / "slice.pgm"), image)


def test_format_report():
    text = format_report("Feature extraction precision", PrecisionReport(0.37, 1.15, 0.6, 1.6, 0.477, 240))
    assert text.startswith("Feature extraction precision\n")
    assert "distance [mm]" in text and "distance [vox]" in text and "angle [deg]" in text
    assert "0.370000" in text
    assert "count" in text

    accuracy = AccuracyReport(0.9, 2.0, 0.5, 1.0, 0.477, 30, pair_count=30)
    assert "pairs" in format_report("Reconstruction accuracy", accuracy)


def test_identity_pose_round_trip(tmp_path):
    write_pose_log(tmp_path / "p.csv", [PoseRecord("a01", RigidTransform.identity())])
    assert read_pose_log(tmp_path / "p.csv")["a01"].transform.is_rigid()
