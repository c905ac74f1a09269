"""
Plain file formats shared by the command line verbs.

Volumes are a short text header followed by the raw 8-bit voxels with x
varying fastest. Pose logs and bead files are CSV. Calibrations,
pre-calibrations and ground truth are flat ``key = value`` records.
Overlays are binary portable graymaps.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, settings
from .exceptions import AcquisitionMismatchError, DegenerateGeometryError, FormatError
from .geometry import RigidTransform, ScaleVector
from .metrics import AccuracyReport
from .sos import ProbeGeometry
from .volume import Volume

logger = logging.getLogger(__name__)

VOLUME_MAGIC = "membranecal-volume"
HEADER_END = b"end\n"
MATRIX_DECIMALS = 9
QUATERNION_TOLERANCE = 1e-6
POSE_FIELDS = ["id", "tx", "ty", "tz", "qw", "qx", "qy", "qz", "timestamp"]
POINT_FIELDS = ["x", "y", "z"]
BEAD_FIELDS = ["id", "side", "bead", "x", "y", "z"]


def format_number(value, decimals=None):
    if decimals is None:
        decimals = settings.NUMERIC_DECIMALS
    return f"{float(value):.{decimals}f}"


def format_value(value, decimals=None):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_number(value, decimals)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(format_value(v, decimals) for v in value)
    if value is None:
        return "-"
    return str(value)


def parse_floats(text, count=None, name="value"):
    try:
        values = [float(v) for v in text.split()]
    except ValueError:
        raise FormatError(f"{name}: expected numbers, got {text!r}")
    if count is not None and len(values) != count:
        raise FormatError(f"{name}: expected {count} numbers, got {len(values)}")
    return values


def parse_bool(text, name="value"):
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise FormatError(f"{name}: expected true or false, got {text!r}")


def write_volume(path, volume):
    header = [
        f"{VOLUME_MAGIC} {settings.FORMAT_VERSION}",
        f"id {volume.acquisition_id or '-'}",
        f"dims {format_value(list(volume.dims))}",
        f"scale {format_value(list(volume.scale))}",
        f"probe_origin {format_value(volume.probe.origin)}",
        f"probe_radius {format_number(volume.probe.surface_radius)}",
        f"temperature {format_number(volume.temperature)}",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(HEADER_END)
        f.write(np.ascontiguousarray(volume.data).tobytes(order="F"))


def read_volume(path):
    with open(path, "rb") as f:
        content = f.read()
    end = content.find(b"\n" + HEADER_END)
    if end < 0:
        raise FormatError(f"{path}: volume header not terminated")
    try:
        lines = content[:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: volume header is not text")
    payload = content[end + 1 + len(HEADER_END):]

    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != VOLUME_MAGIC:
        raise FormatError(f"{path}: not a membranecal volume")
    if not magic[1].isdigit():
        raise FormatError(f"{path}: volume format version {magic[1]!r} is not a number")
    if int(magic[1]) > settings.FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported volume format version {magic[1]}")

    header = {}
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        header[key] = value.strip()
    missing = {"dims", "scale", "probe_origin", "probe_radius", "temperature"} - set(header)
    if missing:
        raise FormatError(f"{path}: volume header lacks {', '.join(sorted(missing))}")

    dims = parse_floats(header["dims"], 3, "dims")
    if any(d <= 0 or d != int(d) for d in dims):
        raise FormatError(f"{path}: dims must be positive integers")
    dims = tuple(int(d) for d in dims)
    if len(payload) != dims[0] * dims[1] * dims[2]:
        raise FormatError(
            f"{path}: payload has {len(payload)} voxels, header promises {np.prod(dims)}"
        )
    try:
        scale = ScaleVector(*parse_floats(header["scale"], 3, "scale"))
        probe = ProbeGeometry(
            parse_floats(header["probe_origin"], 3, "probe_origin"),
            parse_floats(header["probe_radius"], 1, "probe_radius")[0],
        )
    except ValueError as e:
        raise FormatError(f"{path}: {e}")
    acquisition_id = header.get("id", "-")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(dims, order="F")
    try:
        return Volume(
            data,
            scale,
            probe,
            parse_floats(header["temperature"], 1, "temperature")[0],
            None if acquisition_id == "-" else acquisition_id,
        )
    except ValueError as e:
        raise FormatError(f"{path}: {e}")


def read_volumes(directory):
    paths = sorted(Path(directory).glob("*.vol"))
    volumes = []
    for path in paths:
        volume = read_volume(path)
        if volume.acquisition_id is None:
            volume.acquisition_id = path.stem
        volumes.append(volume)
    logger.debug(f"Read {len(volumes)} volumes from {directory}")
    return volumes


@dataclass(frozen=True, eq=False)
class PoseRecord:
    acquisition_id: str
    transform: RigidTransform
    timestamp: float = 0.0


def write_pose_log(path, records):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(POSE_FIELDS)
        for record in records:
            writer.writerow(
                [record.acquisition_id]
                + [format_number(v) for v in record.transform.translation]
                + [format_number(v, MATRIX_DECIMALS) for v in record.transform.to_quaternion()]
                + [format_number(record.timestamp)]
            )


def read_pose_log(path):
    """Pose records keyed by acquisition id."""
    records = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != POSE_FIELDS:
            raise FormatError(f"{path}: expected columns {','.join(POSE_FIELDS)}")
        for line, row in enumerate(reader, start=2):
            try:
                values = [float(row[k]) for k in POSE_FIELDS[1:]]
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{line}: unparseable pose record")
            quaternion = np.array(values[3:7])
            if abs(np.linalg.norm(quaternion) - 1.0) > QUATERNION_TOLERANCE:
                raise FormatError(f"{path}:{line}: quaternion is not unit length")
            acquisition_id = row["id"]
            if acquisition_id in records:
                raise AcquisitionMismatchError(f"{path}:{line}: duplicate pose id {acquisition_id}")
            records[acquisition_id] = PoseRecord(
                acquisition_id,
                RigidTransform.from_quaternion(quaternion / np.linalg.norm(quaternion), values[:3]),
                values[7],
            )
    return records


def write_record(path, items, comment=None):
    lines = [f"# {comment}"] if comment else []
    lines += [f"{key} = {format_value(value)}" for key, value in items]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def parse_record(text, source="record"):
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition("=")
        if not separator or not key.strip():
            raise FormatError(f"{source}:{number}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def read_record(path):
    with open(path) as f:
        return parse_record(f.read(), str(path))


def transform_items(prefix, transform):
    matrix = transform.matrix
    return [
        (f"{prefix}.{row}", [format_number(v, MATRIX_DECIMALS) for v in matrix[row]])
        for row in range(4)
    ]


def transform_from_record(record, prefix, source="record"):
    try:
        rows = [parse_floats(record[f"{prefix}.{row}"], 4, f"{prefix}.{row}") for row in range(4)]
    except KeyError as e:
        raise FormatError(f"{source}: missing {e.args[0]}")
    try:
        return RigidTransform.from_matrix(np.array(rows))
    except DegenerateGeometryError as e:
        raise FormatError(f"{source}: {prefix} is not a rigid transform: {e}")


@dataclass(frozen=True, eq=False)
class CalibrationFile:

    transform: RigidTransform
    scale: ScaleVector
    values: dict
    dims: tuple = None


def write_calibration(path, result, scale, echo=(), tool_version=None, dims=None):
    items = [
        ("format_version", settings.FORMAT_VERSION),
        ("tool_version", tool_version or __version__),
    ]
    items += transform_items("matrix", result.t_u2pr)
    items += [("scale", list(scale))]
    if dims is not None:
        items += [("dims", [int(d) for d in dims])]
    items += [
        ("rms_residual", result.rms_residual),
        ("max_residual", result.max_residual),
        ("observations", len(result.per_observation_residuals)),
        ("restart", result.restart),
        ("converged_restarts", result.converged_restarts),
        ("condition_flag", result.diagnostics.condition_flag),
        ("singular_values", [f"{v:.6e}" for v in result.diagnostics.singular_values]),
    ]
    items += [
        (f"solver.{key}", f"{value:.6e}" if isinstance(value, float) else value)
        for key, value in result.options.items()
    ]
    items += [(f"config.{key}", value) for key, value in echo]
    write_record(path, items, "membranecal calibration T_U2Pr")


def read_calibration(path):
    record = read_record(path)
    transform = transform_from_record(record, "matrix", str(path))
    if "scale" not in record:
        raise FormatError(f"{path}: missing scale")
    try:
        scale = ScaleVector(*parse_floats(record["scale"], 3, "scale"))
    except ValueError as e:
        raise FormatError(f"{path}: {e}")
    dims = None
    if "dims" in record:
        dims = parse_floats(record["dims"], 3, "dims")
        if any(d < 2 or d != int(d) for d in dims):
            raise FormatError(f"{path}: dims must be integers of at least 2")
        dims = tuple(int(d) for d in dims)
    return CalibrationFile(transform, scale, record, dims)


def read_calibrations(directory):
    paths = sorted(Path(directory).glob("*.txt"))
    if not paths:
        raise FormatError(f"No calibration files in {directory}")
    return [read_calibration(path) for path in paths]


def write_precalibration(path, precalibration, echo=()):
    fit = precalibration.fit
    items = [("format_version", settings.FORMAT_VERSION)]
    items += transform_items("matrix", precalibration.transform)
    items += [
        ("rms", precalibration.rms),
        ("points", len(fit.weights)),
        ("outliers", [int(i) for i in np.flatnonzero(fit.outliers)]),
        ("iterations", fit.iterations),
    ]
    items += [(f"config.{key}", value) for key, value in echo]
    write_record(path, items, "membranecal pre-calibration T_Ph2M")


def read_precalibration(path):
    """T_Ph2M and the recorded RMS."""
    record = read_record(path)
    transform = transform_from_record(record, "matrix", str(path))
    rms = parse_floats(record.get("rms", "0"), 1, "rms")[0]
    return transform, rms


def write_points(path, points):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(POINT_FIELDS)
        for point in np.asarray(points, dtype=float).reshape(-1, 3):
            writer.writerow([format_number(v) for v in point])


def read_points(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != POINT_FIELDS:
            raise FormatError(f"{path}: expected columns x,y,z")
        try:
            points = [[float(row[k]) for k in POINT_FIELDS] for row in reader]
        except (TypeError, ValueError):
            raise FormatError(f"{path}: unparseable point")
    return np.array(points, dtype=float).reshape(-1, 3)


def write_beads(path, beads):
    """``beads`` is a list of (acquisition id, side, centers) tuples."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BEAD_FIELDS)
        for acquisition_id, side, centers in beads:
            for index, center in enumerate(np.asarray(centers, dtype=float)):
                writer.writerow([acquisition_id, side, index] + [format_number(v) for v in center])


def read_beads(path):
    """Mapping of acquisition id to (side, voxel centers), in file order."""
    beads = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != BEAD_FIELDS:
            raise FormatError(f"{path}: expected columns {','.join(BEAD_FIELDS)}")
        for line, row in enumerate(reader, start=2):
            if row["side"] not in ("left", "right"):
                raise FormatError(f"{path}:{line}: side must be left or right")
            try:
                center = [float(row[k]) for k in ("x", "y", "z")]
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{line}: unparseable bead center")
            side, centers = beads.setdefault(row["id"], (row["side"], []))
            if side != row["side"]:
                raise FormatError(f"{path}:{line}: {row['id']} switches side")
            centers.append(center)
    return {key: (side, np.array(centers)) for key, (side, centers) in beads.items()}


def write_pgm(path, image):
    """8-bit graymap; ``image`` is a PIL image or a 2-D array."""
    if not isinstance(image, Image.Image):
        image = Image.fromarray(np.asarray(image, dtype=np.uint8))
    image.save(path, format="PPM")


def read_pgm(path):
    with Image.open(path) as image:
        return np.asarray(image.convert("L"))


def format_report(title, report):
    """One evaluation table: rows rms and max, columns mm, vox and deg."""
    lines = [
        title,
        f"{'':8}{'distance [mm]':>16}{'distance [vox]':>16}{'angle [deg]':>16}",
        f"{'rms':8}{format_number(report.rms_distance):>16}"
        f"{format_number(report.rms_distance_vox):>16}{format_number(report.rms_angle):>16}",
        f"{'max':8}{format_number(report.max_distance):>16}"
        f"{format_number(report.max_distance_vox):>16}{format_number(report.max_angle):>16}",
    ]
    if isinstance(report, AccuracyReport):
        lines.append(f"{'pairs':8}{report.pair_count:>16}")
    else:
        lines.append(f"{'count':8}{report.count:>16}")
    return "\n".join(lines) + "\n"
