"""
Visual back-test of a calibration.

The solved membrane plane is intersected with each extraction slice,
distorted back into image space and compared with the detected line. The
overlay burns both into a copy of the slice: the solved line at full
intensity, the detected line at a lower level.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import settings
from .detect import Line2D, plane_slice_line, sample_line
from .exceptions import CalibrationError
from .formats import format_number, write_pgm
from .geometry import Plane, angle_between
from .sos import distort_point
from .volume import SLICE_NAMES

logger = logging.getLogger(__name__)

CURVE_SAMPLES = 50


@dataclass(frozen=True)
class SliceDelta:
    acquisition_id: str
    slice_name: str
    distance_mm: float
    angle_deg: float
    flagged: bool


def solved_plane(t_ph2m, pose, t_u2pr):
    return Plane([0.0, 0.0, 1.0], 0.0).transformed((t_ph2m @ pose @ t_u2pr).inverse())


def solved_curve(volume, image, plane, context, count=CURVE_SAMPLES):
    """
    Image-space (column, row) points of the solved plane in a slice. The
    plane is straight in corrected space, so its image is sampled and
    distorted point by point.
    """
    line = plane_slice_line(plane, image, volume.scale)
    if line is None:
        return None
    try:
        columns, rows = sample_line(image, line, count)
        raw = distort_point(image.to_volume(columns, rows), volume.scale, volume.probe, context)
    except CalibrationError as e:
        logger.debug(f"{volume.acquisition_id}: no solved line in slice {image.name}: {e}")
        return None
    return image.from_volume(raw)


def _metric(image, columns, rows):
    columns = np.asarray(columns) * image.scale[0]
    rows = np.asarray(rows) * image.scale[1]
    return np.column_stack([columns, rows])


def line_delta(image, detected, curve):
    """
    Distance (mm) of the detected segment midpoint from the solved line and
    the angle (deg) between both lines, measured in metric slice coordinates.
    """
    ends = detected.clip(image.shape)
    if ends is None:
        return math.nan, math.nan
    detected_points = _metric(image, *np.array(ends).T)
    solved_points = _metric(image, *curve)
    solved = Line2D.fit(solved_points[:, 0], solved_points[:, 1])
    midpoint = detected_points.mean(axis=0)
    distance = abs(float(solved.distance(midpoint[0], midpoint[1])))
    angle = angle_between(detected_points[1] - detected_points[0], solved.direction)
    return distance, math.degrees(min(angle, math.pi - angle))


def overlay(image, detected=None, curve=None, detected_level=None, solved_level=None):
    """Copy of the slice with the detected line and the solved curve burned in."""
    if detected_level is None:
        detected_level = settings.BACKTEST_DETECTED_LEVEL
    if solved_level is None:
        solved_level = settings.BACKTEST_SOLVED_LEVEL
    picture = Image.fromarray(np.asarray(image.pixels, dtype=np.uint8))
    draw = ImageDraw.Draw(picture)
    if detected is not None:
        ends = detected.clip(image.shape)
        if ends is not None:
            draw.line([tuple(ends[0]), tuple(ends[1])], fill=detected_level)
    if curve is not None:
        draw.line(list(zip(*curve)), fill=solved_level)
    return picture


def backtest_volume(
    volume,
    observation,
    pose,
    t_u2pr,
    t_ph2m,
    context=None,
    max_distance=None,
    max_angle=None,
    out_dir=None,
):
    """
    Per-slice deltas for one acquisition, writing ``<id>_<slice>.pgm``
    overlays to ``out_dir`` when given. ``observation`` may be None when
    detection failed; only the solved line is drawn then.
    """
    if context is None:
        context = volume.sos_context()
    if max_distance is None:
        max_distance = settings.BACKTEST_MAX_DISTANCE
    if max_angle is None:
        max_angle = settings.BACKTEST_MAX_ANGLE

    plane = solved_plane(t_ph2m, pose, t_u2pr)
    deltas = []
    for name in SLICE_NAMES:
        image = volume.slice(name)
        detected = observation.line(name) if observation is not None else None
        curve = solved_curve(volume, image, plane, context)
        if detected is None or curve is None:
            distance, angle = math.nan, math.nan
        else:
            distance, angle = line_delta(image, detected, curve)
        flagged = not (distance <= max_distance and angle <= max_angle)
        if flagged:
            logger.warning(
                f"{volume.acquisition_id} slice {name}: back-test delta {distance:.3f} mm, "
                f"{angle:.3f} deg exceeds limits"
            )
        deltas.append(SliceDelta(volume.acquisition_id, name, distance, angle, flagged))
        if out_dir is not None:
            path = Path(out_dir) / f"{volume.acquisition_id}_{name}.pgm"
            write_pgm(path, overlay(image, detected, curve))
    return deltas


def write_backtest_report(path, deltas):
    lines = ["# id slice distance_mm angle_deg flagged"]
    for delta in deltas:
        lines.append(
            f"{delta.acquisition_id} {delta.slice_name} {format_number(delta.distance_mm)} "
            f"{format_number(delta.angle_deg)} {'yes' if delta.flagged else 'no'}"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
