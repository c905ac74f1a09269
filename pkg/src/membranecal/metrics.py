"""
Evaluation of a calibration: precision of the extracted features against
the solved plane, spread of repeated calibrations and reconstruction
accuracy from the two-triangle bead phantom.

Standard deviations are population estimates. The spread of a mapped 3-D
point is the root of its summed per-axis variances.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import settings
from .detect import plane_normal_from_lines
from .exceptions import DegenerateGeometryError, InsufficientDataError
from .geometry import angle_between

logger = logging.getLogger(__name__)


def _rms(values):
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(values ** 2))) if values.size else 0.0


def _max(values):
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


@dataclass(frozen=True)
class PrecisionReport:
    rms_distance: float
    max_distance: float
    rms_angle: float
    max_angle: float
    voxel_size: float
    count: int

    @property
    def rms_distance_vox(self):
        return self.rms_distance / self.voxel_size

    @property
    def max_distance_vox(self):
        return self.max_distance / self.voxel_size

    @classmethod
    def from_errors(cls, distances, angles, voxel_size, count=None):
        return cls(
            _rms(distances),
            _max(distances),
            _rms(angles),
            _max(angles),
            float(voxel_size),
            len(distances) if count is None else count,
        )


@dataclass(frozen=True)
class AccuracyReport(PrecisionReport):
    pair_count: int = 0


def transform_error(a, b):
    """Translation distance (mm) and rotation angle (deg) between two transforms."""
    distance = float(np.linalg.norm(a.translation - b.translation))
    angle = math.degrees((a.inverse() @ b).rotation_angle())
    return distance, angle


def feature_precision(observations, result, problem):
    """
    Distances of every sample point to the membrane plane under the solved
    calibration, and per acquisition the angle between the solved plane
    normal and the normal spanned by the two extracted lines.
    """
    distances, angles = [], []
    for observation in observations:
        chain = problem.t_ph2m @ observation.pose @ result.t_u2pr
        points = observation.sample_points * problem.scale.as_array()
        distances.append(chain.apply(points)[:, 2])
        try:
            detected = plane_normal_from_lines(observation)
        except DegenerateGeometryError:
            logger.warning(f"{observation.acquisition_id}: lines parallel, no angular error")
            continue
        angle = angle_between(chain.rotation[2], detected)
        angles.append(math.degrees(min(angle, math.pi - angle)))
    distances = np.concatenate(distances) if distances else np.zeros(0)
    report = PrecisionReport.from_errors(distances, angles, problem.scale.mean)
    logger.info(
        f"Feature precision over {report.count} points: rms {report.rms_distance:.4f} mm, "
        f"rms angle {report.rms_angle:.4f} deg"
    )
    return report


def calibration_precision(calibrations, scale, dims):
    """
    Spread of repeated calibrations: the metric volume center and the
    (0, 0, 1) direction are mapped by each T_U2Pr and compared with their
    mean. ``calibrations`` holds CalibrationResult or RigidTransform objects.
    """
    transforms = [getattr(c, "t_u2pr", c) for c in calibrations]
    if len(transforms) < 2:
        raise InsufficientDataError(
            f"Calibration precision needs at least 2 calibrations, got {len(transforms)}"
        )
    center = np.asarray(dims, dtype=float) / 2.0 * scale.as_array()
    mapped = np.array([t.apply(center) for t in transforms])
    radial = np.linalg.norm(mapped - mapped.mean(axis=0), axis=1)

    directions = np.array([t.rotation[:, 2] for t in transforms])
    mean_direction = directions.mean(axis=0)
    norm = np.linalg.norm(mean_direction)
    if norm < 1e-9:
        raise DegenerateGeometryError("Calibrated directions cancel out")
    mean_direction /= norm
    angles = np.degrees([angle_between(d, mean_direction) for d in directions])

    report = PrecisionReport(
        rms_distance=_rms(radial),
        max_distance=_max(radial),
        rms_angle=_rms(angles),
        max_angle=_max(angles),
        voxel_size=scale.mean,
        count=len(transforms),
    )
    logger.info(
        f"Calibration precision over {report.count} calibrations: "
        f"{report.rms_distance:.4f} mm, {report.rms_angle:.4f} deg"
    )
    return report


@dataclass(frozen=True, eq=False)
class BeadSet:
    """Bead centers (corrected voxel coordinates) of one volume and its pose."""

    centers: np.ndarray
    pose: object
    acquisition_id: str = None

    def triangle(self, calibration, scale):
        """Barycenter and unit normal of the triangle in phantom space."""
        centers = np.asarray(self.centers, dtype=float)
        if len(centers) < 3:
            raise InsufficientDataError(
                f"Bead set {self.acquisition_id} has {len(centers)} beads, need 3"
            )
        chain = self.pose @ calibration
        points = chain.apply(centers[:3] * scale.as_array())
        normal = np.cross(points[1] - points[0], points[2] - points[0])
        length = np.linalg.norm(normal)
        edges = np.linalg.norm(points - np.roll(points, 1, axis=0), axis=1)
        if length <= 1e-9 * max(edges.max(), 1.0) ** 2:
            raise DegenerateGeometryError(f"Beads of {self.acquisition_id} are collinear")
        return points.mean(axis=0), normal / length


def bead_pairs(left_sets, right_sets, pairing=None):
    if pairing is None:
        pairing = settings.BEAD_PAIRING
    if pairing == "matched":
        return list(zip(left_sets, right_sets))
    if pairing == "cross":
        return [(left, right) for left in left_sets for right in right_sets]
    raise ValueError(f"Unknown bead pairing {pairing}")


def reconstruction_accuracy(left_sets, right_sets, calibrations, d_b, scale, pairing=None):
    """
    For every volume pair and calibration, reconstruct both triangles in
    phantom space: the distance error is the barycenter distance minus d_B,
    the angular error the angle between the two triangle normals.
    """
    if d_b <= 0:
        raise ValueError(f"Barycenter distance must be positive, got {d_b}")
    transforms = [getattr(c, "t_u2pr", c) for c in calibrations]
    pairs = bead_pairs(left_sets, right_sets, pairing)
    if not pairs or not transforms:
        raise InsufficientDataError("Reconstruction accuracy needs bead sets on both sides and a calibration")

    distances, angles = [], []
    for calibration in transforms:
        for left, right in pairs:
            left_center, left_normal = left.triangle(calibration, scale)
            right_center, right_normal = right.triangle(calibration, scale)
            distances.append(abs(np.linalg.norm(left_center - right_center) - d_b))
            angle = angle_between(left_normal, right_normal)
            angles.append(math.degrees(min(angle, math.pi - angle)))

    base = PrecisionReport.from_errors(distances, angles, scale.mean)
    report = AccuracyReport(**vars(base), pair_count=len(distances))
    logger.info(
        f"Reconstruction accuracy over {report.pair_count} pairs: "
        f"{report.rms_distance:.4f} mm, {report.rms_angle:.4f} deg"
    )
    return report
