"""
Rigid transforms, the Euler parameterization used by the solver, planes and
the robust membrane plane fit.

Frames follow the membrane calibration chain: US voxel space U is scaled to
millimeters, mapped by T_U2Pr into probe space, by the tracked T_Pr2Ph into
phantom space and by the pre-calibrated T_Ph2M into membrane space M, where
the membrane is the z = 0 plane.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import settings
from .exceptions import DegenerateGeometryError

logger = logging.getLogger(__name__)

EULER_SEQUENCE = "ZYX"


def _frozen(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ScaleVector:
    """Millimeters per voxel along x, y and z"""

    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name in ("sx", "sy", "sz"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"Scale component {name} must be positive, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def isotropic(cls, value):
        return cls(value, value, value)

    def as_array(self):
        return np.array([self.sx, self.sy, self.sz])

    @property
    def mean(self):
        return (self.sx + self.sy + self.sz) / 3.0

    def __iter__(self):
        return iter((self.sx, self.sy, self.sz))

    def __eq__(self, other):
        if not isinstance(other, ScaleVector):
            return NotImplemented
        return tuple(self) == tuple(other)

    def __hash__(self):
        return hash(tuple(self))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    Homogeneous rigid motion p -> rotation @ p + translation, in millimeters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float).reshape(3, 3)
        translation = np.array(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, atol=1e-6):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise DegenerateGeometryError(f"Expected a 4x4 matrix, got {matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0], atol=atol):
            raise DegenerateGeometryError("Last matrix row is not (0, 0, 0, 1)")
        transform = cls(matrix[:3, :3], matrix[:3, 3])
        if not transform.is_rigid(atol):
            raise DegenerateGeometryError("Rotation block is not orthonormal")
        return transform

    @classmethod
    def from_quaternion(cls, quaternion, translation):
        """Quaternion is scalar-first (w, x, y, z)."""
        w, x, y, z = quaternion
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), translation)

    @classmethod
    def from_rotation_vector(cls, rotation_vector, translation=(0.0, 0.0, 0.0)):
        return cls(Rotation.from_rotvec(rotation_vector).as_matrix(), translation)

    def to_quaternion(self):
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        if w < 0:
            x, y, z, w = -x, -y, -z, -w
        return np.array([w, x, y, z])

    @property
    def matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def is_rigid(self, atol=1e-9):
        return bool(
            np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=atol)
            and abs(np.linalg.det(self.rotation) - 1.0) <= atol
        )

    def inverse(self):
        rotation = self.rotation.T
        return RigidTransform(rotation, -rotation @ self.translation)

    def compose(self, other):
        """self after other: (self o other)(p) = self(other(p))"""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vector(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def rotation_angle(self):
        cosine = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(cosine, -1.0, 1.0)))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a, b):
    return a.compose(b)


def euler_matrix(angles):
    """Intrinsic Z-Y-X (yaw, pitch, roll) rotation matrix."""
    yaw, pitch, roll = angles
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def euler_matrix_derivatives(angles):
    """
    Partial derivatives of euler_matrix with respect to yaw, pitch and roll,
    stacked along the first axis.
    """
    yaw, pitch, roll = angles
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    drz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    dry = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    return np.stack([drz @ ry @ rx, rz @ dry @ rx, rz @ ry @ drx])


@dataclass(frozen=True, eq=False)
class EulerPose:
    """
    Six-parameter rigid pose: intrinsic Z-Y-X angles (yaw, pitch, roll) in
    radians and a translation in millimeters.
    """

    angles: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", _frozen(np.array(self.angles, dtype=float).reshape(3)))
        object.__setattr__(
            self, "translation", _frozen(np.array(self.translation, dtype=float).reshape(3))
        )

    @classmethod
    def from_transform(cls, transform):
        angles = Rotation.from_matrix(transform.rotation).as_euler(EULER_SEQUENCE)
        return cls(angles, transform.translation)

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        return cls(vector[:3], vector[3:6])

    def as_vector(self):
        return np.concatenate([self.angles, self.translation])

    def to_transform(self):
        return RigidTransform(euler_matrix(self.angles), self.translation)


@dataclass(frozen=True, eq=False)
class Plane:
    """Points p with normal . p = offset."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.array(self.normal, dtype=float).reshape(3)
        length = np.linalg.norm(normal)
        if not length > 0:
            raise DegenerateGeometryError("Plane normal has zero length")
        object.__setattr__(self, "normal", _frozen(normal / length))
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def project(self, points):
        points = np.asarray(points, dtype=float)
        return points - self.signed_distance(points)[..., None] * self.normal

    def transformed(self, transform):
        normal = transform.rotation @ self.normal
        return Plane(normal, self.offset + normal @ transform.translation)

    def canonical(self):
        """Orient the normal so that offset >= 0, ties broken lexicographically."""
        if self.offset < 0 or (
            self.offset == 0 and tuple(-self.normal) > tuple(self.normal)
        ):
            return Plane(-self.normal, -self.offset)
        return self

    def angle_to(self, other):
        """Angle between the two planes' normals regardless of orientation."""
        cosine = abs(float(self.normal @ other.normal))
        return float(np.arccos(min(cosine, 1.0)))


@dataclass(frozen=True, eq=False)
class PlaneFit:
    plane: Plane
    rms: float
    weights: np.ndarray
    iterations: int

    @property
    def inliers(self):
        return self.weights > 0

    @property
    def outliers(self):
        return ~self.inliers


def _weighted_plane(points, weights):
    total = weights.sum()
    centroid = weights @ points / total
    centered = (points - centroid) * np.sqrt(weights)[:, None]
    _, singular_values, vt = np.linalg.svd(centered, full_matrices=False)
    if singular_values[0] <= 0 or singular_values[1] <= 1e-9 * singular_values[0]:
        raise DegenerateGeometryError("Points are coincident or collinear")
    normal = vt[2]
    return Plane(normal, normal @ centroid).canonical()


def fit_plane_robust(points, iterations=None, cutoff=None):
    """
    Least-squares plane refined with a Tukey biweight M-estimator.

    The cutoff is ``cutoff`` times the normalized median absolute plane
    distance, re-estimated on every iteration. Points with zero final weight
    are reported as outliers and the RMS is taken over the inliers only.
    """
    if iterations is None:
        iterations = settings.TUKEY_ITERATIONS
    if cutoff is None:
        cutoff = settings.TUKEY_CUTOFF

    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise DegenerateGeometryError(f"Need at least 3 points to fit a plane, got {len(points)}")

    weights = np.ones(len(points))
    plane = _weighted_plane(points, weights)
    extent = max(1.0, float(np.ptp(points, axis=0).max()))

    done = 0
    for done in range(1, iterations + 1):
        residuals = plane.signed_distance(points)
        scale = settings.MAD_NORMALIZATION * np.median(np.abs(residuals))
        if scale <= 1e-12 * extent:
            logger.debug(f"Plane fit exact after {done - 1} iterations")
            break
        u = residuals / (cutoff * scale)
        new_weights = np.where(np.abs(u) < 1.0, (1.0 - u ** 2) ** 2, 0.0)
        if np.count_nonzero(new_weights) < 3:
            break
        try:
            plane = _weighted_plane(points, new_weights)
        except DegenerateGeometryError:
            break
        weights = new_weights

    inliers = weights > 0
    residuals = plane.signed_distance(points[inliers])
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    logger.debug(
        f"Fitted plane n={plane.normal} d={plane.offset:.4f} rms={rms:.4f} "
        f"outliers={np.count_nonzero(~inliers)}"
    )
    return PlaneFit(plane, rms, weights, done)


def membrane_frame(plane):
    """
    Transform that maps the plane onto z = 0.

    The in-plane x axis is the projection of e_x (e_y when the plane is
    perpendicular to e_x) and the origin is the projection of the source
    origin.
    """
    z_axis = plane.normal
    x_axis = np.array([1.0, 0.0, 0.0])
    x_axis = x_axis - (x_axis @ z_axis) * z_axis
    if np.linalg.norm(x_axis) < 1e-6:
        x_axis = np.array([0.0, 1.0, 0.0])
        x_axis = x_axis - (x_axis @ z_axis) * z_axis
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.vstack([x_axis, y_axis, z_axis])
    origin = plane.offset * z_axis
    return RigidTransform(rotation, -rotation @ origin)


@dataclass(frozen=True, eq=False)
class Precalibration:
    transform: RigidTransform
    rms: float
    fit: PlaneFit

    def __iter__(self):
        return iter((self.transform, self.rms))


def precalibrate_membrane(surface_points, iterations=None, cutoff=None):
    """Fit the membrane support plane in phantom space and build T_Ph2M."""
    fit = fit_plane_robust(surface_points, iterations, cutoff)
    transform = membrane_frame(fit.plane)
    logger.info(
        f"Membrane pre-calibration from {len(fit.weights)} points, rms {fit.rms:.3f} mm"
    )
    return Precalibration(transform, fit.rms, fit)


def apply_chain(t_ph2m, t_pr2ph, t_u2pr, scale, points):
    """Map voxel coordinates through the full chain into membrane space."""
    chain = t_ph2m @ t_pr2ph @ t_u2pr
    return chain.apply(np.asarray(points, dtype=float) * scale.as_array())


def angle_between(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cosine = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))
