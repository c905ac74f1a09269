"""
Speed of sound in water and the sectorial probe distortion correction.

The scanner converts echo times to depth assuming the tissue speed of sound.
Imaging the membrane through water shifts every point along its ray from
the probe origin; correct_point moves it back, scaling the distance beyond
the scan head surface by v_tissue / v_water.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import settings
from .exceptions import ProbeGeometryError, SosRangeError, UndefinedRayError

logger = logging.getLogger(__name__)

# Bilaniuk & Wong (1993), 148-point fit, with the 1996 erratum applied.
# c(t) = sum(k_i * t^i), t in degrees Celsius, c in m/s.
BILANIUK_WONG_COEFFICIENTS = (
    1.40238742e3,
    5.03821344e0,
    -5.80539349e-2,
    3.32000870e-4,
    -1.44537900e-6,
    2.99402365e-9,
)


def water_sos(temperature):
    """Speed of sound in pure water (m/s) at the given temperature (°C)."""
    temperature = float(temperature)
    if not settings.WATER_TEMPERATURE_MIN <= temperature <= settings.WATER_TEMPERATURE_MAX:
        raise SosRangeError(
            f"Water temperature {temperature} °C outside "
            f"[{settings.WATER_TEMPERATURE_MIN}, {settings.WATER_TEMPERATURE_MAX}]"
        )
    return float(np.polynomial.polynomial.polyval(temperature, BILANIUK_WONG_COEFFICIENTS))


def _check_speed(name, value):
    if not settings.SOS_MIN < value < settings.SOS_MAX:
        raise SosRangeError(f"{name} {value} m/s outside ({settings.SOS_MIN}, {settings.SOS_MAX})")


@dataclass(frozen=True)
class SosContext:
    v_tissue: float
    v_water: float
    temperature: float = None

    def __post_init__(self):
        _check_speed("Tissue speed of sound", self.v_tissue)
        _check_speed("Water speed of sound", self.v_water)

    @classmethod
    def from_temperature(cls, temperature, v_tissue=None):
        if v_tissue is None:
            v_tissue = settings.TISSUE_SOS
        return cls(float(v_tissue), water_sos(temperature), float(temperature))

    @property
    def ratio(self):
        return self.v_tissue / self.v_water

    def inverted(self):
        return SosContext(self.v_water, self.v_tissue, self.temperature)


@dataclass(frozen=True, eq=False)
class ProbeGeometry:
    """Sectorial probe: origin O_US in voxel coordinates, scan head radius in mm."""

    origin: np.ndarray
    surface_radius: float
    probe_type: str = "sectorial"

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        if self.surface_radius < 0:
            raise ValueError(f"Surface radius must be non-negative, got {self.surface_radius}")
        if self.probe_type != "sectorial":
            raise ValueError(f"Unsupported probe type {self.probe_type}")

    def origin_mm(self, scale):
        return self.origin * scale.as_array()

    def distance_mm(self, points, scale):
        s = scale.as_array()
        return np.linalg.norm(np.asarray(points, dtype=float) * s - self.origin * s, axis=-1)


def rescale_along_rays(points, scale, probe, ratio):
    """Scale each point's distance beyond the scan head surface by ratio."""
    points = np.asarray(points, dtype=float)
    s = scale.as_array()
    origin = probe.origin * s
    rays = points * s - origin
    distances = np.linalg.norm(rays, axis=-1)
    if np.any(distances == 0):
        raise UndefinedRayError("Point coincides with the probe origin")
    inside = distances < probe.surface_radius * (1.0 - 1e-12)
    if np.any(inside):
        raise ProbeGeometryError(
            f"{np.count_nonzero(inside)} point(s) inside the scan head radius "
            f"{probe.surface_radius} mm"
        )
    corrected = probe.surface_radius + ratio * (distances - probe.surface_radius)
    moved = origin + rays * (corrected / distances)[..., None]
    return moved / s


def correct_point(points, scale, probe, context):
    """Undo the sectorial sound speed distortion of voxel points."""
    return rescale_along_rays(points, scale, probe, context.ratio)


def distort_point(points, scale, probe, context):
    """Inverse of correct_point: where a true point shows up in the image."""
    return rescale_along_rays(points, scale, probe, 1.0 / context.ratio)
