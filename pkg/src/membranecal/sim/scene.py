import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .. import settings
from ..geometry import EulerPose, Plane, RigidTransform, ScaleVector
from ..sos import ProbeGeometry, SosContext

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def pose_from_degrees(angles, translation):
    return EulerPose(np.radians(angles), translation).to_transform()


def default_probe_origin(dims):
    nx, ny, nz = dims
    return ((nx - 1) / 2.0, -float(round(0.2 * ny)), (nz - 1) / 2.0)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    Perturbations of a simulated acquisition. Lengths are in voxels except
    the tracker noise and marker radius, which are in millimeters.
    """

    pose_noise_rms: float = settings.POSE_NOISE_RMS
    line_jitter: float = settings.LINE_JITTER
    speckle_sigma: float = settings.SPECKLE_SIGMA
    background_level: int = settings.BACKGROUND_LEVEL
    membrane_level: int = settings.MEMBRANE_LEVEL
    beam_width: float = settings.BEAM_WIDTH
    marker_radius: float = settings.MARKER_RADIUS
    bead_jitter: float = settings.BEAD_JITTER
    bead_width: float = settings.BEAD_WIDTH
    bead_level: int = settings.BEAD_LEVEL

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"Noise parameter {f.name} must be non-negative")
        if self.marker_radius <= 0:
            raise ValueError("Marker radius must be positive")

    @classmethod
    def noiseless(cls, **overrides):
        values = dict(pose_noise_rms=0.0, line_jitter=0.0, speckle_sigma=0.0, bead_jitter=0.0)
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class PhantomScene:
    """Ground truth of a simulated calibration setup."""

    true_t_u2pr: RigidTransform
    t_ph2m: RigidTransform
    scale: ScaleVector
    dims: tuple
    probe: ProbeGeometry
    context: SosContext

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 2:
            raise ValueError(f"Volume dims must be three counts of at least 2, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def default(cls, dims=None, scale=None, probe_origin=None, probe_radius=None,
                temperature=None, v_tissue=None, u2pr=None, ph2m=None):
        dims = tuple(dims or settings.SCENE_DIMS)
        scale = scale or settings.SCENE_SCALE
        if not isinstance(scale, ScaleVector):
            scale = ScaleVector.isotropic(scale)
        if probe_origin is None:
            probe_origin = settings.SCENE_PROBE_ORIGIN or default_probe_origin(dims)
        if probe_radius is None:
            probe_radius = settings.SCENE_PROBE_RADIUS
        if temperature is None:
            temperature = settings.SCENE_TEMPERATURE
        if u2pr is None:
            u2pr = pose_from_degrees(settings.SCENE_U2PR_ANGLES_DEG, settings.SCENE_U2PR_TRANSLATION)
        if ph2m is None:
            ph2m = pose_from_degrees(settings.SCENE_PH2M_ANGLES_DEG, settings.SCENE_PH2M_TRANSLATION)
        return cls(
            true_t_u2pr=u2pr,
            t_ph2m=ph2m,
            scale=scale,
            dims=dims,
            probe=ProbeGeometry(probe_origin, probe_radius),
            context=SosContext.from_temperature(temperature, v_tissue),
        )

    @property
    def extent_mm(self):
        return (np.array(self.dims) - 1) * self.scale.as_array()

    def u2m(self, pose):
        """Metric US space to membrane space for a probe pose T_Pr2Ph."""
        return self.t_ph2m @ pose @ self.true_t_u2pr

    def pose_for_u2m(self, u2m):
        """The T_Pr2Ph that puts the US volume at the given place in membrane space."""
        return self.t_ph2m.inverse() @ u2m @ self.true_t_u2pr.inverse()

    def membrane_in_volume(self, pose, displacement=0.0):
        """Membrane plane in metric US space, optionally displaced along its normal."""
        return Plane([0.0, 0.0, 1.0], displacement).transformed(self.u2m(pose).inverse())
