import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import ScaleVector
from .sos import ProbeGeometry, SosContext

logger = logging.getLogger(__name__)

SLICE_NAMES = ("xy", "zy")


def slice_position(probe, dims):
    """Voxel indices (x, z) of the extraction slices through O_US."""
    nx, _, nz = dims
    x = int(np.clip(np.rint(probe.origin[0]), 0, nx - 1))
    z = int(np.clip(np.rint(probe.origin[2]), 0, nz - 1))
    return x, z


def empty_slice(name, dims, scale, probe):
    """Blank Slice2D with the geometry the named slice of such a volume would have."""
    nx, ny, nz = dims
    x0, z0 = slice_position(probe, dims)
    if name == "xy":
        return Slice2D(np.zeros((ny, nx), np.uint8), "xy", (scale.sx, scale.sy), z0)
    return Slice2D(np.zeros((ny, nz), np.uint8), "zy", (scale.sz, scale.sy), x0)


@dataclass(eq=False)
class Volume:
    """
    8-bit US volume indexed ``data[x, y, z]``, with the facts the scanner
    reports alongside it.
    """

    data: np.ndarray
    scale: ScaleVector
    probe: ProbeGeometry
    temperature: float
    acquisition_id: str = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3 or min(self.data.shape) < 2:
            raise ValueError(f"Volume must be 3-D with at least 2 voxels per axis, got {self.data.shape}")

    @property
    def dims(self):
        return self.data.shape

    def sos_context(self, v_tissue=None):
        return SosContext.from_temperature(self.temperature, v_tissue)

    def slice_position(self):
        return slice_position(self.probe, self.dims)

    def slice(self, name):
        x0, z0 = self.slice_position()
        if name == "xy":
            return Slice2D(self.data[:, :, z0].T.copy(), "xy", (self.scale.sx, self.scale.sy), z0)
        if name == "zy":
            return Slice2D(self.data[x0, :, :].copy(), "zy", (self.scale.sz, self.scale.sy), x0)
        raise ValueError(f"Unknown slice {name}")

    def slices(self):
        return {name: self.slice(name) for name in SLICE_NAMES}


@dataclass(eq=False)
class Slice2D:
    """
    Orthogonal slice through the probe origin. Rows run along volume y;
    columns along x for the xy slice and along z for the zy slice.
    ``position`` is the fixed voxel index of the remaining axis.
    """

    pixels: np.ndarray
    name: str
    scale: tuple = (1.0, 1.0)
    position: int = 0
    labels: tuple = field(init=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 2:
            raise ValueError(f"Slice must be at least 2x2, got {self.pixels.shape}")
        self.labels = (self.name[0], self.name[1])

    @property
    def shape(self):
        return self.pixels.shape

    def to_volume(self, columns, rows):
        """Lift slice pixel coordinates (column, row) to voxel coordinates."""
        columns = np.asarray(columns, dtype=float)
        rows = np.asarray(rows, dtype=float)
        fixed = np.full_like(columns, float(self.position))
        if self.name == "xy":
            return np.stack([columns, rows, fixed], axis=-1)
        return np.stack([fixed, rows, columns], axis=-1)

    def from_volume(self, points):
        points = np.asarray(points, dtype=float)
        if self.name == "xy":
            return points[..., 0], points[..., 1]
        return points[..., 2], points[..., 1]

    def direction_to_volume(self, direction):
        dc, dr = direction
        if self.name == "xy":
            return np.array([dc, dr, 0.0])
        return np.array([0.0, dr, dc])

    def probe_mask(self, probe, scale):
        """True where pixels lie inside the scan head radius."""
        rows, columns = np.indices(self.shape)
        points = self.to_volume(columns, rows)
        return probe.distance_mm(points, scale) < probe.surface_radius
