"""
Two-triangle bead phantom for reconstruction accuracy.

Six beads lie in one plane, three per triangle, with the triangle
barycenters d_B apart. Each simulated volume images one triangle only.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .. import settings
from ..exceptions import BeadPlacementError, InsufficientDataError
from ..geometry import RigidTransform, euler_matrix
from ..sos import distort_point
from ..volume import Volume
from .render import (
    JITTER_STREAM,
    POSE_STREAM,
    SPECKLE_STREAM,
    acquisition_rng,
    record_pose,
    true_positions,
)
from .scene import FWHM_TO_SIGMA, NoiseModel

logger = logging.getLogger(__name__)

TRIANGLE = np.array([[-10.0, -8.0, 0.0], [10.0, -8.0, 0.0], [0.0, 16.0, 0.0]])
SIDES = ("left", "right")

# Bead plane faces the probe: phantom x along US x, phantom y along US z.
FACING_PROBE = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])

BEAD_INDEX_BASE = 1000
AWAY_SHIFT = 10.0
ROTATION_RANGE = math.radians(15.0)
OFFSET_RANGE = 5.0
PLACEMENT_MARGIN = 2.0
BEAD_BOX = 5


@dataclass(frozen=True, eq=False)
class BeadPhantom:
    """Bead centers in phantom space (mm)."""

    centers: np.ndarray

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(6, 3)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def build(cls, barycenter_distance=None, placement=None):
        if barycenter_distance is None:
            barycenter_distance = settings.BEAD_BARYCENTER_DISTANCE
        if barycenter_distance <= 0:
            raise ValueError(f"Barycenter distance must be positive, got {barycenter_distance}")
        if placement is None:
            placement = RigidTransform.identity()
        half = np.array([barycenter_distance / 2.0, 0.0, 0.0])
        local = np.vstack([TRIANGLE - half, TRIANGLE + half])
        return cls(placement.apply(local))

    def triangle(self, side):
        return self.centers[:3] if side == "left" else self.centers[3:]

    def barycenter(self, side):
        return self.triangle(side).mean(axis=0)

    @property
    def d_b(self):
        return float(np.linalg.norm(self.barycenter("left") - self.barycenter("right")))

    @property
    def normal(self):
        left = self.triangle("left")
        normal = np.cross(left[1] - left[0], left[2] - left[0])
        return normal / np.linalg.norm(normal)

    @property
    def axis(self):
        """Unit vector from the left to the right barycenter."""
        axis = self.barycenter("right") - self.barycenter("left")
        return axis / np.linalg.norm(axis)


@dataclass(frozen=True, eq=False)
class BeadAcquisition:
    acquisition_id: str
    side: str
    volume: Volume
    true_pose: RigidTransform
    recorded_pose: RigidTransform
    centers: np.ndarray
    true_centers: np.ndarray


def bead_pose(scene, bead, side, rng):
    """True T_Pr2Ph imaging one triangle near the volume center."""
    in_plane = np.cross(bead.normal, bead.axis)
    bead_frame = np.vstack([bead.axis, in_plane, bead.normal])
    jitter = euler_matrix(rng.uniform(-ROTATION_RANGE, ROTATION_RANGE, 3))
    rotation = jitter @ FACING_PROBE @ bead_frame
    away = -1.0 if side == "left" else 1.0
    target = (
        scene.extent_mm / 2.0
        + away * AWAY_SHIFT * (rotation @ bead.axis)
        + rng.uniform(-OFFSET_RANGE, OFFSET_RANGE, 3)
    )
    phantom_to_us = RigidTransform(rotation, target - rotation @ bead.barycenter(side))
    return phantom_to_us.inverse() @ scene.true_t_u2pr.inverse()


def _check_placement(scene, centers, name):
    low = PLACEMENT_MARGIN
    high = np.array(scene.dims) - 1 - PLACEMENT_MARGIN
    if np.any(centers < low) or np.any(centers > high):
        raise BeadPlacementError(f"Bead outside volume {name}: {np.round(centers, 2).tolist()}")


def render_beads(scene, centers_mm, noise, speckle_rng, name):
    """Volume with Gaussian blobs at the given true metric US positions."""
    nx, ny, nz = scene.dims
    sigma = max(noise.bead_width * FWHM_TO_SIGMA * scene.scale.mean, 1e-9)
    background = float(noise.background_level)
    peak = float(noise.bead_level) - background

    data = np.empty(scene.dims, dtype=np.uint8)
    columns, rows = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    for z in range(nz):
        points = np.stack([columns, rows, np.full(columns.shape, z)], axis=-1).reshape(-1, 3)
        positions = true_positions(scene, points)
        profile = np.zeros(len(points))
        for center in centers_mm:
            squared = np.sum((positions - center) ** 2, axis=1)
            profile += np.exp(-0.5 * np.nan_to_num(squared, nan=np.inf) / sigma ** 2)
        intensity = background + peak * np.minimum(profile, 1.0)
        if noise.speckle_sigma > 0:
            intensity *= 1.0 + noise.speckle_sigma * speckle_rng.standard_normal(intensity.shape)
        data[:, :, z] = np.clip(np.rint(intensity), 0, 255).astype(np.uint8).reshape(nx, ny)
    return Volume(data, scene.scale, scene.probe, scene.context.temperature, name)


def render_bead_volumes(scene, bead, per_side=None, noise=None, seed=0):
    """
    ``per_side`` volumes of each triangle. Returned centers are image voxel
    coordinates of the rendered beads (including bead jitter), the stand-in
    for manual extraction; ``true_centers`` are before jitter.
    """
    if per_side is None:
        per_side = settings.BEAD_VOLUMES_PER_SIDE
    if noise is None:
        noise = NoiseModel()
    s = scene.scale.as_array()

    acquisitions = []
    for side_index, side in enumerate(SIDES):
        for k in range(per_side):
            index = BEAD_INDEX_BASE + side_index * per_side + k
            name = f"{side[0]}{k + 1:02d}"
            rng = acquisition_rng(seed, index, JITTER_STREAM)
            pose = bead_pose(scene, bead, side, rng)
            u2ph = pose @ scene.true_t_u2pr
            true_mm = u2ph.inverse().apply(bead.triangle(side))
            rendered_mm = true_mm + rng.standard_normal(true_mm.shape) * noise.bead_jitter * s
            true_centers = distort_point(true_mm / s, scene.scale, scene.probe, scene.context)
            centers = distort_point(rendered_mm / s, scene.scale, scene.probe, scene.context)
            _check_placement(scene, centers, name)

            volume = render_beads(
                scene, rendered_mm, noise, acquisition_rng(seed, index, SPECKLE_STREAM), name
            )
            recorded = record_pose(pose, noise, acquisition_rng(seed, index, POSE_STREAM))
            logger.debug(f"Rendered bead volume {name}")
            acquisitions.append(
                BeadAcquisition(name, side, volume, pose, recorded, centers, true_centers)
            )
    return acquisitions


def _mode(values):
    values = values.astype(np.int64).ravel()
    return int(np.argmax(np.bincount(values - values.min()))) + int(values.min())


def locate_beads(volume, count=3, box=BEAD_BOX):
    """
    Bead centers in voxel coordinates: repeatedly take the brightest voxel,
    refine it by the intensity-weighted centroid over a box around it, then
    blank the neighborhood before looking for the next one.
    """
    data = np.asarray(volume.data, dtype=float)
    weights = np.clip(data - _mode(volume.data), 0.0, None)
    work = weights.copy()
    half = box // 2
    centers = []
    for _ in range(count):
        peak = np.unravel_index(np.argmax(work), work.shape)
        if work[peak] <= 0:
            raise InsufficientDataError(
                f"Found {len(centers)} of {count} beads in {volume.acquisition_id}"
            )
        low = [max(p - half, 0) for p in peak]
        high = [min(p + half + 1, n) for p, n in zip(peak, data.shape)]
        region = tuple(slice(a, b) for a, b in zip(low, high))
        block = weights[region]
        grid = np.meshgrid(*[np.arange(a, b) for a, b in zip(low, high)], indexing="ij")
        centers.append([float((g * block).sum() / block.sum()) for g in grid])
        suppressed = tuple(
            slice(max(p - 2 * box, 0), min(p + 2 * box + 1, n)) for p, n in zip(peak, data.shape)
        )
        work[suppressed] = 0.0
    return np.array(centers)
