"""
Membrane volume rendering and analytic observations.

Every acquisition draws from its own generator streams keyed on
(seed, acquisition index), so volumes can be produced in any order or in
parallel with identical results.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .. import settings
from ..detect import PlaneObservation, plane_slice_line, sample_line
from ..exceptions import DetectionError, EmptySceneError
from ..geometry import RigidTransform
from ..sos import correct_point, distort_point
from ..volume import SLICE_NAMES, Volume, empty_slice, slice_position
from .scene import FWHM_TO_SIGMA, NoiseModel

logger = logging.getLogger(__name__)

JITTER_STREAM = 0
SPECKLE_STREAM = 1
POSE_STREAM = 2


def acquisition_rng(seed, index, stream):
    return np.random.default_rng([int(seed), int(index), stream])


def acquisition_name(index):
    return f"a{index + 1:02d}"


def membrane_displacement(scene, noise, seed, index):
    """Per-acquisition membrane offset along its normal in mm."""
    draw = acquisition_rng(seed, index, JITTER_STREAM).standard_normal()
    return float(draw * noise.line_jitter * scene.scale.mean)


def record_pose(pose, noise, rng):
    """
    Tracker reading of a true probe pose: a small rigid error in the probe
    frame, translation per axis N(0, rms / sqrt(3)) and a rotation whose
    angle moves markers at marker_radius by the same rms.
    """
    translation = rng.standard_normal(3) * noise.pose_noise_rms / math.sqrt(3.0)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.standard_normal() * noise.pose_noise_rms / noise.marker_radius
    return pose @ RigidTransform.from_rotation_vector(axis * angle, translation)


def true_positions(scene, points):
    """
    Metric positions the scanner displays at the given voxel points, NaN
    inside the scan head radius.
    """
    points = np.asarray(points, dtype=float)
    distances = scene.probe.distance_mm(points, scene.scale)
    outside = distances >= scene.probe.surface_radius
    if scene.probe.surface_radius == 0:
        outside &= distances > 0
    positions = np.full(points.shape, np.nan)
    if np.any(outside):
        positions[outside] = (
            correct_point(points[outside], scene.scale, scene.probe, scene.context)
            * scene.scale.as_array()
        )
    return positions


def render_volume(scene, pose, noise=None, seed=0, index=0, acquisition_id=None):
    """
    8-bit volume of the membrane seen from the true probe pose.

    Each voxel is mapped to the position it really images, which undoes the
    sound speed distortion exactly, and lit by a Gaussian profile of its
    distance to the (jittered) membrane.
    """
    if noise is None:
        noise = NoiseModel()
    nx, ny, nz = scene.dims
    plane = scene.membrane_in_volume(pose, membrane_displacement(scene, noise, seed, index))
    sigma = noise.beam_width * FWHM_TO_SIGMA * scene.scale.mean
    half_voxel = 0.5 * scene.scale.mean
    speckle_rng = acquisition_rng(seed, index, SPECKLE_STREAM)
    background = float(noise.background_level)
    peak = float(noise.membrane_level) - background

    data = np.empty(scene.dims, dtype=np.uint8)
    columns, rows = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    hits = 0
    for z in range(nz):
        points = np.stack([columns, rows, np.full(columns.shape, z)], axis=-1).reshape(-1, 3)
        heights = np.abs(plane.signed_distance(true_positions(scene, points)))
        inside = np.isnan(heights)
        heights[inside] = np.inf
        hits += int(np.count_nonzero(heights < half_voxel))
        if sigma > 0:
            profile = np.exp(-0.5 * (heights / sigma) ** 2)
        else:
            profile = (heights < half_voxel).astype(float)
        intensity = background + peak * profile
        if noise.speckle_sigma > 0:
            intensity *= 1.0 + noise.speckle_sigma * speckle_rng.standard_normal(intensity.shape)
        data[:, :, z] = np.clip(np.rint(intensity), 0, 255).astype(np.uint8).reshape(nx, ny)

    if hits == 0:
        raise EmptySceneError(f"Membrane misses volume {acquisition_id or index}")
    logger.debug(f"Rendered {acquisition_id or index}: {hits} membrane voxels")
    return Volume(data, scene.scale, scene.probe, scene.context.temperature, acquisition_id)


def observe(scene, pose, noise=None, seed=0, index=0, samples=None, acquisition_id=None):
    """
    Analytic PlaneObservation for a true probe pose.

    Sample points lie exactly on the (jittered) membrane where it crosses
    the extraction slices; their raw counterparts are where the scanner
    would display them. The lines are the exact intersections in corrected
    slice pixels. Carries the noisy recorded pose.
    """
    if noise is None:
        noise = NoiseModel()
    if samples is None:
        samples = settings.SAMPLES_PER_LINE
    plane = scene.membrane_in_volume(pose, membrane_displacement(scene, noise, seed, index))

    lines, corrected = {}, []
    for name in SLICE_NAMES:
        image = empty_slice(name, scene.dims, scene.scale, scene.probe)
        line = plane_slice_line(plane, image, scene.scale)
        if line is None:
            raise DetectionError(f"Membrane parallel to slice {name}", name)
        columns, rows = sample_line(image, line, samples)
        lines[name] = line
        corrected.append(image.to_volume(columns, rows))

    corrected = np.concatenate(corrected)
    raw = distort_point(corrected, scene.scale, scene.probe, scene.context)
    recorded = record_pose(pose, noise, acquisition_rng(seed, index, POSE_STREAM))
    return PlaneObservation(
        lines["xy"],
        lines["zy"],
        corrected,
        raw,
        scene.scale,
        (samples, samples),
        slice_position(scene.probe, scene.dims),
        pose=recorded,
        acquisition_id=acquisition_id,
    )


@dataclass(frozen=True, eq=False)
class SimulatedAcquisition:
    acquisition_id: str
    true_pose: RigidTransform
    recorded_pose: RigidTransform
    volume: Volume = None
    observation: PlaneObservation = None


def acquire(scene, pose, noise=None, seed=0, index=0, render=True, samples=None):
    if noise is None:
        noise = NoiseModel()
    name = acquisition_name(index)
    recorded = record_pose(pose, noise, acquisition_rng(seed, index, POSE_STREAM))
    if render:
        volume = render_volume(scene, pose, noise, seed, index, name)
        return SimulatedAcquisition(name, pose, recorded, volume=volume)
    observation = observe(scene, pose, noise, seed, index, samples, name)
    return SimulatedAcquisition(name, pose, recorded, observation=observation)


def simulate_acquisitions(scene, poses, noise=None, seed=0, render=True, samples=None):
    return [
        acquire(scene, pose, noise, seed, index, render, samples)
        for index, pose in enumerate(poses)
    ]
