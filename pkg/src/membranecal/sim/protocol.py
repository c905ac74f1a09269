"""
Twelve-step style acquisition protocol.

Each step places the US volume relative to the membrane: the depth at which
the membrane crosses the central ray (as a fraction of the volume depth),
probe tilts about the volume x and z axes, a rotation about the membrane
normal and an in-plane offset. Steps 1-3 move the membrane through the
depth range, 4-5 translate within the membrane plane, 6-8 rotate about each
probe axis and 9-12 combine tilts.
"""
import logging
import math

import numpy as np

from ..geometry import RigidTransform, euler_matrix

logger = logging.getLogger(__name__)

# depth fraction, tilt about x (deg), tilt about z (deg), rotation about normal (deg), in-plane x, y (mm)
PROTOCOL_STEPS = (
    (0.50, 0.0, 0.0, 0.0, 0.0, 0.0),
    (0.35, 0.0, 0.0, 0.0, 0.0, 0.0),
    (0.65, 0.0, 0.0, 0.0, 0.0, 0.0),
    (0.50, 0.0, 0.0, 0.0, 25.0, 0.0),
    (0.50, 0.0, 0.0, 0.0, 0.0, 25.0),
    (0.50, 30.0, 0.0, 0.0, 0.0, 0.0),
    (0.50, 0.0, -30.0, 0.0, 0.0, 0.0),
    (0.50, 0.0, 0.0, 35.0, 0.0, 0.0),
    (0.45, 20.0, 20.0, 15.0, 0.0, 0.0),
    (0.55, -25.0, 15.0, -20.0, 0.0, 0.0),
    (0.50, 15.0, -25.0, 30.0, 0.0, 0.0),
    (0.40, -20.0, -20.0, -10.0, 0.0, 0.0),
)

# US axes in membrane space with the probe looking straight down: depth (y) points to -z.
LOOKING_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

ANGLE_PERTURBATION = 2.0
DEPTH_PERTURBATION = 2.0
OFFSET_PERTURBATION = 3.0


def _rotation_x(angle):
    return euler_matrix((0.0, 0.0, angle))


def _rotation_z(angle):
    return euler_matrix((angle, 0.0, 0.0))


def step_u2m(scene, depth_fraction, tilt_x, tilt_z, spin, offset_x, offset_y, depth_shift=0.0):
    """US-to-membrane transform for one protocol step, angles in degrees."""
    origin = scene.probe.origin_mm(scene.scale)
    depth = depth_fraction * scene.extent_mm[1] - origin[1] + depth_shift
    rotation = (
        _rotation_z(math.radians(spin))
        @ LOOKING_DOWN
        @ _rotation_x(math.radians(tilt_x))
        @ _rotation_z(math.radians(tilt_z))
    )
    translation = np.array([offset_x, offset_y, depth]) - rotation @ origin
    return RigidTransform(rotation, translation)


def protocol_poses(scene, seed, degenerate=False):
    """
    Twelve tracker poses T_Pr2Ph following the protocol table, perturbed by
    a few degrees and millimeters drawn from ``seed``. With ``degenerate``
    every pose repeats the first, unperturbed step.
    """
    if degenerate:
        pose = scene.pose_for_u2m(step_u2m(scene, *PROTOCOL_STEPS[0]))
        return [pose] * len(PROTOCOL_STEPS)

    rng = np.random.default_rng(seed)
    poses = []
    for index, (fraction, tilt_x, tilt_z, spin, offset_x, offset_y) in enumerate(PROTOCOL_STEPS):
        angles = rng.uniform(-ANGLE_PERTURBATION, ANGLE_PERTURBATION, 3)
        offsets = rng.uniform(-OFFSET_PERTURBATION, OFFSET_PERTURBATION, 2)
        depth_shift = rng.uniform(-DEPTH_PERTURBATION, DEPTH_PERTURBATION)
        u2m = step_u2m(
            scene,
            fraction,
            tilt_x + angles[0],
            tilt_z + angles[1],
            spin + angles[2],
            offset_x + offsets[0],
            offset_y + offsets[1],
            depth_shift,
        )
        logger.debug(f"Protocol step {index + 1}: T_U2M translation {np.round(u2m.translation, 1)}")
        poses.append(scene.pose_for_u2m(u2m))
    return poses
