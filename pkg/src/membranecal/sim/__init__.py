from .beads import BeadAcquisition, BeadPhantom, locate_beads, render_bead_volumes
from .protocol import protocol_poses
from .render import SimulatedAcquisition, acquire, observe, render_volume, simulate_acquisitions
from .scene import NoiseModel, PhantomScene

__all__ = [
    "BeadAcquisition",
    "BeadPhantom",
    "NoiseModel",
    "PhantomScene",
    "SimulatedAcquisition",
    "acquire",
    "locate_beads",
    "observe",
    "protocol_poses",
    "render_bead_volumes",
    "render_volume",
    "simulate_acquisitions",
]
