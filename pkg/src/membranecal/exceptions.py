class CalibrationError(Exception):
    """Base class for everything membranecal raises"""


class DegenerateGeometryError(CalibrationError):
    """Input points, lines or triangles do not span what the operation needs"""


class SosRangeError(CalibrationError, ValueError):
    """Temperature or sound speed outside the supported range"""


class ProbeGeometryError(CalibrationError):
    """Point lies inside the scan head surface radius"""


class UndefinedRayError(ProbeGeometryError):
    """Point coincides with the probe origin, no ray to correct along"""


class NoLineFoundError(CalibrationError):
    """No pixel above the Hough threshold"""


class DetectionError(CalibrationError):
    """Membrane line could not be extracted from one of the slices"""

    def __init__(self, message, slice_name=None):
        super().__init__(message)
        self.slice_name = slice_name


class SolverError(CalibrationError):
    """No restart converged, best-effort result is attached"""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InsufficientDataError(CalibrationError):
    """Too few observations, calibrations or beads"""


class EmptySceneError(CalibrationError):
    """Simulated membrane does not cross the volume"""


class BeadPlacementError(CalibrationError):
    """Simulated bead lies outside its volume"""


class FormatError(CalibrationError):
    """Malformed input file"""


class ConfigError(FormatError):
    """Unknown config key or unparseable value"""


class AcquisitionMismatchError(FormatError):
    """Volumes and pose records do not pair up by acquisition id"""
