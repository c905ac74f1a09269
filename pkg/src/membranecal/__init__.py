__version__ = "0.1.0"

from .calibration import CalibrationRun, MembraneCalibration
from .exceptions import CalibrationError
