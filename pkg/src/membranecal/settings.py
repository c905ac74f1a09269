import math

FORMAT_VERSION = 1

NUMERIC_DECIMALS = 6

# Speed of sound
TISSUE_SOS = 1540.0
SOS_MIN = 1300.0
SOS_MAX = 1700.0
WATER_TEMPERATURE_MIN = 0.0
WATER_TEMPERATURE_MAX = 74.0

# Membrane pre-calibration
TUKEY_ITERATIONS = 10
TUKEY_CUTOFF = 3.0
MAD_NORMALIZATION = 1.4826

# Feature extraction
HOUGH_RHO_STEP = 1.0
HOUGH_THETA_STEP = math.radians(0.5)
SAMPLES_PER_LINE = 10
MIN_LINE_SUPPORT = 20
USE_PROBE_MASK = True
# Sub-pixel membrane trace around the Hough line
TRACE_HALF_WIDTH = 8
TRACE_MAX_DEGREE = 4
TRACE_POINTS_PER_DEGREE = 20
TRACE_PASSES = 2

# Solver
RESTARTS = 20
SEED = 0
RESTART_TRANSLATION_RANGE = 200.0
RESTART_ANGLE_RANGE = math.pi
LM_FTOL = 1e-12
LM_XTOL = 1e-12
LM_GTOL = 1e-12
LM_MAX_ITERATIONS = 200
OBSERVABILITY_STEP = 1e-5
OBSERVABILITY_THRESHOLD = 1e-6

# Simulator scene
SCENE_DIMS = (199, 199, 199)
SCENE_SCALE = 0.477
# None puts O_US centered above the top face, a fifth of the depth away
SCENE_PROBE_ORIGIN = None
SCENE_PROBE_RADIUS = 8.0
SCENE_TEMPERATURE = 23.0
SCENE_U2PR_ANGLES_DEG = (12.0, -18.0, 165.0)
SCENE_U2PR_TRANSLATION = (-42.0, 31.0, 118.0)
SCENE_PH2M_ANGLES_DEG = (-30.0, 45.0, 5.0)
SCENE_PH2M_TRANSLATION = (15.0, -80.0, 40.0)

# Simulator noise
POSE_NOISE_RMS = 0.25
MARKER_RADIUS = 100.0
LINE_JITTER = 0.0
SPECKLE_SIGMA = 0.0
BACKGROUND_LEVEL = 20
MEMBRANE_LEVEL = 230
BEAM_WIDTH = 3.0
BEAD_JITTER = 0.0
BEAD_WIDTH = 2.5
BEAD_LEVEL = 250

# Bead phantom
BEAD_BARYCENTER_DISTANCE = 60.0
BEAD_VOLUMES_PER_SIDE = 10
BEAD_PAIRING = "matched"

# Back-test
BACKTEST_MAX_DISTANCE = 1.0
BACKTEST_MAX_ANGLE = 1.0
BACKTEST_DETECTED_LEVEL = 128
BACKTEST_SOLVED_LEVEL = 255
