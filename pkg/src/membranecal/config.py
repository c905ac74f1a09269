"""
Flat ``key = value`` configuration layered over the defaults in settings.

Keys are dotted (``solver.restarts``, ``noise.line_jitter``). Manual line
overrides use ``manual_line.<acquisition id>.<xy|zy> = rho theta_deg``.
"""
import logging
import math

from . import settings
from .detect import Line2D
from .exceptions import ConfigError, FormatError
from .formats import format_value, parse_bool, parse_floats, parse_record
from .sim import NoiseModel, PhantomScene
from .sim.scene import pose_from_degrees
from .volume import SLICE_NAMES

logger = logging.getLogger(__name__)

AUTO = "auto"


def _integer(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text} is not an integer")
    return int(value)


def _floats(count):
    def parse(text):
        return tuple(parse_floats(text, count))

    return parse


def _integers(count):
    def parse(text):
        return tuple(_integer(v) for v in parse_floats(text, count))

    return parse


def _optional(parser):
    def parse(text):
        return None if text.strip().lower() == AUTO else parser(text)

    return parse


def _echo_value(value):
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, tuple):
        return " ".join(_echo_value(v) for v in value)
    return str(value)


def _choice(*choices):
    def parse(text):
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return text

    return parse


# key: (settings name, parser)
KEYS = {
    "sos.v_tissue": ("TISSUE_SOS", float),
    "plane_fit.iterations": ("TUKEY_ITERATIONS", _integer),
    "plane_fit.cutoff": ("TUKEY_CUTOFF", float),
    "detect.samples_per_line": ("SAMPLES_PER_LINE", _integer),
    "detect.min_line_support": ("MIN_LINE_SUPPORT", _integer),
    "detect.use_probe_mask": ("USE_PROBE_MASK", parse_bool),
    "detect.trace_half_width": ("TRACE_HALF_WIDTH", _integer),
    "detect.trace_max_degree": ("TRACE_MAX_DEGREE", _integer),
    "solver.restarts": ("RESTARTS", _integer),
    "solver.seed": ("SEED", _integer),
    "solver.ftol": ("LM_FTOL", float),
    "solver.xtol": ("LM_XTOL", float),
    "solver.gtol": ("LM_GTOL", float),
    "solver.max_iterations": ("LM_MAX_ITERATIONS", _integer),
    "scene.dims": ("SCENE_DIMS", _integers(3)),
    "scene.scale": ("SCENE_SCALE", float),
    "scene.probe_origin": ("SCENE_PROBE_ORIGIN", _optional(_floats(3))),
    "scene.probe_radius": ("SCENE_PROBE_RADIUS", float),
    "scene.temperature": ("SCENE_TEMPERATURE", float),
    "scene.u2pr_angles_deg": ("SCENE_U2PR_ANGLES_DEG", _floats(3)),
    "scene.u2pr_translation": ("SCENE_U2PR_TRANSLATION", _floats(3)),
    "scene.ph2m_angles_deg": ("SCENE_PH2M_ANGLES_DEG", _floats(3)),
    "scene.ph2m_translation": ("SCENE_PH2M_TRANSLATION", _floats(3)),
    "noise.pose_noise_rms": ("POSE_NOISE_RMS", float),
    "noise.marker_radius": ("MARKER_RADIUS", float),
    "noise.line_jitter": ("LINE_JITTER", float),
    "noise.speckle_sigma": ("SPECKLE_SIGMA", float),
    "noise.background_level": ("BACKGROUND_LEVEL", _integer),
    "noise.membrane_level": ("MEMBRANE_LEVEL", _integer),
    "noise.beam_width": ("BEAM_WIDTH", float),
    "noise.bead_jitter": ("BEAD_JITTER", float),
    "noise.bead_width": ("BEAD_WIDTH", float),
    "noise.bead_level": ("BEAD_LEVEL", _integer),
    "bead.barycenter_distance": ("BEAD_BARYCENTER_DISTANCE", float),
    "bead.volumes_per_side": ("BEAD_VOLUMES_PER_SIDE", _integer),
    "bead.pairing": ("BEAD_PAIRING", _choice("matched", "cross")),
    "backtest.max_distance_mm": ("BACKTEST_MAX_DISTANCE", float),
    "backtest.max_angle_deg": ("BACKTEST_MAX_ANGLE", float),
}

MANUAL_LINE_PREFIX = "manual_line."


class Config:
    """Effective configuration: settings defaults, then file values, then overrides."""

    def __init__(self, values=None, manual_lines=None, source=None):
        self.values = {key: getattr(settings, name) for key, (name, _) in KEYS.items()}
        self.values.update(values or {})
        self._manual_lines = manual_lines or {}
        self.source = source

    @classmethod
    def parse(cls, text, source="config"):
        try:
            record = parse_record(text, source)
        except FormatError as e:
            raise ConfigError(str(e))
        values, manual_lines = {}, {}
        for key, text_value in record.items():
            if key.startswith(MANUAL_LINE_PREFIX):
                acquisition_id, name, line = cls._parse_manual_line(key, text_value, source)
                manual_lines.setdefault(acquisition_id, {})[name] = line
                continue
            values[key] = cls._parse_value(key, text_value, source)
        logger.debug(
            f"Loaded {len(values)} settings and {len(manual_lines)} manual line sets from {source}"
        )
        return cls(values, manual_lines, source)

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls()
        with open(path) as f:
            return cls.parse(f.read(), str(path))

    @staticmethod
    def _parse_value(key, text, source):
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown key {key}")
        _, parser = KEYS[key]
        try:
            return parser(text)
        except (ValueError, FormatError) as e:
            raise ConfigError(f"{source}: bad value for {key}: {e}")

    @staticmethod
    def _parse_manual_line(key, text, source):
        acquisition_id, _, name = key[len(MANUAL_LINE_PREFIX):].rpartition(".")
        if not acquisition_id or name not in SLICE_NAMES:
            raise ConfigError(f"{source}: manual line key must be manual_line.<id>.<xy|zy>, got {key}")
        try:
            rho, theta = parse_floats(text, 2, key)
        except FormatError as e:
            raise ConfigError(f"{source}: {e}")
        return acquisition_id, name, Line2D(rho, math.radians(theta))

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, value):
        """Override a key, typically from a command line flag; None is ignored."""
        if value is None:
            return
        if key not in KEYS:
            raise ConfigError(f"Unknown key {key}")
        self.values[key] = value

    def manual_lines(self, acquisition_id=None):
        if acquisition_id is None:
            return dict(self._manual_lines)
        return dict(self._manual_lines.get(acquisition_id, {}))

    def echo(self):
        """Effective (key, text) pairs, manual lines last."""
        items = []
        for key in sorted(self.values):
            value = self.values[key]
            items.append((key, _echo_value(value)))
        for acquisition_id in sorted(self._manual_lines):
            for name, line in sorted(self._manual_lines[acquisition_id].items()):
                items.append((
                    f"{MANUAL_LINE_PREFIX}{acquisition_id}.{name}",
                    format_value([line.rho, math.degrees(line.theta)]),
                ))
        return items

    def solver_options(self):
        return {
            "seed": self["solver.seed"],
            "restarts": self["solver.restarts"],
            "ftol": self["solver.ftol"],
            "xtol": self["solver.xtol"],
            "gtol": self["solver.gtol"],
            "max_iterations": self["solver.max_iterations"],
        }

    def detect_options(self):
        return {
            "samples": self["detect.samples_per_line"],
            "use_mask": self["detect.use_probe_mask"],
            "min_support": self["detect.min_line_support"],
        }

    def scene(self):
        return PhantomScene.default(
            dims=self["scene.dims"],
            scale=self["scene.scale"],
            probe_origin=self["scene.probe_origin"],
            probe_radius=self["scene.probe_radius"],
            temperature=self["scene.temperature"],
            v_tissue=self["sos.v_tissue"],
            u2pr=pose_from_degrees(self["scene.u2pr_angles_deg"], self["scene.u2pr_translation"]),
            ph2m=pose_from_degrees(self["scene.ph2m_angles_deg"], self["scene.ph2m_translation"]),
        )

    def noise(self):
        try:
            return NoiseModel(**{
                key.split(".", 1)[1]: value
                for key, value in self.values.items()
                if key.startswith("noise.")
            })
        except ValueError as e:
            raise ConfigError(str(e))
