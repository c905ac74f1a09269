"""
Membrane feature extraction.

Instead of a 3-D Hough transform the membrane plane is recovered from its
intersection lines with the xy and zy slices through the probe origin. Each
slice gets an intensity-accumulating 2-D Hough transform, refined by a
weighted centroid trace across the membrane; equidistant points along both
traces are corrected for sound speed and become the plane points the solver
works with.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import settings
from .exceptions import DegenerateGeometryError, DetectionError, NoLineFoundError
from .sos import correct_point
from .volume import SLICE_NAMES

logger = logging.getLogger(__name__)

HOUGH_CHUNK = 4096


@dataclass(frozen=True)
class Line2D:
    """Line x cos(theta) + y sin(theta) = rho in slice (column, row) pixels."""

    rho: float
    theta: float

    def __post_init__(self):
        rho, theta = float(self.rho), float(self.theta) % (2 * math.pi)
        if theta >= math.pi:
            theta -= math.pi
            rho = -rho
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def through(cls, first, second):
        first = np.asarray(first, dtype=float)
        direction = np.asarray(second, dtype=float) - first
        length = np.hypot(*direction)
        if length == 0:
            raise DegenerateGeometryError("Line end points coincide")
        normal = np.array([direction[1], -direction[0]]) / length
        return cls(float(normal @ first), math.atan2(normal[1], normal[0]))

    @classmethod
    def fit(cls, columns, rows, weights=None):
        """Total least squares line through (column, row) points."""
        points = np.column_stack([columns, rows]).astype(float)
        if len(points) < 2:
            raise DegenerateGeometryError("Need at least 2 points to fit a line")
        if weights is None:
            weights = np.ones(len(points))
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise DegenerateGeometryError("Line weights must be non-negative with a positive sum")
        centroid = np.average(points, axis=0, weights=weights)
        _, singular_values, vt = np.linalg.svd(np.sqrt(weights)[:, None] * (points - centroid))
        if singular_values[0] <= 0:
            raise DegenerateGeometryError("Line points coincide")
        normal = vt[-1]
        return cls(float(normal @ centroid), math.atan2(normal[1], normal[0]))

    @classmethod
    def from_coefficients(cls, a, b, c):
        """Line a * column + b * row = c, or None when a and b both vanish."""
        length = math.hypot(a, b)
        if length < 1e-12:
            return None
        return cls(c / length, math.atan2(b, a))

    @property
    def normal(self):
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def direction(self):
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def distance(self, columns, rows):
        return np.asarray(columns) * math.cos(self.theta) + np.asarray(rows) * math.sin(self.theta) - self.rho

    def clip(self, shape):
        """
        End points (column, row) of the segment inside the pixel-center box of
        an image with the given (rows, columns) shape, or None when the line
        misses it.
        """
        height, width = shape
        base = self.rho * self.normal
        direction = self.direction
        low, high = -np.inf, np.inf
        for axis, upper in ((0, width - 1), (1, height - 1)):
            if abs(direction[axis]) < 1e-12:
                if not 0 <= base[axis] <= upper:
                    return None
                continue
            t0 = (0 - base[axis]) / direction[axis]
            t1 = (upper - base[axis]) / direction[axis]
            low = max(low, min(t0, t1))
            high = min(high, max(t0, t1))
        if high - low < 1.0:
            return None
        return base + low * direction, base + high * direction


def histogram_mode(pixels):
    values = np.asarray(pixels).astype(np.int64).ravel()
    if values.size == 0:
        raise ValueError("Empty image")
    return int(np.argmax(np.bincount(values - values.min()))) + int(values.min())


def hough_threshold(image):
    """
    Histogram mode plus a third of the dynamic range, so the water
    background that fills most of the slice is ignored.
    """
    pixels = np.asarray(image.pixels)
    mode = histogram_mode(pixels)
    return mode + (float(pixels.max()) - float(pixels.min())) / 3.0


def hough_accumulate(image, threshold, mask=None, rho_step=None, theta_step=None):
    """
    Accumulate the intensity of every pixel strictly above threshold into a
    (rho, theta) grid. Returns the accumulator, the rho offset in bins and
    the bin sizes.
    """
    if rho_step is None:
        rho_step = settings.HOUGH_RHO_STEP
    if theta_step is None:
        theta_step = settings.HOUGH_THETA_STEP

    pixels = np.asarray(image.pixels, dtype=float)
    selected = pixels > threshold
    if mask is not None:
        selected &= ~mask
    rows, columns = np.nonzero(selected)
    if len(rows) == 0:
        raise NoLineFoundError(f"No pixel above threshold {threshold:.1f} in slice {image.name}")

    n_theta = int(round(math.pi / theta_step))
    thetas = np.arange(n_theta) * theta_step
    cosines, sines = np.cos(thetas), np.sin(thetas)
    rho_offset = int(math.ceil(math.hypot(*pixels.shape) / rho_step)) + 1
    n_rho = 2 * rho_offset + 1
    accumulator = np.zeros(n_rho * n_theta)
    theta_index = np.arange(n_theta)

    for start in range(0, len(rows), HOUGH_CHUNK):
        chunk = slice(start, start + HOUGH_CHUNK)
        rho = columns[chunk, None] * cosines + rows[chunk, None] * sines
        rho_index = np.rint(rho / rho_step).astype(np.int64) + rho_offset
        flat = (rho_index * n_theta + theta_index).ravel()
        weights = np.repeat(pixels[rows[chunk], columns[chunk]], n_theta)
        accumulator += np.bincount(flat, weights=weights, minlength=n_rho * n_theta)

    return accumulator.reshape(n_rho, n_theta), rho_offset, rho_step, theta_step


def _refine_peak(accumulator, rho_index, theta_index):
    """Centroid over the 3x3 cell neighborhood; theta wraps with rho mirrored."""
    n_rho, n_theta = accumulator.shape
    total = d_rho = d_theta = 0.0
    for dr in (-1, 0, 1):
        for dt in (-1, 0, 1):
            r, t = rho_index + dr, theta_index + dt
            if t < 0 or t >= n_theta:
                t %= n_theta
                r = n_rho - 1 - r
            if not 0 <= r < n_rho:
                continue
            value = accumulator[r, t]
            total += value
            d_rho += dr * value
            d_theta += dt * value
    return d_rho / total, d_theta / total


def plateau_peak(accumulator):
    """
    (rho, theta) cell of the accumulator maximum. Short lines give a
    plateau of equal peaks over neighboring angles; the first peak's run
    along theta resolves to its middle cell.
    """
    level = accumulator.max() * (1.0 - 1e-12)
    rho_index, theta_index = np.argwhere(accumulator >= level)[0]
    on_plateau = accumulator[rho_index] >= level
    low = high = theta_index
    while low > 0 and on_plateau[low - 1]:
        low -= 1
    while high < len(on_plateau) - 1 and on_plateau[high + 1]:
        high += 1
    return int(rho_index), int((low + high) // 2)


def hough_lines(image, threshold, mask=None, rho_step=None, theta_step=None):
    """Strongest line in the slice, refined to sub-bin accuracy."""
    accumulator, rho_offset, rho_step, theta_step = hough_accumulate(
        image, threshold, mask, rho_step, theta_step
    )
    rho_index, theta_index = plateau_peak(accumulator)
    d_rho, d_theta = _refine_peak(accumulator, rho_index, theta_index)
    line = Line2D(
        (rho_index - rho_offset + d_rho) * rho_step,
        (theta_index + d_theta) * theta_step,
    )
    logger.debug(
        f"Slice {image.name}: line rho={line.rho:.3f} theta={math.degrees(line.theta):.3f} "
        f"peak={accumulator[rho_index, theta_index]:.0f}"
    )
    return line


def line_support(image, line, threshold, mask=None, width=1.0):
    """Number of above-threshold pixels within width of the line."""
    pixels = np.asarray(image.pixels)
    rows, columns = np.indices(pixels.shape)
    near = np.abs(line.distance(columns, rows)) <= width
    above = pixels > threshold
    if mask is not None:
        above &= ~mask
    return int(np.count_nonzero(near & above))


def sample_line(image, line, count=None):
    """Equidistant (column, row) points between the line's extreme in-slice points."""
    if count is None:
        count = settings.SAMPLES_PER_LINE
    ends = line.clip(image.shape)
    if ends is None:
        raise DetectionError(f"Line misses slice {image.name}", image.name)
    fractions = np.linspace(0.0, 1.0, count)[:, None]
    points = ends[0] + fractions * (ends[1] - ends[0])
    return points[:, 0], points[:, 1]


@dataclass(frozen=True, eq=False)
class MembraneTrace:
    """
    Sub-pixel membrane curve in a slice: a straight line plus a polynomial
    offset along its normal, both in pixels, as a function of the position
    ``t`` along the line measured from ``origin``. ``extent`` is the range
    of ``t`` the traced centroids cover.
    """

    line: Line2D
    origin: np.ndarray
    deviation: np.polynomial.Polynomial
    extent: tuple

    @classmethod
    def straight(cls, line):
        origin = line.rho * line.normal
        return cls(line, origin, np.polynomial.Polynomial([0.0]), (-np.inf, np.inf))

    def position(self, columns, rows):
        """``t`` of the foot of each point on the line."""
        return (np.asarray(columns) - self.origin[0]) * self.line.direction[0] + (
            np.asarray(rows) - self.origin[1]
        ) * self.line.direction[1]

    def point(self, t):
        t = np.asarray(t, dtype=float)
        points = (
            self.origin
            + t[:, None] * self.line.direction
            + self.deviation(t)[:, None] * self.line.normal
        )
        return points[:, 0], points[:, 1]

    def sample(self, image, count=None):
        if count is None:
            count = settings.SAMPLES_PER_LINE
        ends = self.line.clip(image.shape)
        if ends is None:
            raise DetectionError(f"Line misses slice {image.name}", image.name)
        low, high = sorted(self.position(*np.transpose(ends)))
        low, high = max(low, self.extent[0]), min(high, self.extent[1])
        if high - low < 1.0:
            raise DetectionError(f"Traced membrane too short in slice {image.name}", image.name)
        columns, rows = self.point(np.linspace(low, high, count))
        height, width = image.shape
        return np.clip(columns, 0, width - 1), np.clip(rows, 0, height - 1)


def trace_centroids(weights, line, offset=None, half_width=None):
    """
    Intensity-weighted centroids across a line, one per column (mostly
    horizontal lines) or per row. Each centroid is taken over a window of
    ``2 * half_width + 1`` pixels centered on the line shifted by
    ``offset(along)`` pixels; windows reaching outside the slice are
    skipped. Returns columns, rows and the window mass.
    """
    if half_width is None:
        half_width = settings.TRACE_HALF_WIDTH
    cosine, sine = line.normal
    horizontal = abs(sine) >= abs(cosine)
    grid = weights if horizontal else weights.T
    n_cross, n_along = grid.shape
    along_weight, cross_weight = (cosine, sine) if horizontal else (sine, cosine)

    along = np.arange(n_along)
    centers = (line.rho - along * along_weight) / cross_weight
    if offset is not None:
        centers = centers + offset(along)
    start = np.rint(centers).astype(np.int64) - half_width
    inside = (start >= 0) & (start + 2 * half_width < n_cross)
    along, start = along[inside], start[inside]

    index = start[:, None] + np.arange(2 * half_width + 1)
    window = grid[index, along[:, None]]
    mass = window.sum(axis=1)
    lit = mass > 0
    cross = (window * index).sum(axis=1)[lit] / mass[lit]
    along = along[lit].astype(float)
    columns, rows = (along, cross) if horizontal else (cross, along)
    return columns, rows, mass[lit]


def _window_offset(trace):
    cosine, sine = trace.line.normal
    horizontal = abs(sine) >= abs(cosine)

    def offset(along):
        if horizontal:
            columns, rows = along, (trace.line.rho - along * cosine) / sine
        else:
            columns, rows = (trace.line.rho - along * sine) / cosine, along
        return trace.deviation(trace.position(columns, rows)) / (sine if horizontal else cosine)

    return offset


def _fit_trace(columns, rows, mass, max_degree, points_per_degree):
    line = Line2D.fit(columns, rows, mass)
    origin = np.average(np.column_stack([columns, rows]), axis=0, weights=mass)
    trace = MembraneTrace(line, origin, np.polynomial.Polynomial([0.0]), (-np.inf, np.inf))
    t = trace.position(columns, rows)
    degree = min(max_degree, len(t) // points_per_degree)
    if degree > 0:
        deviation = np.polynomial.Polynomial.fit(t, line.distance(columns, rows), degree, w=np.sqrt(mass))
    else:
        deviation = trace.deviation
    return MembraneTrace(line, origin, deviation, (float(t.min()), float(t.max())))


def refine_line(image, line, mask=None, half_width=None, max_degree=None, passes=None):
    """
    Follow the membrane around a Hough line to sub-pixel accuracy. Weights
    are intensities above the histogram mode; each pass traces centroids
    around the previous curve and fits a weighted total least squares line
    and a polynomial offset from it. Falls back to the straight line when
    fewer than 3 centroids are found.
    """
    if max_degree is None:
        max_degree = settings.TRACE_MAX_DEGREE
    if passes is None:
        passes = settings.TRACE_PASSES
    pixels = np.asarray(image.pixels, dtype=float)
    weights = np.clip(pixels - histogram_mode(image.pixels), 0.0, None)
    if mask is not None:
        weights[mask] = 0.0

    trace = MembraneTrace.straight(line)
    for _ in range(passes):
        columns, rows, mass = trace_centroids(
            weights, trace.line, _window_offset(trace), half_width
        )
        if len(columns) < 3:
            logger.debug(f"Slice {image.name}: {len(columns)} centroids, keeping the previous line")
            return trace
        trace = _fit_trace(columns, rows, mass, max_degree, settings.TRACE_POINTS_PER_DEGREE)
    logger.debug(
        f"Slice {image.name}: traced rho={trace.line.rho:.3f} "
        f"theta={math.degrees(trace.line.theta):.3f} deviation degree {trace.deviation.degree()}"
    )
    return trace


@dataclass(frozen=True, eq=False)
class PlaneObservation:
    """
    Membrane evidence from one acquisition.

    ``sample_points`` are sound-speed corrected voxel coordinates, the first
    ``points_per_line[0]`` on the xy line and the rest on the zy line;
    ``raw_points`` are the same samples before correction.
    """

    line_xy: Line2D
    line_zy: Line2D
    sample_points: np.ndarray
    raw_points: np.ndarray
    scale: object
    points_per_line: tuple
    slice_positions: tuple = (0, 0)
    pose: object = None
    acquisition_id: str = None
    manual: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if min(self.points_per_line) < 3:
            raise DegenerateGeometryError("Need at least 3 sample points per line")
        for name in ("sample_points", "raw_points"):
            points = np.array(getattr(self, name), dtype=float).reshape(-1, 3)
            points.setflags(write=False)
            object.__setattr__(self, name, points)

    def with_pose(self, pose, acquisition_id=None):
        return replace(self, pose=pose, acquisition_id=acquisition_id or self.acquisition_id)

    def line(self, name):
        return {"xy": self.line_xy, "zy": self.line_zy}[name]

    def line_points(self, name, raw=False):
        points = self.raw_points if raw else self.sample_points
        split = self.points_per_line[0]
        return points[:split] if name == "xy" else points[split:]


def extract_plane(
    volume, context=None, manual_lines=None, samples=None, use_mask=None, min_support=None
):
    """
    Detect the membrane in the xy and zy slices through the probe origin.

    ``manual_lines`` maps slice names to Line2D replacing detection in that
    slice. The returned observation has no pose; the caller attaches it.
    """
    if context is None:
        context = volume.sos_context()
    if samples is None:
        samples = settings.SAMPLES_PER_LINE
    if use_mask is None:
        use_mask = settings.USE_PROBE_MASK
    if min_support is None:
        min_support = settings.MIN_LINE_SUPPORT
    manual_lines = manual_lines or {}

    lines = {}
    raw = []
    for name in SLICE_NAMES:
        image = volume.slice(name)
        if name in manual_lines:
            line = manual_lines[name]
            logger.info(f"{volume.acquisition_id}: using manual line in slice {name}")
            columns, rows = sample_line(image, line, samples)
        else:
            mask = image.probe_mask(volume.probe, volume.scale) if use_mask else None
            threshold = hough_threshold(image)
            try:
                line = hough_lines(image, threshold, mask)
            except NoLineFoundError as e:
                raise DetectionError(str(e), name) from e
            support = line_support(image, line, threshold, mask)
            if support < min_support:
                raise DetectionError(
                    f"Line in slice {name} supported by only {support} pixels", name
                )
            trace = refine_line(image, line, mask)
            line = trace.line
            columns, rows = trace.sample(image, samples)
        lines[name] = line
        raw.append(image.to_volume(columns, rows))

    raw_points = np.concatenate(raw)
    corrected = correct_point(raw_points, volume.scale, volume.probe, context)
    return PlaneObservation(
        lines["xy"],
        lines["zy"],
        corrected,
        raw_points,
        volume.scale,
        (samples, samples),
        volume.slice_position(),
        acquisition_id=volume.acquisition_id,
        manual=frozenset(manual_lines),
    )


def line_directions(observation):
    s = observation.scale.as_array()
    directions = []
    for name in SLICE_NAMES:
        points = observation.line_points(name)
        directions.append((points[-1] - points[0]) * s)
    return directions


def plane_normal_from_lines(observation):
    """Unit normal of the membrane in metric US space, from the two lines."""
    first, second = line_directions(observation)
    normal = np.cross(first, second)
    length = np.linalg.norm(normal)
    if length <= 1e-9 * np.linalg.norm(first) * np.linalg.norm(second):
        raise DegenerateGeometryError("Extracted lines are parallel")
    return normal / length


def plane_slice_line(plane, image, scale):
    """
    Intersection of a plane in metric voxel space with a slice, as a line in
    slice pixels; None when the plane is parallel to the slice.
    """
    s = scale.as_array()
    origin = image.to_volume(0.0, 0.0) * s
    along_columns = image.to_volume(1.0, 0.0) * s - origin
    along_rows = image.to_volume(0.0, 1.0) * s - origin
    return Line2D.from_coefficients(
        float(plane.normal @ along_columns),
        float(plane.normal @ along_rows),
        float(plane.offset - plane.normal @ origin),
    )
