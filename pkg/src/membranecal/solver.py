"""
Estimation of T_U2Pr from membrane plane points.

Every sampled plane point p of an acquisition with tracked pose T_Pr2Ph must
land on z = 0 in membrane space. With A = T_Ph2M . T_Pr2Ph only the third
row of A enters the residual, so each point contributes the scalar

    eps = a_3 . (R_b (s * p) + t_b) + a_34

and the six Euler parameters of T_U2Pr are found with Levenberg-Marquardt
from a series of random starting poses.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import settings
from .exceptions import InsufficientDataError, SolverError
from .geometry import EulerPose, euler_matrix, euler_matrix_derivatives

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    observations: tuple
    t_ph2m: object
    scale: object
    a_rows: np.ndarray = field(init=False, repr=False)
    a_offsets: np.ndarray = field(init=False, repr=False)
    points_mm: np.ndarray = field(init=False, repr=False)
    observation_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        observations = tuple(self.observations)
        if not observations:
            raise InsufficientDataError("Calibration problem has no observations")
        a_rows, a_offsets, points, index = [], [], [], []
        s = self.scale.as_array()
        for i, observation in enumerate(observations):
            if observation.pose is None:
                raise InsufficientDataError(
                    f"Observation {observation.acquisition_id or i} has no tracker pose"
                )
            chain = self.t_ph2m @ observation.pose
            count = len(observation.sample_points)
            a_rows.append(np.tile(chain.rotation[2], (count, 1)))
            a_offsets.append(np.full(count, chain.translation[2]))
            points.append(observation.sample_points * s)
            index.append(np.full(count, i))
        object.__setattr__(self, "observations", observations)
        object.__setattr__(self, "a_rows", np.concatenate(a_rows))
        object.__setattr__(self, "a_offsets", np.concatenate(a_offsets))
        object.__setattr__(self, "points_mm", np.concatenate(points))
        object.__setattr__(self, "observation_index", np.concatenate(index))

    def __len__(self):
        return len(self.observations)

    @property
    def point_count(self):
        return len(self.points_mm)

    def validate(self):
        if len(self.observations) < 2:
            raise InsufficientDataError(
                f"At least two acquisitions are needed, got {len(self.observations)}"
            )
        if self.point_count < 6:
            raise InsufficientDataError(f"At least 6 plane points are needed, got {self.point_count}")


@dataclass(frozen=True)
class ObservabilityReport:
    singular_values: tuple
    condition_flag: bool

    @property
    def condition_ratio(self):
        largest = self.singular_values[0]
        return self.singular_values[-1] / largest if largest > 0 else 0.0

    def rank(self, tolerance=None):
        if tolerance is None:
            tolerance = settings.OBSERVABILITY_THRESHOLD
        largest = self.singular_values[0]
        return sum(1 for value in self.singular_values if value > tolerance * largest)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    t_u2pr: object
    pose: EulerPose
    rms_residual: float
    max_residual: float
    per_observation_residuals: tuple
    diagnostics: ObservabilityReport
    cost: float
    restart: int
    converged_restarts: int
    options: dict = field(default_factory=dict)

    @property
    def per_observation_rms(self):
        return [float(np.sqrt(np.mean(r ** 2))) for r in self.per_observation_residuals]


def residual(pose, a, scale, point):
    """Signed membrane distance (mm) of one voxel point under calibration pose."""
    q = np.asarray(point, dtype=float) * scale.as_array()
    u = euler_matrix(pose.angles) @ q + pose.translation
    return float(a.rotation[2] @ u + a.translation[2])


def residuals(params, problem):
    rotation = euler_matrix(params[:3])
    u = problem.points_mm @ rotation.T + params[3:6]
    return np.einsum("ij,ij->i", problem.a_rows, u) + problem.a_offsets


def jacobian(params, problem):
    derivatives = euler_matrix_derivatives(params[:3])
    columns = [
        np.einsum("ij,ij->i", problem.a_rows, problem.points_mm @ derivative.T)
        for derivative in derivatives
    ]
    return np.column_stack(columns + [problem.a_rows])


def numeric_jacobian(params, problem, step=None):
    """Central finite differences of the residual vector."""
    if step is None:
        step = settings.OBSERVABILITY_STEP
    params = np.asarray(params, dtype=float)
    columns = []
    for k in range(6):
        delta = np.zeros(6)
        delta[k] = step
        columns.append((residuals(params + delta, problem) - residuals(params - delta, problem)) / (2 * step))
    return np.column_stack(columns)


def observability(problem, at, step=None, threshold=None):
    """Singular values of the residual Jacobian at the given calibration pose."""
    if threshold is None:
        threshold = settings.OBSERVABILITY_THRESHOLD
    values = np.linalg.svd(numeric_jacobian(at.as_vector(), problem, step), compute_uv=False)
    values = np.sort(values)[::-1]
    if len(values) < 6:
        values = np.concatenate([values, np.zeros(6 - len(values))])
    largest = values[0]
    flag = bool(largest <= 0 or values[-1] / largest < threshold)
    if flag:
        logger.warning(
            f"Calibration poorly constrained, singular value ratio {values[-1] / largest if largest else 0:.3g}"
        )
    return ObservabilityReport(tuple(float(v) for v in values), flag)


def restart_poses(rng, restarts, translation_range=None, angle_range=None):
    if translation_range is None:
        translation_range = settings.RESTART_TRANSLATION_RANGE
    if angle_range is None:
        angle_range = settings.RESTART_ANGLE_RANGE
    angles = rng.uniform(-angle_range, angle_range, size=(restarts, 3))
    translations = rng.uniform(-translation_range, translation_range, size=(restarts, 3))
    return np.hstack([angles, translations])


def _result(problem, params, cost, restart, converged, options):
    pose = EulerPose.from_transform(EulerPose.from_vector(params).to_transform())
    values = residuals(pose.as_vector(), problem)
    per_observation = tuple(
        values[problem.observation_index == i] for i in range(len(problem.observations))
    )
    return CalibrationResult(
        t_u2pr=pose.to_transform(),
        pose=pose,
        rms_residual=float(np.sqrt(np.mean(values ** 2))),
        max_residual=float(np.max(np.abs(values))),
        per_observation_residuals=per_observation,
        diagnostics=observability(problem, pose),
        cost=float(cost),
        restart=restart,
        converged_restarts=converged,
        options=options,
    )


def solve(problem, seed=None, restarts=None, ftol=None, xtol=None, gtol=None, max_iterations=None):
    """
    Levenberg-Marquardt over the Euler pose of T_U2Pr from ``restarts``
    random starts; the lowest sum of squared residuals wins, earlier
    restarts winning ties.
    """
    options = {
        "seed": settings.SEED if seed is None else seed,
        "restarts": settings.RESTARTS if restarts is None else restarts,
        "ftol": settings.LM_FTOL if ftol is None else ftol,
        "xtol": settings.LM_XTOL if xtol is None else xtol,
        "gtol": settings.LM_GTOL if gtol is None else gtol,
        "max_iterations": settings.LM_MAX_ITERATIONS if max_iterations is None else max_iterations,
    }
    problem.validate()
    rng = np.random.default_rng(options["seed"])
    starts = restart_poses(rng, options["restarts"])

    best = None
    best_converged = None
    converged = 0
    for index, start in enumerate(starts):
        try:
            fit = least_squares(
                residuals,
                start,
                jac=jacobian,
                method="lm",
                ftol=options["ftol"],
                xtol=options["xtol"],
                gtol=options["gtol"],
                max_nfev=options["max_iterations"],
                args=(problem,),
            )
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"Restart {index} failed: {e}")
            continue
        sum_squares = 2.0 * fit.cost
        logger.debug(f"Restart {index}: status {fit.status}, sum of squares {sum_squares:.6g}")
        candidate = (sum_squares, index, fit.x)
        if best is None or sum_squares < best[0]:
            best = candidate
        if fit.status > 0:
            converged += 1
            if best_converged is None or sum_squares < best_converged[0]:
                best_converged = candidate

    if best is None:
        raise SolverError("Every restart raised an error")
    if best_converged is None:
        result = _result(problem, best[2], best[0], best[1], 0, options)
        raise SolverError(
            f"None of {options['restarts']} restarts converged, best sum of squares {best[0]:.6g}",
            result,
        )

    sum_squares, index, params = best_converged
    result = _result(problem, params, sum_squares, index, converged, options)
    logger.info(
        f"Calibrated from {len(problem)} acquisitions: rms {result.rms_residual:.4f} mm, "
        f"max {result.max_residual:.4f} mm, restart {index}, {converged}/{options['restarts']} converged"
    )
    return result
