import asyncio
import logging
from dataclasses import dataclass, field

from .backtest import backtest_volume
from .config import Config
from .detect import extract_plane
from .exceptions import AcquisitionMismatchError, CalibrationError, DetectionError, FormatError
from .metrics import feature_precision
from .solver import CalibrationProblem, solve
from .utils import capture, gather_dict, run_blocking

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class CalibrationRun:
    result: object
    problem: CalibrationProblem
    precision: object
    failures: dict = field(default_factory=dict)

    @property
    def observations(self):
        return self.problem.observations


class MembraneCalibration:
    """
    Calibrates T_U2Pr from membrane volumes, their tracked probe poses and
    the pre-calibrated T_Ph2M.

    Args:
        volumes: Volume objects, each with an acquisition id
        poses: mapping of acquisition id to T_Pr2Ph (RigidTransform or PoseRecord)
        t_ph2m: pre-calibration transform
        config: Config, defaults to settings
    """

    def __init__(self, volumes, poses, t_ph2m, config=None):
        self.volumes = list(volumes)
        self.poses = {key: getattr(pose, "transform", pose) for key, pose in poses.items()}
        self.t_ph2m = t_ph2m
        self.config = config or Config()
        self.observations = {}
        self.failures = {}

    @property
    def scale(self):
        if not self.volumes:
            raise AcquisitionMismatchError("No volumes given")
        scale = self.volumes[0].scale
        for volume in self.volumes[1:]:
            if volume.scale != scale:
                raise FormatError(f"Volume {volume.acquisition_id} has a different voxel scale")
        return scale

    @property
    def dims(self):
        if not self.volumes:
            raise AcquisitionMismatchError("No volumes given")
        dims = {tuple(volume.dims) for volume in self.volumes}
        if len(dims) > 1:
            raise FormatError(f"Volumes differ in dimensions: {sorted(dims)}")
        return dims.pop()

    def acquisitions(self):
        """(volume, pose) pairs matched by acquisition id."""
        if not self.volumes:
            raise AcquisitionMismatchError("No volumes given")
        pairs = []
        for volume in self.volumes:
            if volume.acquisition_id not in self.poses:
                raise AcquisitionMismatchError(f"No pose record for volume {volume.acquisition_id}")
            pairs.append((volume, self.poses[volume.acquisition_id]))
        unused = set(self.poses) - {volume.acquisition_id for volume in self.volumes}
        if unused:
            logger.warning(f"Pose records without volume: {', '.join(sorted(unused))}")
        return pairs

    def extract(self, volume):
        context = volume.sos_context(self.config["sos.v_tissue"])
        return extract_plane(
            volume,
            context,
            self.config.manual_lines(volume.acquisition_id),
            **self.config.detect_options(),
        )

    async def extract_features(self):
        pairs = self.acquisitions()
        tasks = {
            volume.acquisition_id: capture(run_blocking(self.extract, volume), CalibrationError)
            for volume, _ in pairs
        }
        results = await gather_dict(tasks)

        observations, failures = [], {}
        for volume, pose in pairs:
            acquisition_id = volume.acquisition_id
            result = results[acquisition_id]
            if isinstance(result, CalibrationError):
                logger.warning(f"Feature extraction failed for {acquisition_id}: {result}")
                failures[acquisition_id] = result
                continue
            observations.append(result.with_pose(pose, acquisition_id))

        self.observations = {o.acquisition_id: o for o in observations}
        self.failures = failures
        if not observations:
            raise DetectionError(f"Feature extraction failed on all {len(pairs)} volumes")
        if failures:
            logger.warning(
                f"Calibrating without {len(failures)} volume(s): {', '.join(sorted(failures))}"
            )
        logger.info(f"Extracted features from {len(observations)} of {len(pairs)} volumes")
        return observations

    def solve(self, observations):
        problem = CalibrationProblem(observations, self.t_ph2m, self.scale)
        result = solve(problem, **self.config.solver_options())
        return CalibrationRun(
            result, problem, feature_precision(observations, result, problem), dict(self.failures)
        )

    async def calibrate(self):
        observations = await self.extract_features()
        return await run_blocking(self.solve, observations)

    def run(self):
        return asyncio.run(self.calibrate())

    async def backtest(self, t_u2pr, out_dir=None):
        """Back-test every volume; detection is rerun where it has not been done yet."""
        pairs = self.acquisitions()
        if not self.observations and not self.failures:
            try:
                await self.extract_features()
            except DetectionError as e:
                logger.warning(f"{e}, drawing solved lines only")

        async def one(volume, pose):
            return await run_blocking(
                backtest_volume,
                volume,
                self.observations.get(volume.acquisition_id),
                pose,
                t_u2pr,
                self.t_ph2m,
                volume.sos_context(self.config["sos.v_tissue"]),
                self.config["backtest.max_distance_mm"],
                self.config["backtest.max_angle_deg"],
                out_dir,
            )

        results = await gather_dict(
            {volume.acquisition_id: one(volume, pose) for volume, pose in pairs}
        )
        return [delta for volume, _ in pairs for delta in results[volume.acquisition_id]]
