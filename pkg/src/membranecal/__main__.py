import argparse
import asyncio
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import settings
from .backtest import write_backtest_report
from .calibration import MembraneCalibration
from .config import Config
from .exceptions import (
    AcquisitionMismatchError,
    CalibrationError,
    DegenerateGeometryError,
    DetectionError,
    FormatError,
    InsufficientDataError,
    SolverError,
)
from .formats import (
    PoseRecord,
    format_report,
    read_beads,
    read_calibration,
    read_calibrations,
    read_points,
    read_pose_log,
    read_precalibration,
    read_volume,
    read_volumes,
    transform_items,
    write_beads,
    write_calibration,
    write_points,
    write_pose_log,
    write_precalibration,
    write_record,
    write_volume,
)
from .geometry import precalibrate_membrane
from .metrics import BeadSet, calibration_precision, reconstruction_accuracy
from .sim import (
    BeadPhantom,
    locate_beads,
    protocol_poses,
    render_bead_volumes,
    simulate_acquisitions,
)
from .sim.scene import pose_from_degrees
from .sos import correct_point

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FORMAT = 2
EXIT_IO = 3
EXIT_DETECTION = 4
EXIT_SOLVER = 5
EXIT_INSUFFICIENT_DATA = 6
EXIT_DEGENERATE = 7

# First match wins, so subclasses go before their bases.
EXIT_CODES = [
    (FormatError, EXIT_FORMAT),
    (DetectionError, EXIT_DETECTION),
    (SolverError, EXIT_SOLVER),
    (InsufficientDataError, EXIT_INSUFFICIENT_DATA),
    (DegenerateGeometryError, EXIT_DEGENERATE),
    (OSError, EXIT_IO),
]

MEMBRANE_GRID = np.linspace(-100.0, 100.0, 7)
MEMBRANE_POINTS_STREAM = 2000
BEAD_PLACEMENT_ANGLES_DEG = (10.0, -5.0, 0.0)
BEAD_PLACEMENT_TRANSLATION = (20.0, 10.0, -30.0)
POSE_INTERVAL = 10.0


def membrane_points(scene, noise, seed):
    """Digitized membrane support points in phantom space."""
    x, y = np.meshgrid(MEMBRANE_GRID, MEMBRANE_GRID)
    points = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    rng = np.random.default_rng([seed, MEMBRANE_POINTS_STREAM])
    points[:, 2] = rng.standard_normal(len(points)) * noise.pose_noise_rms / math.sqrt(3.0)
    return scene.t_ph2m.inverse().apply(points)


def simulate(args, config):
    out = Path(args.out)
    scene = config.scene()
    noise = config.noise()
    (out / "volumes").mkdir(parents=True, exist_ok=True)

    poses = protocol_poses(scene, args.seed)
    acquisitions = simulate_acquisitions(scene, poses, noise, args.seed)
    for acquisition in acquisitions:
        write_volume(out / "volumes" / f"{acquisition.acquisition_id}.vol", acquisition.volume)
    write_pose_log(
        out / "poses.csv",
        [
            PoseRecord(a.acquisition_id, a.recorded_pose, index * POSE_INTERVAL)
            for index, a in enumerate(acquisitions)
        ],
    )

    points = membrane_points(scene, noise, args.seed)
    write_points(out / "membrane_points.csv", points)
    precalibration = precalibrate_membrane(
        points, config["plane_fit.iterations"], config["plane_fit.cutoff"]
    )
    write_precalibration(out / "precalib.txt", precalibration, config.echo())

    bead = BeadPhantom.build(
        config["bead.barycenter_distance"],
        pose_from_degrees(BEAD_PLACEMENT_ANGLES_DEG, BEAD_PLACEMENT_TRANSLATION),
    )
    items = [("format_version", settings.FORMAT_VERSION), ("seed", args.seed)]
    items += transform_items("matrix", scene.true_t_u2pr)
    items += transform_items("ph2m", scene.t_ph2m)
    items += [("scale", list(scene.scale)), ("bead.d_b", bead.d_b)]
    items += [(f"config.{key}", value) for key, value in config.echo()]
    write_record(out / "ground_truth.txt", items, "membranecal simulated ground truth")
    print(
        f"Wrote {len(acquisitions)} volumes, poses.csv, precalib.txt and ground_truth.txt to {out}"
    )

    if args.beads:
        (out / "beads").mkdir(exist_ok=True)
        bead_acquisitions = render_bead_volumes(
            scene, bead, config["bead.volumes_per_side"], noise, args.seed
        )
        for acquisition in bead_acquisitions:
            write_volume(out / "beads" / f"{acquisition.acquisition_id}.vol", acquisition.volume)
        write_pose_log(
            out / "bead_poses.csv",
            [
                PoseRecord(a.acquisition_id, a.recorded_pose, index * POSE_INTERVAL)
                for index, a in enumerate(bead_acquisitions)
            ],
        )
        write_beads(
            out / "beads.csv",
            [(a.acquisition_id, a.side, a.centers) for a in bead_acquisitions],
        )
        print(
            f"Wrote {len(bead_acquisitions)} bead volumes, bead_poses.csv and beads.csv to {out}"
        )


def precalibrate(args, config):
    points = read_points(args.points)
    precalibration = precalibrate_membrane(
        points, config["plane_fit.iterations"], config["plane_fit.cutoff"]
    )
    write_precalibration(args.out, precalibration, config.echo())
    outliers = int(np.count_nonzero(precalibration.fit.outliers))
    print(
        f"Pre-calibration rms {precalibration.rms:.6f} mm, {outliers} outlier(s), "
        f"written to {args.out}"
    )


def calibrate(args, config):
    t_ph2m, _ = read_precalibration(args.precalib)
    calibration = MembraneCalibration(
        read_volumes(args.volumes), read_pose_log(args.poses), t_ph2m, config
    )
    run = calibration.run()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_calibration(
        args.out, run.result, calibration.scale, config.echo(), dims=calibration.dims
    )
    report = format_report("Feature extraction precision", run.precision)
    if args.report:
        with open(args.report, "w") as f:
            f.write(report)
    print(report, end="")
    if run.failures:
        print(f"Detection failed for: {', '.join(sorted(run.failures))}")
    print(f"Calibration written to {args.out}")


def backtest(args, config):
    t_ph2m, _ = read_precalibration(args.precalib)
    calibration_file = read_calibration(args.calib)
    calibration = MembraneCalibration(
        read_volumes(args.volumes), read_pose_log(args.poses), t_ph2m, config
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    deltas = asyncio.run(calibration.backtest(calibration_file.transform, out))
    write_backtest_report(out / "backtest.txt", deltas)
    flagged = [f"{d.acquisition_id}/{d.slice_name}" for d in deltas if d.flagged]
    print(f"Back-test of {len(deltas)} slices written to {out}")
    if flagged:
        print(f"Slices over the limits: {', '.join(flagged)}")


def bead_sets(args, config, scale):
    """Left and right BeadSets with corrected centers, in acquisition id order."""
    poses = read_pose_log(args.poses)
    scene = config.scene()
    v_tissue = config["sos.v_tissue"]
    if args.volumes:
        found = {}
        for path in sorted(Path(args.volumes).glob("*.vol")):
            volume = read_volume(path)
            volume_id = volume.acquisition_id or path.stem
            side = "left" if volume_id.startswith("l") else "right"
            found[volume_id] = (
                side,
                locate_beads(volume),
                volume.probe,
                volume.sos_context(v_tissue),
            )
    else:
        found = {
            key: (side, centers, scene.probe, scene.context)
            for key, (side, centers) in read_beads(args.beads).items()
        }

    sets = {"left": [], "right": []}
    for key in sorted(found):
        side, centers, probe, context = found[key]
        if key not in poses:
            raise AcquisitionMismatchError(f"No pose record for bead volume {key}")
        corrected = correct_point(centers, scale, probe, context)
        sets[side].append(BeadSet(corrected, poses[key].transform, key))
    return sets["left"], sets["right"]


def calibration_dims(calibrations, config):
    dims = {c.dims for c in calibrations if c.dims is not None}
    if len(dims) > 1:
        raise FormatError(f"Calibrations were made from volumes of different dims: {sorted(dims)}")
    if not dims:
        logger.warning("Calibration files record no volume dims, using scene.dims")
        return config["scene.dims"]
    return dims.pop()


def evaluate(args, config):
    calibrations = read_calibrations(args.calibs)
    scale = calibrations[0].scale
    transforms = [c.transform for c in calibrations]
    sections = []

    if len(transforms) >= 2:
        precision = calibration_precision(transforms, scale, calibration_dims(calibrations, config))
        sections.append(format_report("Calibration precision", precision))
    elif not (args.beads or args.volumes):
        raise InsufficientDataError("Need at least 2 calibrations or bead data to evaluate")
    else:
        logger.warning("Fewer than 2 calibrations, skipping calibration precision")

    if args.beads or args.volumes:
        left, right = bead_sets(args, config, scale)
        accuracy = reconstruction_accuracy(
            left,
            right,
            transforms,
            config["bead.barycenter_distance"],
            scale,
            config["bead.pairing"],
        )
        sections.append(format_report("Reconstruction accuracy", accuracy))

    report = "\n".join(sections)
    if args.out:
        with open(args.out, "w") as f:
            f.write(report)
    print(report, end="")


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Membrane phantom calibration of 3-D ultrasound probes."
    )
    parser.add_argument("--debug", help="Enable debug", action="store_true")
    parser.add_argument("--config", help="Key-value config file", type=str)
    subparsers = parser.add_subparsers(help="sub-command help", dest="command")

    simulate_subparser = subparsers.add_parser(
        "simulate", help="Simulate a calibration campaign with known ground truth"
    )
    simulate_subparser.add_argument("--out", required=True, help="Output folder")
    simulate_subparser.add_argument("--seed", type=int, default=0, help="Simulation seed")
    simulate_subparser.add_argument(
        "--beads", action="store_true", help="Also render the bead phantom volumes"
    )

    precalibrate_subparser = subparsers.add_parser(
        "precalibrate", help="Fit T_Ph2M from digitized membrane points"
    )
    precalibrate_subparser.add_argument("--points", required=True, help="Points CSV in phantom space")
    precalibrate_subparser.add_argument("--out", required=True, help="Pre-calibration file to write")

    calibrate_subparser = subparsers.add_parser("calibrate", help="Calibrate T_U2Pr")
    calibrate_subparser.add_argument("--volumes", required=True, help="Folder of .vol files")
    calibrate_subparser.add_argument("--poses", required=True, help="Pose log CSV")
    calibrate_subparser.add_argument("--precalib", required=True, help="Pre-calibration file")
    calibrate_subparser.add_argument("--out", required=True, help="Calibration file to write")
    calibrate_subparser.add_argument("--report", help="Also write the precision report here")
    calibrate_subparser.add_argument("--seed", type=int, help="Solver restart seed")
    calibrate_subparser.add_argument("--restarts", type=int, help="Number of solver restarts")

    backtest_subparser = subparsers.add_parser(
        "backtest", help="Overlay solved and detected lines on the extraction slices"
    )
    backtest_subparser.add_argument("--volumes", required=True, help="Folder of .vol files")
    backtest_subparser.add_argument("--calib", required=True, help="Calibration file")
    backtest_subparser.add_argument("--poses", required=True, help="Pose log CSV")
    backtest_subparser.add_argument("--precalib", required=True, help="Pre-calibration file")
    backtest_subparser.add_argument("--out", required=True, help="Output folder")

    evaluate_subparser = subparsers.add_parser(
        "evaluate", help="Calibration precision and bead reconstruction accuracy"
    )
    evaluate_subparser.add_argument("--calibs", required=True, help="Folder of calibration files")
    evaluate_subparser.add_argument("--beads", help="Bead center CSV")
    evaluate_subparser.add_argument(
        "--volumes",
        help="Folder of bead .vol files named l01.. and r01.., beads are located automatically",
    )
    evaluate_subparser.add_argument("--poses", help="Pose log CSV of the bead volumes")
    evaluate_subparser.add_argument("--out", help="Also write the report here")

    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.WARNING,
        format="%(asctime)-15s:%(levelname)s:%(name)s:%(lineno)d:%(message)s",
    )

    commands = {
        "simulate": simulate,
        "precalibrate": precalibrate,
        "calibrate": calibrate,
        "backtest": backtest,
        "evaluate": evaluate,
    }
    if args.command not in commands:
        parser.print_help()
        return EXIT_FAILURE

    try:
        config = Config.load(args.config)
        if args.command == "calibrate":
            config.set("solver.seed", args.seed)
            config.set("solver.restarts", args.restarts)
        if args.command == "evaluate" and (args.beads or args.volumes) and not args.poses:
            raise FormatError("--poses is required with bead data")
        commands[args.command](args, config)
    except (CalibrationError, OSError) as e:
        for error_type, code in EXIT_CODES:
            if isinstance(e, error_type):
                break
        else:
            code = EXIT_FAILURE
        logger.debug("Command failed", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
