"""Command-line front-end: ``icp-uncert <command> --config run.json``.

Exit status is 0 on success, 2 on configuration or I/O errors and 3 on
numerical or registration failures; errors are also written to stderr as a
single JSON object.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import se3
from .cloud import PointCloud
from .config import ConfigError, RunConfig, dumps, write_csv
from .covariance import SigmaPointFailure, censi_term, estimate
from .evaluation import mahalanobis, monte_carlo_covariance
from .experiments import SWEEP_HEADER, run_trajectory, sweep
from .icp import RegistrationError, register
from .io import DataFormatError, load_cloud_csv, load_trajectory_csv, save_cloud_csv, save_trajectory_csv
from .scenes import SyntheticTrajectory, corridor_trajectory, generate_scene
from .se3 import Pose, PoseGaussian

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
ELLIPSE_VERTICES = 50
ELLIPSE_SIGMA = 3.0


# --- inputs ---------------------------------------------------------------


def _load_cloud(path: str) -> PointCloud:
    try:
        return load_cloud_csv(path)
    except FileNotFoundError:
        raise ConfigError(f"cloud file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read cloud file {path}: {exc.strerror}") from None


def _pose(values, what: str) -> Pose:
    try:
        return Pose.from_list(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def pair_inputs(cfg: RunConfig) -> tuple[PointCloud, PointCloud, Pose, Pose | None]:
    """Reading, reference, initial pose and (when known) true pose."""
    if cfg.scene is not None:
        T_true = cfg.pose_true
        P, Q = generate_scene(cfg.scene, T_true, [cfg.seed, 0])
        T_ini = se3.sample_concentrated(PoseGaussian(T_true, cfg.Q_ini), [cfg.seed, 1])
        return P, Q, T_ini, T_true
    ds = cfg.dataset
    if ds.reading is None or ds.reference is None:
        raise ConfigError("dataset needs 'reading' and 'reference' cloud paths")
    P, Q = _load_cloud(ds.reading), _load_cloud(ds.reference)
    T_ini = _pose(ds.T_ini, "dataset.T_ini") if ds.T_ini is not None else Pose.identity()
    T_true = _pose(ds.T_true, "dataset.T_true") if ds.T_true is not None else None
    return P, Q, T_ini, T_true


def trajectory_inputs(cfg: RunConfig) -> SyntheticTrajectory:
    if cfg.scene is not None:
        spec = cfg.trajectory
        if spec is None:
            raise ConfigError("trajectory command needs a 'trajectory' section with a scene")
        if cfg.scene.kind != "corridor":
            raise ConfigError("synthetic trajectories are generated in corridor scenes")
        return corridor_trajectory(cfg.scene, spec.n_scans, spec.step, cfg.seed, spec.lateral, spec.yaw)
    ds = cfg.dataset
    if not ds.scans or ds.poses is None:
        raise ConfigError("dataset trajectory needs 'scans' and 'poses'")
    scans = [_load_cloud(p) for p in ds.scans]
    try:
        indexed = load_trajectory_csv(ds.poses)
    except FileNotFoundError:
        raise ConfigError(f"pose file not found: {ds.poses}") from None
    poses = [pose for _, pose in sorted(indexed, key=lambda item: item[0])]
    if len(poses) != len(scans):
        raise ConfigError(f"{len(scans)} scans but {len(poses)} ground-truth poses")
    if len(scans) < 2:
        raise ConfigError("trajectory needs at least 2 scans")
    return SyntheticTrajectory(scans, poses)


# --- outputs --------------------------------------------------------------


def _emit_json(obj, out: str | None) -> None:
    text = dumps(obj) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _sidecar(out: str | None, suffix: str) -> str:
    if out is None:
        raise ConfigError(f"--out is required to write the {suffix} file")
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


def ellipse_polyline(center_xy, cov_xy, n: int = ELLIPSE_VERTICES, k: float = ELLIPSE_SIGMA) -> np.ndarray:
    """``n`` vertices of the ``k``-sigma ellipse of a 2x2 covariance."""
    L = se3.psd_sqrt(np.asarray(cov_xy, dtype=float))
    theta = 2 * np.pi * np.arange(n) / n
    circle = np.stack([np.cos(theta), np.sin(theta)])
    return np.asarray(center_xy, dtype=float) + k * (L @ circle).T


# --- commands -------------------------------------------------------------


def cmd_register(cfg: RunConfig) -> dict:
    P, Q, T_ini, T_true = pair_inputs(cfg)
    res = register(P, Q, T_ini, cfg.icp)
    out = res.to_dict()
    out["T_ini"] = T_ini.to_list()
    if T_true is not None:
        out["error"] = se3.between(T_true, res.T_icp).tolist()
    return out


def cmd_estimate_cov(cfg: RunConfig, ellipse: bool = False) -> dict:
    P, Q, T_ini, T_true = pair_inputs(cfg)
    Q_ini = cfg.Q_ini
    out = {"method": cfg.method, "T_ini": T_ini.to_list()}
    if cfg.method == "proposed":
        report = estimate(P, Q, T_ini, Q_ini, cfg.icp, cfg.noise)
        out.update(report.to_dict())
        T_icp, Q_icp = report.T_icp, report.Q_icp
    elif cfg.method == "censi":
        res = register(P, Q, T_ini, cfg.icp)
        T_icp, Q_icp = res.T_icp, censi_term(res.system, cfg.noise.sigma_white)
        out.update({"T_icp": T_icp.to_list(), "Q_icp": Q_icp.ravel().tolist()})
    else:
        center = T_true if T_true is not None else T_ini
        res = register(P, Q, T_ini, cfg.icp)
        dist = monte_carlo_covariance(P, Q, center, Q_ini, cfg.samples, cfg.icp, cfg.seed)
        T_icp, Q_icp = res.T_icp, dist.cov
        out.update({
            "T_icp": T_icp.to_list(),
            "Q_icp": Q_icp.ravel().tolist(),
            "xi_mean": dist.mean_xi.tolist(),
            "samples": cfg.samples,
            "failures": dist.failures,
        })
    if T_true is not None:
        out["error"] = se3.between(T_true, T_icp).tolist()
    if ellipse:
        path = _sidecar(cfg.out, "_ellipse.csv")
        # translation block, restricted to the ground plane (x, y)
        pts = ellipse_polyline(T_icp.translation[:2], Q_icp[3:5, 3:5])
        write_csv(path, ["x", "y"], pts.tolist())
        out["ellipse"] = path
    return out


def cmd_sweep(cfg: RunConfig) -> str:
    spec = cfg.sweep
    if spec is None:
        raise ConfigError("sweep command needs a 'sweep' section")
    scenes = dict(spec.scenes)
    if not scenes:
        if cfg.scene is None:
            raise ConfigError("sweep needs at least one scene")
        scenes = {cfg.scene.kind: cfg.scene}
    rows = sweep(scenes, cfg.pose_true, spec.true, spec.assumed, spec.draws, cfg.noise, cfg.icp, cfg.seed, spec.init_per_draw)
    return write_csv(cfg.out, SWEEP_HEADER, [r.as_row() for r in rows])


TRAJECTORY_HEADER = ["scan", "variant", "mahalanobis", "mahalanobis_translation", "mahalanobis_rotation"]


def cmd_trajectory(cfg: RunConfig, fuse: bool = False) -> tuple[str, dict]:
    traj = trajectory_inputs(cfg)
    run = run_trajectory(traj, cfg.Q_ini, cfg.noise, cfg.icp, cfg.seed)
    variants = ["icp_only"] + (["independent", "fused"] if fuse else [])
    rows = []
    summary = {}
    for v in variants:
        samples = run.samples(v)
        for i, s in enumerate(samples, start=1):
            rows.append([i, v] + [mahalanobis([s], split) for split in ("full", "translation", "rotation")])
        summary[v] = {split: mahalanobis(samples, split) for split in ("full", "translation", "rotation")}
    text = write_csv(cfg.out, TRAJECTORY_HEADER, rows)
    doc = {
        "truth": [T.to_list() for T in run.truth],
        "estimates": {v: [g.to_dict() for g in getattr(run, v)] for v in variants},
        "mahalanobis": summary,
    }
    if cfg.out is not None:
        Path(_sidecar(cfg.out, "_trajectory.json")).write_text(dumps(doc) + "\n", encoding="utf-8")
    return text, doc


def cmd_synth(cfg: RunConfig) -> dict:
    if cfg.scene is None:
        raise ConfigError("synth needs a 'scene' section")
    if cfg.out is None:
        raise ConfigError("synth needs --out <directory>")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.trajectory is not None:
        traj = trajectory_inputs(cfg)
        paths = []
        for i, scan in enumerate(traj.scans):
            path = out_dir / f"scan_{i:03d}.csv"
            save_cloud_csv(path, scan)
            paths.append(str(path))
        save_trajectory_csv(out_dir / "poses.csv", traj.poses)
        return {"scans": paths, "poses": str(out_dir / "poses.csv")}
    P, Q, T_ini, T_true = pair_inputs(cfg)
    save_cloud_csv(out_dir / "reading.csv", P)
    save_cloud_csv(out_dir / "reference.csv", Q)
    return {
        "reading": str(out_dir / "reading.csv"),
        "reference": str(out_dir / "reference.csv"),
        "T_ini": T_ini.to_list(),
        "T_true": T_true.to_list(),
    }


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icp-uncert", description="Point-to-plane ICP with output covariance estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--out", help="output path (stdout when omitted, where allowed)")
        return p

    common(sub.add_parser("register", help="register one pair of clouds"))
    p = common(sub.add_parser("estimate-cov", help="register and estimate the output covariance"))
    p.add_argument("--method", choices=["proposed", "censi", "monte-carlo"])
    p.add_argument("--samples", type=int, help="Monte-Carlo registrations")
    p.add_argument("--ellipse", action="store_true", help="also write the 3-sigma ground-plane ellipse (50 vertices)")
    common(sub.add_parser("sweep", help="NNE grid over true and assumed initialization levels"))
    p = common(sub.add_parser("trajectory", help="compound registrations along a scan sequence"))
    p.add_argument("--fuse", action="store_true", help="also fuse with the odometry, with and without cross terms")
    common(sub.add_parser("synth", help="write generated scene clouds to CSV"))
    return parser


def _error_kind(exc: Exception) -> tuple[int, str]:
    if isinstance(exc, (ConfigError, DataFormatError, OSError)):
        return EXIT_CONFIG, type(exc).__name__
    if isinstance(exc, (RegistrationError, SigmaPointFailure, se3.CovarianceError, se3.LogMapSingularity, np.linalg.LinAlgError)):
        return EXIT_NUMERIC, type(exc).__name__
    raise exc


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        overrides = {"seed": args.seed, "out": args.out}
        for key in ("method", "samples"):
            overrides[key] = getattr(args, key, None)
        try:
            cfg = cfg.with_overrides(**overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if args.command == "register":
            _emit_json(cmd_register(cfg), cfg.out)
        elif args.command == "estimate-cov":
            _emit_json(cmd_estimate_cov(cfg, args.ellipse), cfg.out)
        elif args.command == "sweep":
            text = cmd_sweep(cfg)
            if cfg.out is None:
                sys.stdout.write(text)
        elif args.command == "trajectory":
            text, _ = cmd_trajectory(cfg, args.fuse)
            if cfg.out is None:
                sys.stdout.write(text)
        else:
            _emit_json(cmd_synth(cfg), None)
    except Exception as exc:
        code, kind = _error_kind(exc)
        sys.stderr.write(dumps({"error": kind, "message": str(exc), "exit_code": code}, indent=0).replace("\n", "") + "\n")
        return code
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
