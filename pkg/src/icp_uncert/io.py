"""CSV ingestion and export for clouds and ground-truth trajectories."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .se3 import Pose

REORTHO_LIMIT = 1e-3


class DataFormatError(ValueError):
    pass


def _number(cell: str, path, row: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataFormatError(f"{path}: row {row}, column {column!r}: non-numeric value {cell!r}") from None


def load_cloud_csv(path) -> PointCloud:
    """Read a cloud with header ``x,y,z[,nx,ny,nz]``; other columns are ignored.

    Normals are renormalized; a zero-norm normal row is an error.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = [h.strip().lower() for h in next(reader, [])]
        missing = [c for c in ("x", "y", "z") if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
        cols = [header.index(c) for c in ("x", "y", "z")]
        with_normals = all(c in header for c in ("nx", "ny", "nz"))
        if with_normals:
            cols += [header.index(c) for c in ("nx", "ny", "nz")]
        names = ["x", "y", "z", "nx", "ny", "nz"]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(cols):
                raise DataFormatError(f"{path}: row {line_no}: expected {len(header)} columns, got {len(row)}")
            rows.append([_number(row[c], path, line_no, names[i]) for i, c in enumerate(cols)])
    if not rows:
        raise DataFormatError(f"{path}: no points")
    data = np.array(rows)
    normals = None
    if with_normals:
        normals = data[:, 3:]
        norms = np.linalg.norm(normals, axis=1)
        bad = np.flatnonzero(norms < 1e-12)
        if bad.size:
            raise DataFormatError(f"{path}: row {bad[0] + 2}: zero-norm normal")
        normals = normals / norms[:, None]
    return PointCloud(data[:, :3], normals)


def save_cloud_csv(path, cloud: PointCloud) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if cloud.normals is None:
            writer.writerow(["x", "y", "z"])
            data = cloud.points
        else:
            writer.writerow(["x", "y", "z", "nx", "ny", "nz"])
            data = np.hstack([cloud.points, cloud.normals])
        for row in data:
            writer.writerow([format(v, ".17g") for v in row])


def rigid_from_rows(values, where: str = "pose") -> Pose:
    """Build a pose from 16 row-major numbers, repairing tiny rotation defects."""
    m = np.asarray(values, dtype=float).reshape(4, 4)
    if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
        raise DataFormatError(f"{where}: bottom row must be 0,0,0,1")
    R = m[:3, :3]
    if np.linalg.det(R) <= 0:
        raise DataFormatError(f"{where}: rotation block is not a proper rotation (det <= 0)")
    defect = np.linalg.norm(R.T @ R - np.eye(3))
    if defect >= REORTHO_LIMIT:
        raise DataFormatError(f"{where}: rotation block deviates from orthonormal by {defect:.3g}")
    U, _, Vt = np.linalg.svd(R)
    return Pose(U @ Vt, m[:3, 3])


def load_trajectory_csv(path) -> list[tuple[int, Pose]]:
    """Rows of ``index`` followed by 16 row-major pose entries; one header row allowed."""
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            if line_no == 1 and not _is_number(cells[0]):
                continue
            if len(cells) != 17:
                raise DataFormatError(f"{path}: row {line_no}: expected 17 values, got {len(cells)}")
            nums = [_number(c, path, line_no, f"col{i}") for i, c in enumerate(cells)]
            if nums[0] != int(nums[0]):
                raise DataFormatError(f"{path}: row {line_no}: scan index must be an integer")
            out.append((int(nums[0]), rigid_from_rows(nums[1:], f"{path}: row {line_no}")))
    return out


def save_trajectory_csv(path, poses) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for i, pose in enumerate(poses):
            writer.writerow([i] + [format(v, ".17g") for v in pose.matrix().ravel()])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
