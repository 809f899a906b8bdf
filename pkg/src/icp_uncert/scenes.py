"""Synthetic desk-scale scenes with white and bias sensor noise.

All scenes are built from planar rectangular patches, except ``random-blob``
which is a smooth height field made of Gaussian bumps.  Patches meeting at an
edge are separated by a small gap so that, at the true alignment, points next
to an edge never pair with the neighbouring plane.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import DEFAULT_NORMAL_K, PointCloud, estimate_normals
from .se3 import Pose, compose, inverse

KINDS = ("room-corner", "corridor", "single-plane", "random-blob")
BIAS_DIRECTIONS = ("along-normal", "along-ray")
EDGE_GAP = 0.12  # fraction of extent


@dataclass(frozen=True)
class SensorNoiseSpec:
    sigma_white: float = 0.0
    sigma_bias: float = 0.0
    bias_direction: str = "along-normal"

    def __post_init__(self):
        if self.sigma_white < 0 or self.sigma_bias < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.bias_direction not in BIAS_DIRECTIONS:
            raise ValueError(f"bias_direction must be one of {BIAS_DIRECTIONS}")


@dataclass(frozen=True)
class Scene:
    kind: str = "room-corner"
    extent: float = 2.0
    density: float = 300.0
    noise: SensorNoiseSpec = field(default_factory=SensorNoiseSpec)
    shape_seed: int = 0
    normal_k: int = DEFAULT_NORMAL_K

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        if self.extent <= 0 or self.density <= 0:
            raise ValueError("extent and density must be > 0")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", SensorNoiseSpec(**self.noise))

    def area(self) -> float:
        return sum(p.area for p in _patches(self)) if self.kind != "random-blob" else self.extent**2

    def with_points(self, n: int) -> Scene:
        """Copy with the density adjusted to give about ``n`` points per cloud."""
        return Scene(self.kind, self.extent, n / self.area(), self.noise, self.shape_seed, self.normal_k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Scene:
        d = dict(d)
        d["noise"] = SensorNoiseSpec(**d.get("noise", {}))
        return cls(**d)


@dataclass(frozen=True)
class Patch:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        ab = rng.random((n, 2))
        pts = self.origin + ab[:, :1] * self.u + ab[:, 1:] * self.v
        return pts, np.tile(self.normal, (n, 1))


def _patch(origin, u, v) -> Patch:
    return Patch(np.asarray(origin, float), np.asarray(u, float), np.asarray(v, float))


def room_corner_patches(e: float) -> list[Patch]:
    # corner at -e/2 on every axis; normals point into the room
    h, m = e / 2, EDGE_GAP * e
    s = e - m
    return [
        _patch([-h + m, -h + m, -h], [s, 0, 0], [0, s, 0]),  # floor, +z
        _patch([-h, -h + m, -h + m], [0, s, 0], [0, 0, s]),  # wall, +x
        _patch([-h + m, -h, -h + m], [0, 0, s], [s, 0, 0]),  # wall, +y
    ]


def corridor_patches(e: float, x_min: float | None = None, x_max: float | None = None) -> list[Patch]:
    """Two parallel walls (y = +-0.3e) and a floor (z = -0.25e), along x."""
    x0 = -e / 2 if x_min is None else x_min
    x1 = e / 2 if x_max is None else x_max
    L, w, fz, top, m = x1 - x0, 0.3 * e, -0.25 * e, 0.25 * e, EDGE_GAP * e
    return [
        _patch([x0, -w + m, fz], [L, 0, 0], [0, 2 * (w - m), 0]),  # floor, +z
        _patch([x0, -w, fz + m], [0, 0, top - fz - m], [L, 0, 0]),  # wall, +y
        _patch([x0, w, fz + m], [L, 0, 0], [0, 0, top - fz - m]),  # wall, -y
    ]


def _patches(scene: Scene) -> list[Patch]:
    e = scene.extent
    if scene.kind == "room-corner":
        return room_corner_patches(e)
    if scene.kind == "corridor":
        return corridor_patches(e)
    if scene.kind == "single-plane":
        return [_patch([-e / 2, -e / 2, -0.25 * e], [e, 0, 0], [0, e, 0])]
    raise ValueError(f"{scene.kind} is not a patch scene")


@dataclass(frozen=True)
class HeightField:
    extent: float
    centers: np.ndarray
    amplitudes: np.ndarray
    widths: np.ndarray

    @classmethod
    def random(cls, extent: float, seed: int, n_bumps: int = 10) -> HeightField:
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-extent / 2, extent / 2, (n_bumps, 2))
        amps = rng.uniform(0.05, 0.15, n_bumps) * extent * rng.choice([-1.0, 1.0], n_bumps)
        widths = rng.uniform(0.08, 0.2, n_bumps) * extent
        return cls(extent, centers, amps, widths)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        xy = rng.uniform(-self.extent / 2, self.extent / 2, (n, 2))
        diff = xy[:, None, :] - self.centers[None]
        g = self.amplitudes * np.exp(-0.5 * (diff**2).sum(-1) / self.widths**2)
        z = -0.25 * self.extent + g.sum(1)
        grad = -(g[..., None] * diff / (self.widths**2)[None, :, None]).sum(1)
        normals = np.column_stack([-grad, np.ones(n)])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return np.column_stack([xy, z]), normals


def sample_geometry(scene: Scene, rng: np.random.Generator, x_window=None) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free surface samples and their true normals in the scene frame."""
    if scene.kind == "random-blob":
        n = max(1, int(round(scene.density * scene.extent**2)))
        return HeightField.random(scene.extent, scene.shape_seed).sample(n, rng)
    pts, nrm = [], []
    for patch in _patches(scene):
        p, n = patch.sample(max(1, int(round(scene.density * patch.area))), rng)
        pts.append(p)
        nrm.append(n)
    return np.vstack(pts), np.vstack(nrm)


def add_sensor_noise(points, normals, noise: SensorNoiseSpec, rng: np.random.Generator, sensor_origin=(0.0, 0.0, 0.0)):
    """White isotropic noise per point plus one scalar bias shared by the cloud."""
    points = np.array(points, dtype=float)
    white = rng.standard_normal(points.shape) * noise.sigma_white
    bias = rng.standard_normal() * noise.sigma_bias
    if noise.bias_direction == "along-normal":
        direction = normals
    else:
        ray = points - np.asarray(sensor_origin, dtype=float)
        direction = ray / np.linalg.norm(ray, axis=1, keepdims=True)
    return points + white + bias * direction


def generate_scene(scene: Scene, T_true: Pose, seed) -> tuple[PointCloud, PointCloud]:
    """Reading cloud ``P`` and reference cloud ``Q`` with ``Q ~ T_true . P``.

    Both clouds sample the same geometry independently.  ``P`` lives in the
    scene frame; ``Q`` is expressed in a frame where the true registration
    mapping ``P`` onto ``Q`` is ``T_true``.  ``Q`` carries PCA normals.
    """
    rng = np.random.default_rng(seed)
    gP, nP = sample_geometry(scene, rng)
    gQ, nQ = sample_geometry(scene, rng)
    P = add_sensor_noise(gP, nP, scene.noise, rng)
    Q_scene = add_sensor_noise(gQ, nQ, scene.noise, rng, sensor_origin=inverse(T_true).translation)
    Q = PointCloud(T_true.apply(Q_scene))
    return PointCloud(P), estimate_normals(Q, scene.normal_k)


@dataclass
class SyntheticTrajectory:
    scans: list[PointCloud]
    poses: list[Pose]

    def relative(self, l: int) -> Pose:
        """True registration of scan ``l`` onto scan ``l - 1``."""
        return compose(inverse(self.poses[l - 1]), self.poses[l])


def corridor_trajectory(scene: Scene, n_scans: int, step: float, seed, lateral: float = 0.05, yaw: float = 0.03) -> SyntheticTrajectory:
    """Scans taken while moving ``step`` meters at a time down a long corridor.

    Each scan sees the part of the corridor within ``extent / 2`` of the
    sensor along the axis.  Small lateral and yaw wiggles vary the poses.
    """
    rng = np.random.default_rng(seed)
    e = scene.extent
    patches = corridor_patches(e, -e / 2, step * (n_scans - 1) + e / 2)
    poses = []
    for l in range(n_scans):
        wiggle = rng.uniform(-1, 1, 2) if l else np.zeros(2)
        c, s = np.cos(yaw * wiggle[1]), np.sin(yaw * wiggle[1])
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        poses.append(Pose(R, [l * step, lateral * wiggle[0], 0.0]))
    scans = []
    for pose in poses:
        pts, nrm = [], []
        for patch in patches:
            p, n = patch.sample(max(1, int(round(scene.density * patch.area))), rng)
            keep = np.abs(p[:, 0] - pose.translation[0]) <= e / 2
            pts.append(p[keep])
            nrm.append(n[keep])
        noisy = add_sensor_noise(np.vstack(pts), np.vstack(nrm), scene.noise, rng, pose.translation)
        local = PointCloud(inverse(pose).apply(noisy))
        scans.append(estimate_normals(local, scene.normal_k))
    return SyntheticTrajectory(scans, poses)
