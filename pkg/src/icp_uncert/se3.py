"""Rigid transformations, their tangent space, and concentrated Gaussians.

Twists are plain ``(6,)`` float arrays ordered ``[phi; rho]``: rotation first,
translation second.  Every 6x6 matrix in the package uses the same ordering.
Uncertainty is always a right perturbation, ``T_hat = T @ exp(xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9
V_INV_SERIES = 1e-2  # (1 - (t/2) cot(t/2)) / t^2 cancels badly below this


class LogMapSingularity(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class CovarianceError(ValueError):
    """A covariance matrix is not positive semi-definite or not factorable."""


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee3(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3) stored as a rotation matrix and a translation."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("bottom row of a homogeneous pose must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an ``(N, 3)`` array (or a single 3-vector) through the pose."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix().ravel()]

    @classmethod
    def from_list(cls, values) -> Pose:
        values = list(values)
        if len(values) != 16:
            raise ValueError(f"pose needs 16 row-major values, got {len(values)}")
        return cls.from_matrix(values)

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class PoseGaussian:
    """Concentrated Gaussian ``mean @ exp(xi)``, ``xi ~ N(0, cov)``."""

    mean: Pose
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float).reshape(6, 6)
        if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
            raise CovarianceError("pose covariance is not symmetric")
        cov.flags.writeable = False
        object.__setattr__(self, "cov", cov)

    def to_dict(self) -> dict:
        return {"pose": self.mean.to_list(), "cov": [float(v) for v in self.cov.ravel()]}

    @classmethod
    def from_dict(cls, d: dict) -> PoseGaussian:
        return cls(Pose.from_list(d["pose"]), np.asarray(d["cov"], dtype=float).reshape(6, 6))


def hat(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[:3])
    m[:3, 3] = xi[3:]
    return m


def vee(m: np.ndarray) -> np.ndarray:
    return np.concatenate([vee3(m[:3, :3]), m[:3, 3]])


def _so3_coeffs(theta: float) -> tuple[float, float, float]:
    # sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = np.sin(theta)
    half = np.sin(0.5 * theta)
    return s / theta, 2.0 * half * half / theta**2, (theta - s) / theta**3


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _so3_coeffs(float(np.linalg.norm(phi)))
    K = skew(phi)
    return np.eye(3) + a * K + b * (K @ K)


def left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _, b, c = _so3_coeffs(float(np.linalg.norm(phi)))
    K = skew(phi)
    return np.eye(3) + b * K + c * (K @ K)


def exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[:3], xi[3:]
    a, b, c = _so3_coeffs(float(np.linalg.norm(phi)))
    K = skew(phi)
    K2 = K @ K
    R = np.eye(3) + a * K + b * K2
    V = np.eye(3) + b * K + c * K2
    return Pose(R, V @ rho)


def rotation_angle(R: np.ndarray) -> float:
    sin_part = 0.5 * np.linalg.norm(vee3(R - R.T))
    cos_part = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(sin_part, cos_part))


def so3_log(R: np.ndarray) -> np.ndarray:
    theta = rotation_angle(R)
    if theta > np.pi - 1e-6:
        raise LogMapSingularity(f"rotation angle {theta:.9f} rad is within 1e-6 of pi")
    w = vee3(R - R.T)
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta**2 / 6.0) * w
    return theta / (2.0 * np.sin(theta)) * w


def log(T: Pose) -> np.ndarray:
    phi = so3_log(T.rotation)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < V_INV_SERIES:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        h = 0.5 * theta
        d = (1.0 - h / np.tan(h)) / theta**2
    V_inv = np.eye(3) - 0.5 * K + d * (K @ K)
    return np.concatenate([phi, V_inv @ T.translation])


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(T: Pose) -> Pose:
    Rt = T.rotation.T
    return Pose(Rt, -Rt @ T.translation)


def between(a: Pose, b: Pose) -> np.ndarray:
    """Twist ``log(a^-1 b)``: the error of ``b`` seen from ``a``."""
    return log(compose(inverse(a), b))


def adjoint(T: Pose) -> np.ndarray:
    R = T.rotation
    ad = np.zeros((6, 6))
    ad[:3, :3] = R
    ad[3:, :3] = skew(T.translation) @ R
    ad[3:, 3:] = R
    return ad


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L L^T = cov``.

    A zero matrix factors to zero.  Otherwise plain Cholesky is tried, then
    diagonal jitter of 1e-12 and 1e-9.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    scale = max(1.0, float(np.abs(cov).max()))
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-12 * scale:
        raise CovarianceError("covariance is not positive semi-definite")
    eye = np.eye(cov.shape[0])
    for jitter in (0.0, 1e-12, 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise CovarianceError("Cholesky factorization failed after jitter retries")


def sample_concentrated(g: PoseGaussian, seed) -> Pose:
    rng = np.random.default_rng(seed)
    L = psd_sqrt(g.cov)
    if not np.any(L):
        return g.mean
    return compose(g.mean, exp(L @ rng.standard_normal(6)))


def compound_gaussians(a: PoseGaussian, b: PoseGaussian) -> PoseGaussian:
    """First-order compounding of ``a.mean @ b.mean`` with transported covariance."""
    ad = adjoint(inverse(b.mean))
    cov = ad @ a.cov @ ad.T + b.cov
    return PoseGaussian(compose(a.mean, b.mean), 0.5 * (cov + cov.T))
