"""ICP output covariance: sensor-noise term, initialization term, fusion.

The ICP error twist is modelled as ``xi_icp = (I - J) xi_ini + G w``.  The
sensor part ``G Q_sensor G^T`` is closed form in the final least-squares
system; the initialization part and the statistical Jacobian ``J`` come from
12 sigma-point registrations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import se3
from .cloud import DEFAULT_NORMAL_K, PointCloud, estimate_normals
from .icp import IcpConfig, IcpResult, LinearSystem, check_conditioning, register
from .parallel import worker_count
from .se3 import Pose, PoseGaussian

RegisterFn = Callable[[PointCloud, PointCloud, Pose, IcpConfig], IcpResult]
I6 = np.eye(6)


class SigmaPointFailure(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"sigma-point registration {index} failed: {cause}")


@dataclass(frozen=True)
class NoiseParams:
    sigma_white: float = 0.05
    sigma_bias: float = 0.05

    def __post_init__(self):
        if self.sigma_white < 0 or self.sigma_bias < 0:
            raise ValueError("noise standard deviations must be >= 0")

    def to_dict(self) -> dict:
        return {"sigma_white": self.sigma_white, "sigma_bias": self.sigma_bias}


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def censi_term(system: LinearSystem, sigma_white: float) -> np.ndarray:
    """White-noise covariance ``sigma^2 A^-1``."""
    check_conditioning(system.A)
    return sym(sigma_white**2 * np.linalg.inv(system.A))


def bias_term(system: LinearSystem, sigma_bias: float) -> np.ndarray:
    """Rank-one covariance of a scalar bias shared by every pair."""
    check_conditioning(system.A)
    g = np.linalg.solve(system.A, system.Bsum)
    return sigma_bias**2 * np.outer(g, g)


def sensor_covariance(system: LinearSystem, noise: NoiseParams) -> np.ndarray:
    return censi_term(system, noise.sigma_white) + bias_term(system, noise.sigma_bias)


def sigma_points(Q_ini: np.ndarray) -> np.ndarray:
    """The 12 twists ``+-`` columns of the Cholesky factor of ``6 Q_ini``, as rows."""
    L = se3.psd_sqrt(6.0 * np.asarray(Q_ini, dtype=float))
    return np.vstack([L.T, -L.T])


@dataclass(frozen=True, eq=False)
class UnscentedTerm:
    J: np.ndarray
    Q_init_term: np.ndarray  # second moment about T_icp_hat
    xi_mean: np.ndarray
    centered_cov: np.ndarray  # same spread about the sigma-point mean
    sigma_points: np.ndarray  # (12, 6) initialization twists
    propagated: np.ndarray  # (12, 6) log(T_icp_hat^-1 T_icp^j)


def _run_sigma_points(P, Q, T_ini, xis, config, register_fn, workers) -> list[Pose]:
    def run(j):
        try:
            return register_fn(P, Q, se3.compose(T_ini, se3.exp(xis[j])), config).T_icp
        except Exception as exc:  # any failure aborts with the offending index
            raise SigmaPointFailure(j, exc) from exc

    if workers <= 1:
        return [run(j) for j in range(len(xis))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(xis))))


def unscented_init_term(
    P: PointCloud,
    Q: PointCloud,
    T_ini: Pose,
    Q_ini: np.ndarray,
    T_icp_hat: Pose,
    config: IcpConfig = IcpConfig(),
    register_fn: RegisterFn = register,
    workers: int | None = None,
) -> UnscentedTerm:
    """Initialization-induced covariance and statistical Jacobian ``J``.

    Every sigma point re-runs ICP from ``T_ini exp(xi_j)`` with the same
    config (hence the same subsample).  The spread is a second moment about
    ``T_icp_hat`` without mean subtraction; ``J`` uses centered deviations.
    """
    Q_ini = np.asarray(Q_ini, dtype=float)
    if not Q.has_normals:
        Q = estimate_normals(Q, DEFAULT_NORMAL_K)
    xis = sigma_points(Q_ini)
    n = len(xis)
    poses = _run_sigma_points(P, Q, T_ini, xis, config, register_fn, worker_count(workers))
    inv_hat = se3.inverse(T_icp_hat)
    props = np.array([se3.log(se3.compose(inv_hat, T)) for T in poses])
    second = props.T @ props / n
    mean = props.mean(axis=0)
    dev = props - mean
    cross = dev.T @ xis / n
    J = I6 - np.linalg.solve(Q_ini.T, cross.T).T
    return UnscentedTerm(J, sym(second), mean, sym(dev.T @ dev / n), xis, props)


@dataclass(frozen=True, eq=False)
class CovarianceReport:
    Q_sensor_term: np.ndarray
    Q_init_term: np.ndarray
    J: np.ndarray
    Q_icp: np.ndarray
    Q_joint: np.ndarray
    xi_icp_mean: np.ndarray
    T_icp: Pose | None = None

    @property
    def Q_ini(self) -> np.ndarray:
        return self.Q_joint[:6, :6]

    def to_dict(self) -> dict:
        flat = lambda m: [float(v) for v in np.asarray(m).ravel()]
        out = {
            "Q_sensor_term": flat(self.Q_sensor_term),
            "Q_init_term": flat(self.Q_init_term),
            "J": flat(self.J),
            "Q_icp": flat(self.Q_icp),
            "Q_joint": flat(self.Q_joint),
            "xi_icp_mean": flat(self.xi_icp_mean),
        }
        if self.T_icp is not None:
            out["T_icp"] = self.T_icp.to_list()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> CovarianceReport:
        m6 = lambda k: np.asarray(d[k], dtype=float).reshape(6, 6)
        T = Pose.from_list(d["T_icp"]) if "T_icp" in d else None
        return cls(
            m6("Q_sensor_term"), m6("Q_init_term"), m6("J"), m6("Q_icp"),
            np.asarray(d["Q_joint"], dtype=float).reshape(12, 12),
            np.asarray(d["xi_icp_mean"], dtype=float), T,
        )


def assemble_report(J, Q_ini, Q_init_term, Q_sensor_term, xi_mean=None, T_icp: Pose | None = None) -> CovarianceReport:
    """Combine the two terms into ``Q_icp`` and the 12x12 joint covariance."""
    J = np.asarray(J, dtype=float)
    Q_ini = sym(np.asarray(Q_ini, dtype=float))
    Q_init_term = sym(np.asarray(Q_init_term, dtype=float))
    Q_sensor_term = sym(np.asarray(Q_sensor_term, dtype=float))
    Q_icp = Q_init_term + Q_sensor_term
    cross = (I6 - J) @ Q_ini
    joint = np.block([[Q_ini, cross.T], [cross, Q_icp]])
    xi_mean = np.zeros(6) if xi_mean is None else np.asarray(xi_mean, dtype=float)
    return CovarianceReport(Q_sensor_term, Q_init_term, J, Q_icp, sym(joint), xi_mean, T_icp)


def estimate(
    P: PointCloud,
    Q: PointCloud,
    T_ini: Pose,
    Q_ini: np.ndarray,
    config: IcpConfig = IcpConfig(),
    noise: NoiseParams = NoiseParams(),
    register_fn: RegisterFn = register,
    workers: int | None = None,
) -> CovarianceReport:
    """Register once, then compute ``Q_icp = (I-J) Q_ini (I-J)^T + G Q_sensor G^T``."""
    if not Q.has_normals:
        Q = estimate_normals(Q, DEFAULT_NORMAL_K)
    base = register_fn(P, Q, T_ini, config)
    Q_sensor = sensor_covariance(base.system, noise)
    ut = unscented_init_term(P, Q, T_ini, Q_ini, base.T_icp, config, register_fn, workers)
    return assemble_report(ut.J, Q_ini, ut.Q_init_term, Q_sensor, ut.xi_mean, base.T_icp)


def _spd_inverse_apply(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    eye = np.eye(len(M))
    for jitter in (0.0, 1e-12):
        try:
            L = np.linalg.cholesky(M + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        y = np.linalg.solve(L, rhs)
        return np.linalg.solve(L.T, y)
    raise np.linalg.LinAlgError("joint covariance is singular even after regularization")


def ml_fuse(T_ini: Pose, T_icp: Pose, report: CovarianceReport, cross_terms: bool = True) -> PoseGaussian:
    """Maximum-likelihood combination of the initial guess and the ICP estimate.

    Both poses are treated as measurements of the true pose with joint error
    covariance ``report.Q_joint``.  With ``cross_terms=False`` the
    off-diagonal blocks are dropped, i.e. the two are fused as independent.
    """
    Qj = np.array(report.Q_joint, dtype=float)
    if not cross_terms:
        Qj[:6, 6:] = 0.0
        Qj[6:, :6] = 0.0
    H = np.vstack([I6, I6])
    z = np.concatenate([se3.between(T_icp, T_ini), np.zeros(6)])
    info = H.T @ _spd_inverse_apply(Qj, H)
    Q_ml = sym(np.linalg.inv(sym(info)))
    xi = Q_ml @ (H.T @ _spd_inverse_apply(Qj, z))
    return PoseGaussian(se3.compose(T_icp, se3.exp(xi)), Q_ml)
