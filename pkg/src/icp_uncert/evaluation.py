"""Consistency metrics and sampling baselines for pose covariances."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import se3
from .cloud import DEFAULT_NORMAL_K, PointCloud, estimate_normals
from .icp import IcpConfig, RegistrationError, register
from .parallel import worker_count
from .se3 import Pose, PoseGaussian

SPLITS = {"full": slice(0, 6), "rotation": slice(0, 3), "translation": slice(3, 6)}
MIN_SUCCESSES = 7


@dataclass(frozen=True, eq=False)
class ErrorSample:
    """Error twist ``log(T_true^-1 T_hat)`` with the covariance claimed for it."""

    xi: np.ndarray
    Q_hat: np.ndarray


@dataclass(frozen=True)
class SplitMetric:
    translation: float
    rotation: float


def _block(split: str) -> slice:
    try:
        return SPLITS[split]
    except KeyError:
        raise ValueError(f"split must be one of {sorted(SPLITS)}, got {split!r}") from None


def normalized_errors(samples: list[ErrorSample], split: str = "full") -> np.ndarray:
    s = _block(split)
    out = []
    for sample in samples:
        tr = float(np.trace(sample.Q_hat[s, s]))
        if tr <= 0:
            raise ValueError("covariance with zero trace in NNE")
        out.append(float(sample.xi[s] @ sample.xi[s]) / tr)
    return np.array(out)


def nne(samples: list[ErrorSample], split: str = "full", trim: float = 0.0) -> float:
    """Normalized norm error ``sqrt(mean ||xi||^2 / trace Q_hat)``.

    ``trim`` drops that fraction of samples from each tail of the normalized
    errors before averaging (robust variant).
    """
    if not samples:
        raise ValueError("NNE needs at least one sample")
    return float(np.sqrt(_trimmed_mean(normalized_errors(samples, split), trim)))


def mahalanobis(samples: list[ErrorSample], split: str = "full", trim: float = 0.0) -> float:
    """``sqrt(sum xi^T Q_hat^-1 xi / (dim N))`` over the selected block."""
    if not samples:
        raise ValueError("Mahalanobis distance needs at least one sample")
    s = _block(split)
    vals = []
    for sample in samples:
        xi = sample.xi[s]
        Q = sample.Q_hat[s, s]
        try:
            L = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise ValueError("Mahalanobis distance needs positive-definite covariances") from None
        y = np.linalg.solve(L, xi)
        vals.append(float(y @ y) / len(xi))
    return float(np.sqrt(_trimmed_mean(np.array(vals), trim)))


def _trimmed_mean(values: np.ndarray, trim: float) -> float:
    if not 0 <= trim < 0.5:
        raise ValueError("trim fraction must lie in [0, 0.5)")
    if trim == 0:
        return float(values.mean())
    v = np.sort(values)
    k = int(np.floor(trim * len(v)))
    return float(v[k : len(v) - k].mean())


def gaussian_kl(p_mean, p_cov, q_mean, q_cov) -> float:
    """Closed-form ``KL(N_p || N_q)`` in nats."""
    p_mean, q_mean = np.atleast_1d(np.asarray(p_mean, float)), np.atleast_1d(np.asarray(q_mean, float))
    p_cov, q_cov = np.atleast_2d(np.asarray(p_cov, float)), np.atleast_2d(np.asarray(q_cov, float))
    k = len(p_mean)
    eye = np.eye(k)
    p_cov = p_cov + 1e-12 * eye
    q_cov = q_cov + 1e-12 * eye
    try:
        Lq = np.linalg.cholesky(q_cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("q covariance is singular after jitter") from None
    sign_p, logdet_p = np.linalg.slogdet(p_cov)
    if sign_p <= 0:
        raise np.linalg.LinAlgError("p covariance is not positive definite")
    logdet_q = 2.0 * np.log(np.diag(Lq)).sum()
    M = np.linalg.solve(Lq, p_cov)
    trace_term = np.trace(np.linalg.solve(Lq.T, M))
    y = np.linalg.solve(Lq, q_mean - p_mean)
    return float(0.5 * (trace_term + y @ y - k + logdet_q - logdet_p))


def split_kl(p_mean, p_cov, q_mean, q_cov) -> SplitMetric:
    out = {}
    for name in ("translation", "rotation"):
        s = SPLITS[name]
        out[name] = gaussian_kl(np.asarray(p_mean)[s], np.asarray(p_cov)[s, s], np.asarray(q_mean)[s], np.asarray(q_cov)[s, s])
    return SplitMetric(**out)


@dataclass(frozen=True, eq=False)
class SampledDistribution:
    """Mean and (n-1)-normalized covariance of sampled ICP error twists."""

    mean_xi: np.ndarray
    cov: np.ndarray
    xis: np.ndarray
    failures: int

    def __iter__(self):
        return iter((self.mean_xi, self.cov))

    @property
    def n(self) -> int:
        return len(self.xis)


def monte_carlo_covariance(
    P: PointCloud,
    Q: PointCloud,
    T_true: Pose,
    Q_ini: np.ndarray,
    n_samples: int = 65,
    config: IcpConfig = IcpConfig(),
    seed=0,
    workers: int | None = None,
) -> SampledDistribution:
    """Register from ``n_samples`` initializations drawn from ``N_L(T_true, Q_ini)``.

    The clouds are used as given for every draw.  Failed registrations are
    dropped and counted.
    """
    if n_samples < MIN_SUCCESSES:
        raise ValueError(f"need at least {MIN_SUCCESSES} samples, got {n_samples}")
    if not Q.has_normals:
        Q = estimate_normals(Q, DEFAULT_NORMAL_K)
    L = se3.psd_sqrt(np.asarray(Q_ini, dtype=float))
    draws = np.random.default_rng(seed).standard_normal((n_samples, 6)) @ L.T
    inv_true = se3.inverse(T_true)

    def run(i):
        try:
            res = register(P, Q, se3.compose(T_true, se3.exp(draws[i])), config)
            return se3.log(se3.compose(inv_true, res.T_icp))
        except (RegistrationError, se3.LogMapSingularity, ValueError):
            return None

    n_workers = worker_count(workers)
    if n_workers <= 1:
        results = [run(i) for i in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, range(n_samples)))
    xis = np.array([r for r in results if r is not None]).reshape(-1, 6)
    failures = n_samples - len(xis)
    if len(xis) < MIN_SUCCESSES:
        raise RegistrationError(f"only {len(xis)} of {n_samples} Monte-Carlo registrations succeeded")
    mean = xis.mean(axis=0)
    dev = xis - mean
    return SampledDistribution(mean, dev.T @ dev / (len(xis) - 1), xis, failures)


def pseudo_true_distribution(
    P: PointCloud,
    Q: PointCloud,
    T_true: Pose,
    Q_ini: np.ndarray,
    n: int = 200,
    config: IcpConfig = IcpConfig(),
    seed=0,
    workers: int | None = None,
) -> SampledDistribution:
    """Dispersion caused by initialization alone: fixed clouds, fixed subsample.

    Defaults to 200 draws for desk-scale runs; the reference evaluation
    protocol uses 1000.
    """
    if n < 30:
        raise ValueError("pseudo-true distribution needs n >= 30")
    return monte_carlo_covariance(P, Q, T_true, Q_ini, n, config, seed, workers)


def kl_to_pseudo_true(pseudo: SampledDistribution, T_true: Pose, T_hat: Pose, Q_hat: np.ndarray, split: str = "full") -> float:
    """``KL(pseudo-true || N_L(T_hat, Q_hat))`` in the chart at the pseudo-true mean pose.

    Sampled twists are re-expressed about ``M = T_true exp(mean)``; the
    estimate enters with mean ``log(M^-1 T_hat)`` and its covariance as is.
    """
    s = _block(split)
    M = se3.compose(T_true, se3.exp(pseudo.mean_xi))
    inv_M = se3.inverse(M)
    local = np.array([se3.log(se3.compose(inv_M, se3.compose(T_true, se3.exp(x)))) for x in pseudo.xis])
    p_mean = local.mean(axis=0)
    dev = local - p_mean
    p_cov = dev.T @ dev / (len(local) - 1)
    q_mean = se3.log(se3.compose(inv_M, T_hat))
    Q_hat = np.asarray(Q_hat, dtype=float)
    return gaussian_kl(p_mean[s], p_cov[s, s], q_mean[s], Q_hat[s, s])


def compound_trajectory(relatives: list[PoseGaussian]) -> list[PoseGaussian]:
    """Global poses after each relative step, first-order covariance."""
    if not relatives:
        raise ValueError("trajectory needs at least one relative pose")
    out = [relatives[0]]
    for step in relatives[1:]:
        out.append(se3.compound_gaussians(out[-1], step))
    return out


@dataclass
class MetricRecord:
    metric: str
    split: str
    value: float
    n: int
    failures: int = 0

    def to_dict(self) -> dict:
        return {"metric": self.metric, "split": self.split, "value": self.value, "n": self.n, "failures": self.failures}


def error_samples(T_true: Pose, estimates: list[Pose], covs: list[np.ndarray]) -> list[ErrorSample]:
    inv = se3.inverse(T_true)
    return [ErrorSample(se3.log(se3.compose(inv, T)), np.asarray(Q)) for T, Q in zip(estimates, covs)]

