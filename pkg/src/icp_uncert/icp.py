"""Point-to-plane ICP with trimmed associations.

The solver exposes the least-squares system it builds at the final estimate,
since the closed-form covariance terms are functions of that system.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import se3
from .cloud import DEFAULT_NORMAL_K, KDTree, PointCloud, estimate_normals, random_subsample, transform_cloud
from .se3 import Pose

MAX_CONDITION = 1e12
MIN_PAIRS = 6


class RegistrationError(RuntimeError):
    """ICP could not produce an estimate."""


class IllConditionedSystem(RegistrationError):
    """The 6x6 normal matrix is singular or too badly conditioned to solve.

    ``eigenvalues`` holds the ascending spectrum of ``A``; near-zero entries
    point at directions the geometry does not constrain.
    """

    def __init__(self, eigenvalues: np.ndarray, condition: float):
        self.eigenvalues = np.asarray(eigenvalues)
        self.condition = condition
        super().__init__(f"normal matrix is ill-conditioned (cond={condition:.3g}); eigenvalues={self.eigenvalues.tolist()}")


@dataclass(frozen=True)
class IcpConfig:
    keep_probability: float = 0.95
    trim_ratio: float = 0.70
    max_iterations: int = 40
    trans_converged: float = 1e-4
    rot_converged: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.trim_ratio <= 1:
            raise ValueError("trim_ratio must lie in (0, 1]")
        if not 0 < self.keep_probability <= 1:
            raise ValueError("keep_probability must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> IcpConfig:
        return cls(**d)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Linearized point-to-plane cost ``sum_k (B_k xi - d_k)^2``.

    ``B`` stacks the ``K`` rows ``B_k``; ``A = B^T B`` and ``Bsum = sum_k B_k^T``.
    """

    B: np.ndarray
    d: np.ndarray
    A: np.ndarray
    Bsum: np.ndarray
    matches: np.ndarray  # (K, 2) reading / reference indices

    @classmethod
    def from_rows(cls, B, d, matches=None) -> LinearSystem:
        B = np.asarray(B, dtype=float).reshape(-1, 6)
        d = np.asarray(d, dtype=float).reshape(-1)
        if matches is None:
            matches = np.zeros((len(d), 2), dtype=int)
        return cls(B, d, B.T @ B, B.sum(axis=0), matches)

    @property
    def K(self) -> int:
        return len(self.d)

    @property
    def rows(self) -> list[tuple[np.ndarray, float]]:
        return list(zip(self.B, self.d))

    def residual_rms(self) -> float:
        return float(np.sqrt(np.mean(self.d**2)))


@dataclass(frozen=True, eq=False)
class IcpResult:
    T_icp: Pose
    T_rel_hat: Pose
    iterations: int
    converged: bool
    residual_rms: float
    system: LinearSystem
    residual_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "T_icp": self.T_icp.to_list(),
            "T_rel_hat": self.T_rel_hat.to_list(),
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_rms": self.residual_rms,
            "matches": self.system.K,
        }


def point_to_plane_rows(p: np.ndarray, q: np.ndarray, n: np.ndarray, T: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``B_k`` and targets ``d_k`` for residuals ``(T exp(xi) p_k - q_k) . n_k``.

    With ``a_k = R^T n_k`` the row is ``[p_k x a_k, a_k]`` and
    ``d_k = -(T p_k - q_k) . n_k``.
    """
    a = n @ T.rotation
    B = np.hstack([np.cross(p, a), a])
    d = -np.einsum("ij,ij->i", T.apply(p) - q, n)
    return B, d


def _reference_tree(Q: PointCloud | KDTree) -> KDTree:
    if isinstance(Q, KDTree):
        return Q
    if not Q.has_normals:
        raise ValueError("reference cloud needs normals for point-to-plane matching")
    valid = Q.normal_valid
    return KDTree(Q if valid.all() else Q.select(valid))


def build_linear_system(P_sub: PointCloud, Q: PointCloud | KDTree, T_current: Pose, trim_ratio: float) -> LinearSystem:
    """Associate, trim and linearize at ``T_current``.

    ``Q`` is the reference cloud already moved into the initialization frame,
    or a :class:`KDTree` over it (points with invalid normals removed).
    """
    tree = _reference_tree(Q)
    ref = tree.cloud
    moved = T_current.apply(P_sub.points)
    dist, idx = tree.query(moved)
    n_keep = int(np.floor(trim_ratio * len(dist) + 1e-9))
    if n_keep < MIN_PAIRS:
        raise RegistrationError(f"only {n_keep} associations kept after trimming; need {MIN_PAIRS}")
    kept = np.sort(np.argsort(dist, kind="stable")[:n_keep])
    B, d = point_to_plane_rows(P_sub.points[kept], ref.points[idx[kept]], ref.normals[idx[kept]], T_current)
    return LinearSystem(B, d, B.T @ B, B.sum(axis=0), np.column_stack([kept, idx[kept]]))


def check_conditioning(A: np.ndarray) -> np.ndarray:
    evals = np.linalg.eigvalsh(0.5 * (A + A.T))
    cond = np.inf if evals[0] <= 0 else evals[-1] / evals[0]
    if not cond < MAX_CONDITION:
        raise IllConditionedSystem(evals, cond)
    return evals


def solve_step(system: LinearSystem) -> np.ndarray:
    """Least-squares twist ``A^-1 sum_k B_k^T d_k``."""
    check_conditioning(system.A)
    return np.linalg.solve(system.A, system.B.T @ system.d)


def prepare_reference(Q: PointCloud, T_ini: Pose) -> KDTree:
    if not Q.has_normals:
        Q = estimate_normals(Q, DEFAULT_NORMAL_K)
    return _reference_tree(transform_cloud(Q, se3.inverse(T_ini)))


def register(P: PointCloud, Q: PointCloud, T_ini: Pose, config: IcpConfig = IcpConfig()) -> IcpResult:
    """Estimate ``T_true`` as ``T_ini @ icp(P, T_ini^-1 Q)``.

    Non-convergence within ``max_iterations`` is reported through the
    ``converged`` flag rather than raised.
    """
    tree = prepare_reference(Q, T_ini)
    P_sub = random_subsample(P, config.keep_probability, config.seed)
    T_rel = Pose.identity()
    history = []
    converged = False
    it = 0
    while it < config.max_iterations:
        it += 1
        system = build_linear_system(P_sub, tree, T_rel, config.trim_ratio)
        history.append(system.residual_rms())
        xi = solve_step(system)
        T_rel = se3.compose(T_rel, se3.exp(xi))
        if np.linalg.norm(xi[3:]) < config.trans_converged and np.linalg.norm(xi[:3]) < config.rot_converged:
            converged = True
            break
    system = build_linear_system(P_sub, tree, T_rel, config.trim_ratio)
    history.append(system.residual_rms())
    return IcpResult(
        T_icp=se3.compose(T_ini, T_rel),
        T_rel_hat=T_rel,
        iterations=it,
        converged=converged,
        residual_rms=system.residual_rms(),
        system=system,
        residual_history=history,
    )
