import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icp_uncert import se3
from icp_uncert.covariance import (
    NoiseParams,
    SigmaPointFailure,
    assemble_report,
    bias_term,
    censi_term,
    CovarianceReport,
    estimate,
    ml_fuse,
    sensor_covariance,
    sigma_points,
    unscented_init_term,
)
from icp_uncert.experiments import preset_covariance
from icp_uncert.icp import IllConditionedSystem, LinearSystem, point_to_plane_rows, register
from icp_uncert.scenes import Scene, SensorNoiseSpec, generate_scene
from icp_uncert.se3 import Pose, PoseGaussian


def random_spd(rng, n=6, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T + 0.1 * np.eye(n))


def random_system(rng, K=200):
    return LinearSystem.from_rows(rng.standard_normal((K, 6)), rng.standard_normal(K))


class CountingRegister:
    def __init__(self):
        self.calls = 0

    def __call__(self, *args, **kw):
        self.calls += 1
        return register(*args, **kw)


@pytest.fixture(scope="module")
def corner_pair():
    T = se3.exp([0.02, -0.01, 0.05, 0.1, 0.05, -0.03])
    scene = Scene("room-corner", 2.0, noise=SensorNoiseSpec(0.01, 0.01)).with_points(1500)
    P, Q = generate_scene(scene, T, 0)
    return P, Q, T


# --- sensor term -----------------------------------------------------------


def test_censi_zero_sigma():
    sys = random_system(np.random.default_rng(0))
    np.testing.assert_array_equal(censi_term(sys, 0.0), np.zeros((6, 6)))


def test_censi_diagonal_case():
    c = 4.0
    sys = LinearSystem(np.zeros((0, 6)), np.zeros(0), c * np.eye(6), np.zeros(6), np.zeros((0, 2), int))
    np.testing.assert_allclose(censi_term(sys, 0.2), (0.04 / c) * np.eye(6))


def test_duplicating_rows_halves_censi_term():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((100, 6))
    once = censi_term(LinearSystem.from_rows(B, np.zeros(100)), 0.1)
    twice = censi_term(LinearSystem.from_rows(np.vstack([B, B]), np.zeros(200)), 0.1)
    np.testing.assert_allclose(twice, once / 2, rtol=1e-10)


def test_censi_singular_raises():
    B = np.zeros((20, 6))
    B[:, 0] = 1.0
    with pytest.raises(IllConditionedSystem):
        censi_term(LinearSystem.from_rows(B, np.zeros(20)), 0.1)


def test_bias_term_rank_one():
    sys = random_system(np.random.default_rng(2))
    M = bias_term(sys, 0.05)
    assert np.linalg.matrix_rank(M, tol=1e-12 * np.abs(M).max()) == 1
    np.testing.assert_array_equal(bias_term(sys, 0.0), np.zeros((6, 6)))


def test_bias_term_matches_monte_carlo_over_bias():
    # least-squares solution with every target shifted by one common b
    rng = np.random.default_rng(3)
    sys = LinearSystem.from_rows(rng.standard_normal((80, 6)) + 0.5, np.zeros(80))
    sigma = 0.05
    bs = rng.standard_normal(20_000) * sigma
    g = np.linalg.solve(sys.A, sys.Bsum)
    sols = bs[:, None] * g[None]
    np.testing.assert_allclose(np.cov(sols.T), bias_term(sys, sigma), rtol=0.05, atol=1e-12)


def test_opposing_planes_cancel_translation_bias():
    # floor and ceiling seen with equal point sets: the normals sum to zero
    rng = np.random.default_rng(4)
    xy = rng.uniform(-1, 1, (300, 2))
    floor = np.column_stack([xy, -np.ones(300)])
    ceiling = np.column_stack([xy, np.ones(300)])
    pts = np.vstack([floor, ceiling])
    nrm = np.vstack([np.tile([0, 0, 1.0], (300, 1)), np.tile([0, 0, -1.0], (300, 1))])
    B, d = point_to_plane_rows(pts, pts, nrm, Pose.identity())
    Bsum = LinearSystem.from_rows(B, d).Bsum
    np.testing.assert_allclose(Bsum[3:], 0.0, atol=1e-12)


def test_sensor_covariance_is_sum():
    sys = random_system(np.random.default_rng(5))
    noise = NoiseParams(0.03, 0.04)
    np.testing.assert_allclose(sensor_covariance(sys, noise), censi_term(sys, 0.03) + bias_term(sys, 0.04))


def test_censi_matches_monte_carlo_over_white_noise():
    rng = np.random.default_rng(6)
    B = rng.standard_normal((60, 6))
    sys = LinearSystem.from_rows(B, np.zeros(60))
    sols = np.array([np.linalg.solve(sys.A, B.T @ (rng.standard_normal(60) * 0.1)) for _ in range(20_000)])
    np.testing.assert_allclose(np.cov(sols.T), censi_term(sys, 0.1), rtol=0.06, atol=2e-5)


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(-0.1, 0.0)


def test_bias_dominates_on_dense_single_sided_scene():
    scene = Scene("room-corner", 2.0, noise=SensorNoiseSpec(0.05, 0.05)).with_points(16_000)
    T = se3.exp([0.02, -0.01, 0.05, 0.1, 0.05, -0.03])
    P, Q = generate_scene(scene, T, 0)
    sys = register(P, Q, T).system
    assert sys.K >= 10_000
    assert np.trace(bias_term(sys, 0.05)) >= 10 * np.trace(censi_term(sys, 0.05))


def test_corridor_covariance_points_along_axis():
    scene = Scene("corridor", 2.0, noise=SensorNoiseSpec(0.01, 0.0)).with_points(3000)
    P, Q = generate_scene(scene, Pose.identity(), 1)
    sys = register(P, Q, Pose.identity()).system
    C = censi_term(sys, 0.01)
    w, V = np.linalg.eigh(C[3:, 3:])
    assert abs(V[0, -1]) > 0.99


# --- sigma points ----------------------------------------------------------


def test_sigma_points_are_antisymmetric_and_twelve():
    Q = random_spd(np.random.default_rng(7))
    xs = sigma_points(Q)
    assert xs.shape == (12, 6)
    np.testing.assert_array_equal(xs[6:], -xs[:6])


def test_sigma_points_reproduce_covariance():
    Q = random_spd(np.random.default_rng(8))
    xs = sigma_points(Q)
    np.testing.assert_allclose(xs.T @ xs / 12, Q, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_sigma_point_symmetry_property(seed):
    xs = sigma_points(random_spd(np.random.default_rng(seed), scale=0.01))
    np.testing.assert_array_equal(xs[:6] + xs[6:], np.zeros((6, 6)))


def test_exactly_twelve_extra_registrations(corner_pair):
    P, Q, T = corner_pair
    counter = CountingRegister()
    estimate(P, Q, T, preset_covariance("easy"), register_fn=counter, workers=1)
    assert counter.calls == 1 + 12


def test_sigma_point_failure_names_index(corner_pair):
    P, Q, T = corner_pair
    calls = []

    def flaky(P, Q, T_ini, config):
        calls.append(1)
        if len(calls) == 4:
            raise RuntimeError("boom")
        return register(P, Q, T_ini, config)

    with pytest.raises(SigmaPointFailure) as info:
        unscented_init_term(P, Q, T, preset_covariance("easy"), T, register_fn=flaky, workers=1)
    assert info.value.index == 3


def test_unscented_with_linear_response_recovers_jacobian(corner_pair):
    # fake ICP that leaves a known linear part of the initialization error
    P, Q, T = corner_pair
    M = np.diag([0.2, 0.0, 0.5, 1.0, 0.3, 0.0])
    base = T

    class Result:
        def __init__(self, pose):
            self.T_icp = pose

    def linear(P, Q, T_ini, config):
        xi = se3.between(base, T_ini)
        return Result(base @ se3.exp(M @ xi))

    Q_ini = np.diag([1e-6, 2e-6, 1e-6, 1e-4, 2e-4, 1e-4])
    ut = unscented_init_term(P, Q, base, Q_ini, base, register_fn=linear, workers=1)
    np.testing.assert_allclose(ut.J, np.eye(6) - M, atol=1e-6)
    np.testing.assert_allclose(ut.Q_init_term, M @ Q_ini @ M.T, rtol=1e-5, atol=1e-15)


def test_tiny_q_ini_collapses_init_term(corner_pair):
    P, Q, T = corner_pair
    base = register(P, Q, T)
    ut = unscented_init_term(P, Q, T, 1e-10 * np.eye(6), base.T_icp, workers=1)
    assert np.trace(ut.Q_init_term) < 1e-12


def test_room_corner_jacobian_near_identity(corner_pair):
    P, Q, T = corner_pair
    Q_ini = preset_covariance("easy")
    rep = estimate(P, Q, se3.sample_concentrated(PoseGaussian(T, Q_ini), 1), Q_ini, workers=1)
    assert np.linalg.norm(rep.J - np.eye(6)) < 0.3
    assert np.trace(rep.Q_init_term) < 0.05 * np.trace(Q_ini)


def test_init_term_scales_with_q_ini_for_linear_response(corner_pair):
    P, Q, T = corner_pair
    M = np.array([[0.1, 0.2, 0, 0, 0, 0]] * 3 + [[0, 0, 0, 1.0, 0.1, 0]] * 3)

    class Result:
        def __init__(self, pose):
            self.T_icp = pose

    def linear(P, Q, T_ini, config):
        return Result(T @ se3.exp(M @ se3.between(T, T_ini)))

    Q_ini = preset_covariance("easy") * 1e-2
    small = unscented_init_term(P, Q, T, Q_ini, T, register_fn=linear, workers=1).Q_init_term
    for s in (2.0, 3.0):
        big = unscented_init_term(P, Q, T, s**2 * Q_ini, T, register_fn=linear, workers=1).Q_init_term
        np.testing.assert_allclose(big, s**2 * small, rtol=0.1, atol=1e-12)


# --- report assembly -------------------------------------------------------


def test_report_blocks(corner_pair):
    P, Q, T = corner_pair
    Q_ini = preset_covariance("easy")
    rep = estimate(P, Q, T, Q_ini, noise=NoiseParams(0.01, 0.01), workers=1)
    np.testing.assert_array_equal(rep.Q_icp, rep.Q_init_term + rep.Q_sensor_term)
    np.testing.assert_allclose(rep.Q_joint[:6, :6], Q_ini)
    np.testing.assert_allclose(rep.Q_joint[6:, 6:], rep.Q_icp)
    np.testing.assert_array_equal(rep.Q_joint[:6, 6:], rep.Q_joint[6:, :6].T)
    assert np.linalg.eigvalsh(rep.Q_joint).min() > -1e-9
    assert np.linalg.eigvalsh(rep.Q_icp).min() > -1e-9


def test_forced_identity_jacobian_zeroes_cross_blocks():
    rng = np.random.default_rng(9)
    rep = assemble_report(np.eye(6), random_spd(rng), np.zeros((6, 6)), random_spd(rng, scale=0.01))
    np.testing.assert_array_equal(rep.Q_joint[:6, 6:], np.zeros((6, 6)))


def test_report_dict_roundtrip():
    rng = np.random.default_rng(10)
    rep = assemble_report(0.5 * np.eye(6), random_spd(rng), random_spd(rng, scale=0.1), random_spd(rng, scale=0.01), np.ones(6), se3.exp(np.ones(6) * 0.1))
    back = CovarianceReport.from_dict(rep.to_dict())
    np.testing.assert_array_equal(back.Q_joint, rep.Q_joint)
    np.testing.assert_array_equal(back.T_icp.matrix(), rep.T_icp.matrix())


# --- fusion ----------------------------------------------------------------


def two_block_gls(Q_joint, z):
    # independent oracle: eliminate through an explicit block inverse
    W = np.linalg.inv(Q_joint)
    info = W[:6, :6] + W[:6, 6:] + W[6:, :6] + W[6:, 6:]
    rhs = (W[:6, :6] + W[6:, :6]) @ z[:6] + (W[:6, 6:] + W[6:, 6:]) @ z[6:]
    cov = np.linalg.inv(info)
    return cov @ rhs, cov


def test_identity_jacobian_reduces_to_information_sum():
    rng = np.random.default_rng(11)
    for _ in range(100):
        Q_ini = random_spd(rng, scale=0.01)
        Q_icp = random_spd(rng, scale=0.001)
        rep = assemble_report(np.eye(6), Q_ini, np.zeros((6, 6)), Q_icp)
        g = ml_fuse(Pose.identity(), Pose.identity(), rep)
        expected = np.linalg.inv(Q_ini) + np.linalg.inv(Q_icp)
        np.testing.assert_allclose(np.linalg.inv(g.cov), expected, rtol=1e-9, atol=1e-9 * np.abs(expected).max())


def test_zero_jacobian_returns_prior_covariance():
    rng = np.random.default_rng(12)
    for _ in range(100):
        Q_ini = random_spd(rng, scale=0.01)
        Q_sensor = random_spd(rng, scale=1e-4)
        rep = assemble_report(np.zeros((6, 6)), Q_ini, Q_ini, Q_sensor)
        g = ml_fuse(Pose.identity(), Pose.identity(), rep)
        np.testing.assert_allclose(g.cov, Q_ini, rtol=1e-6, atol=1e-6 * np.abs(Q_ini).max())


def test_fusion_matches_block_oracle():
    rng = np.random.default_rng(13)
    Q_ini = random_spd(rng, scale=0.01)
    J = 0.5 * np.eye(6) + 0.05 * rng.standard_normal((6, 6))
    Q_init = (np.eye(6) - J) @ Q_ini @ (np.eye(6) - J).T
    rep = assemble_report(J, Q_ini, Q_init, random_spd(rng, scale=1e-3))
    T_icp = se3.exp(rng.standard_normal(6) * 0.3)
    T_ini = T_icp @ se3.exp(rng.standard_normal(6) * 0.05)
    g = ml_fuse(T_ini, T_icp, rep)
    z = np.concatenate([se3.between(T_icp, T_ini), np.zeros(6)])
    xi, cov = two_block_gls(rep.Q_joint, z)
    np.testing.assert_allclose(g.cov, cov, rtol=1e-8, atol=1e-14)
    np.testing.assert_allclose(g.mean.matrix(), (T_icp @ se3.exp(xi)).matrix(), atol=1e-10)


def test_dominant_prior_limit():
    rng = np.random.default_rng(14)
    Q_ini = random_spd(rng, scale=1e-6)
    rep = assemble_report(np.eye(6), Q_ini, np.zeros((6, 6)), 1e6 * np.eye(6))
    T_icp = Pose.identity()
    T_ini = se3.exp([0.01, 0, 0, 0.1, 0, 0])
    g = ml_fuse(T_ini, T_icp, rep)
    np.testing.assert_allclose(g.mean.matrix(), T_ini.matrix(), atol=1e-8)
    np.testing.assert_allclose(g.cov, Q_ini, rtol=1e-6)


def test_independent_fusion_drops_cross_terms():
    rng = np.random.default_rng(15)
    Q_ini = random_spd(rng, scale=0.01)
    Q_sensor = random_spd(rng, scale=1e-3)
    rep = assemble_report(0.3 * np.eye(6), Q_ini, 0.49 * Q_ini, Q_sensor)
    g = ml_fuse(Pose.identity(), Pose.identity(), rep, cross_terms=False)
    expected = np.linalg.inv(np.linalg.inv(Q_ini) + np.linalg.inv(rep.Q_icp))
    np.testing.assert_allclose(g.cov, expected, rtol=1e-9)
