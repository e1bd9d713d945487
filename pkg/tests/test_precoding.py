import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from core.exceptions import (
    DegenerateUserError,
    InfeasibleDimensionError,
    NullSpaceExhaustedError,
    UnreachableUserError,
)
from core.matrix_core import hermitian_eig
from data.channel import complex_normal
from models.precoding import (
    Method,
    dominant_beam,
    emrt_typeC,
    emrt_typeS,
    ezf_typeC,
    ezf_typeS,
    mrt_baseline,
    sbm_precoders,
    statistical_null_basis,
    zf_baseline,
)
from tests.helpers import separated_types_covariances, steering_covariance


def quad(w, phi):
    return float(np.real(np.vdot(w, phi @ w)))


def test_method_names():
    assert [str(m) for m in Method] == ["ZF", "MRT", "SBM", "eZF", "eMRT"]
    assert Method("eZF") is Method.EZF
    assert Method.ZF.is_baseline and not Method.EMRT.is_baseline


def test_mrt_known_values():
    assert_allclose(mrt_baseline(np.array([[1.0], [0.0]]), 1.0), [[1.0], [0.0]])
    assert_allclose(mrt_baseline(np.array([[3.0], [4.0]]), 4.0), [[1.2], [1.6]])


def test_mrt_unit_columns(rng):
    W = mrt_baseline(complex_normal(rng, (16, 4)), 2.0)
    assert_allclose(np.linalg.norm(W, axis=0) ** 2, 2.0)


def test_mrt_rejects_zero_channel():
    with pytest.raises(DegenerateUserError):
        mrt_baseline(np.zeros((4, 1)), 1.0)


def test_zf_known_values(rng):
    assert_allclose(zf_baseline(np.eye(2), 1.0), np.eye(2), atol=1e-12)
    G = complex_normal(rng, (12, 4))
    assert_allclose(G.conj().T @ zf_baseline(G, 3.0), np.sqrt(3.0) * np.eye(4), atol=1e-10)


def test_sbm_beams_follow_top_eigenvector():
    phi = np.diag([3.0, 1.0])
    w = sbm_precoders(np.zeros((2, 0)), [phi], 2.0).w_s[:, 0]
    assert_allclose(w, [np.sqrt(2.0), 0.0], atol=1e-12)


def test_sbm_rank_one(rng):
    u = np.exp(1j * np.arange(5) * 0.3) / np.sqrt(5)
    precoders = sbm_precoders(complex_normal(rng, (5, 2)), [5 * np.outer(u, u.conj())], 1.0)
    assert abs(abs(np.vdot(u, precoders.w_s[:, 0])) - 1.0) < 1e-10
    assert precoders.matrix.shape == (5, 3)


def test_dominant_beam_rejects_zero():
    with pytest.raises(UnreachableUserError):
        dominant_beam(np.zeros((3, 3)))


def test_null_basis_without_type_s():
    basis, rank = statistical_null_basis([], 4)
    assert rank == 0
    assert_allclose(basis, np.eye(4))


def test_ezf_reduces_to_zf_without_type_s(rng):
    G = complex_normal(rng, (16, 4))
    assert_allclose(ezf_typeC(G, [], 2.0), zf_baseline(G, 2.0), atol=1e-9)


def test_ezf_orthogonal_supports(rng):
    M = 8
    phi_s = np.zeros((M, M))
    phi_s[0, 0] = M
    G = np.vstack([np.zeros((1, 3)), complex_normal(rng, (M - 1, 3))])
    W = ezf_typeC(G, [phi_s], 1.0)
    assert_allclose(W[0], 0.0, atol=1e-12)
    assert_allclose(W, zf_baseline(G, 1.0), atol=1e-9)


def test_ezf_typeC_constraints(rng):
    M, K, rho = 64, 4, 5.0
    phi_s = separated_types_covariances(rng, M, 2)
    G = complex_normal(rng, (M, K))
    W = ezf_typeC(G, phi_s, rho)
    assert np.max(np.abs(G.conj().T @ W - np.sqrt(rho) * np.eye(K))) < 1e-8
    scale = hermitian_eig(np.sum(phi_s, axis=0)).values[0]
    for phi in phi_s:
        for k in range(K):
            assert quad(W[:, k], phi) < 1e-8 * scale * np.linalg.norm(W[:, k]) ** 2


def test_ezf_typeC_infeasible(rng):
    M = 6
    G = complex_normal(rng, (M, 3))
    phi_s = complex_normal(rng, (M, 4))
    with pytest.raises(InfeasibleDimensionError):
        ezf_typeC(G, [phi_s @ phi_s.conj().T], 1.0)
    full = complex_normal(rng, (M, M))
    with pytest.raises(NullSpaceExhaustedError):
        ezf_typeC(G, [full @ full.conj().T], 1.0)


def test_ezf_typeS_single_user_without_typec():
    phi = np.diag([4.0, 1.0, 0.0])
    w = ezf_typeS(np.zeros((3, 0)), [phi], 0, 2.0)
    assert_allclose(w, [np.sqrt(2.0 / 4.0), 0.0, 0.0], atol=1e-12)


def test_ezf_typeS_constraints(rng):
    M, K, rho = 64, 3, 4.0
    phi_s = separated_types_covariances(rng, M, 3)
    G = complex_normal(rng, (M, K))
    for n, phi_n in enumerate(phi_s):
        w = ezf_typeS(G, phi_s, n, rho)
        assert quad(w, phi_n) == pytest.approx(rho, rel=1e-10)
        Q = G @ G.conj().T + sum(phi for i, phi in enumerate(phi_s) if i != n)
        assert quad(w, Q) < 1e-8 * hermitian_eig(Q).values[0] * np.linalg.norm(w) ** 2


def test_ezf_typeS_rejects_full_rank_q(rng):
    M = 4
    G = complex_normal(rng, (M, M))
    with pytest.raises(NullSpaceExhaustedError):
        ezf_typeS(G, [np.eye(M)], 0, 1.0)


def test_ezf_typeS_unreachable_user(rng):
    M = 8
    shared = steering_covariance(rng, M, 60.0, L=2)
    G = complex_normal(rng, (M, 2))
    with pytest.raises(UnreachableUserError):
        ezf_typeS(G, [shared, shared], 0, 1.0)


def test_ezf_scale_equivariance(rng):
    M = 32
    phi_s = separated_types_covariances(rng, M, 2)
    G = complex_normal(rng, (M, 3))
    assert_allclose(ezf_typeC(2.5 * G, phi_s, 1.0), ezf_typeC(G, phi_s, 1.0) / 2.5, atol=1e-10)


def test_emrt_reduces_to_mrt_without_type_s(rng):
    G = complex_normal(rng, (16, 4))
    assert_allclose(emrt_typeC(G, [], 3.0), mrt_baseline(G, 3.0), atol=1e-9)


def test_emrt_typeC_constraints(rng):
    M, K, p_d = 64, 4, 3.0
    phi_s = separated_types_covariances(rng, M, 2)
    G = complex_normal(rng, (M, K))
    W = emrt_typeC(G, phi_s, p_d)
    assert_allclose(np.linalg.norm(W, axis=0) ** 2, p_d, rtol=1e-10)
    scale = hermitian_eig(np.sum(phi_s, axis=0)).values[0]
    for phi in phi_s:
        for k in range(K):
            assert quad(W[:, k], phi) < 1e-8 * p_d * scale
    basis, r1 = statistical_null_basis(phi_s, M)
    null = basis[:, r1:]
    for k in range(K):
        projected = null.conj().T @ G[:, k]
        assert abs(np.vdot(G[:, k], W[:, k])) ** 2 == pytest.approx(p_d * np.linalg.norm(projected) ** 2, rel=1e-9)
        assert abs(np.vdot(G[:, k], W[:, k])) ** 2 <= p_d * np.linalg.norm(G[:, k]) ** 2 * (1 + 1e-12)


def test_emrt_typeC_degenerate_user(rng):
    M = 6
    phi_s = np.diag([1.0, 1.0, 0, 0, 0, 0])
    G = np.zeros((M, 1), dtype=complex)
    G[0, 0] = 1.0
    with pytest.raises(DegenerateUserError):
        emrt_typeC(G, [phi_s], 1.0)


def test_emrt_typeS_matches_sbm_without_typec(rng):
    phi = steering_covariance(rng, 16, 70.0)
    w = emrt_typeS(np.zeros((16, 0)), phi, 2.0)
    reference = sbm_precoders(np.zeros((16, 0)), [phi], 2.0).w_s[:, 0]
    assert_allclose(w, reference, atol=1e-9)


def test_emrt_typeS_unreachable_inside_typec_span(rng):
    M, K = 8, 3
    G = complex_normal(rng, (M, K))
    g = G @ complex_normal(rng, (K,))
    with pytest.raises(UnreachableUserError):
        emrt_typeS(G, np.outer(g, g.conj()), 1.0)


def test_emrt_typeS_matches_sbm_under_roundoff(rng):
    M = 24
    phi = steering_covariance(rng, M, 45.0)
    Q, _ = np.linalg.qr(complex_normal(rng, (M, M)))
    rotated = Q.conj().T @ (Q @ phi @ Q.conj().T) @ Q
    w = emrt_typeS(np.zeros((M, 0)), rotated, 1.5)
    reference = sbm_precoders(np.zeros((M, 0)), [phi], 1.5).w_s[:, 0]
    assert_allclose(w, reference, atol=1e-8)


def test_emrt_typeS_constraints(rng):
    M, K, p_d = 32, 4, 2.0
    phi = steering_covariance(rng, M, 110.0)
    G = complex_normal(rng, (M, K))
    w = emrt_typeS(G, phi, p_d)
    assert np.linalg.norm(w) ** 2 == pytest.approx(p_d, rel=1e-10)
    assert np.max(np.abs(G.conj().T @ w)) < 1e-8 * np.sqrt(p_d) * np.linalg.norm(G, 2)
    assert quad(w, phi) <= p_d * hermitian_eig(phi).values[0] * (1 + 1e-10)


def test_emrt_typeS_rejects_full_typec(rng):
    with pytest.raises(NullSpaceExhaustedError):
        emrt_typeS(complex_normal(rng, (4, 4)), np.eye(4), 1.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), K=st.integers(1, 6))
def test_emrt_never_beats_mrt_on_the_estimate(seed, K):
    rng = np.random.default_rng(seed)
    M = 48
    phi_s = separated_types_covariances(rng, M, 2)
    G = complex_normal(rng, (M, K))
    extended = np.abs(np.sum(G.conj() * emrt_typeC(G, phi_s, 1.0), axis=0)) ** 2
    plain = np.abs(np.sum(G.conj() * mrt_baseline(G, 1.0), axis=0)) ** 2
    assert np.all(extended <= plain * (1 + 1e-10))
