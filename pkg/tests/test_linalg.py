import numpy as np
import pytest

from helpers import central_fd_grad, rel_err, series_expm
from kflow import ndcore as nd
from kflow.linalg import EigenPairs, eig, evolve, expm, sort_eigenpairs
from kflow.ndcore import ContractViolation, NumericalError, Tensor


def test_expm_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_expm_diagonal():
    E = expm(np.diag([1.0, -1.0]))
    assert E[0, 0] == pytest.approx(2.718281828459045, abs=1e-12)
    assert E[1, 1] == pytest.approx(0.36787944117144233, abs=1e-12)
    assert abs(E[0, 1]) < 1e-15 and abs(E[1, 0]) < 1e-15


def test_expm_rotation_quarter_turn():
    A = np.array([[0.0, -np.pi / 2.0], [np.pi / 2.0, 0.0]])
    assert np.abs(expm(A) - np.array([[0.0, -1.0], [1.0, 0.0]])).max() <= 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_expm_matches_series_oracle(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((8, 8))
    A *= 5.0 / np.abs(A).sum(axis=0).max()
    E = expm(A)
    O = series_expm(A)
    assert np.linalg.norm(E - O) <= 1e-10 * np.linalg.norm(O)


def test_expm_inverse_identity():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((6, 6))
    A *= 10.0 / np.abs(A).sum(axis=0).max()
    P = expm(A) @ expm(-A)
    assert np.abs(P - np.eye(6)).max() <= 1e-9


def test_expm_determinant_is_exp_trace():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 5))
    det = np.linalg.det(expm(A))  # LU-based determinant
    assert det == pytest.approx(np.exp(np.trace(A)), rel=1e-8)


def test_expm_overflow_guard():
    with pytest.raises(NumericalError):
        expm(np.eye(3) * 1e4)


def test_expm_rejects_nonsquare_and_nan():
    with pytest.raises(ContractViolation):
        expm(np.zeros((2, 3)))
    with pytest.raises(ContractViolation):
        expm(np.array([[np.nan, 0.0], [0.0, 0.0]]))


def test_expm_differentiable_matches_fd():
    rng = np.random.default_rng(9)
    A = Tensor(rng.standard_normal((4, 4)) * 0.5)
    W = rng.standard_normal((4, 4))

    def loss(ps):
        return nd.tsum(nd.square(expm(ps[0]) - Tensor(W)))

    (g,) = nd.grad(loss, [A])
    coords = [(0, i) for i in range(16)]
    fd = central_fd_grad(lambda ps: loss(ps).item(), [A], coords)
    assert rel_err(g.data.ravel(), fd, floor=1e-6).max() <= 1e-6


def test_eig_diagonal():
    pairs = sort_eigenpairs(eig(np.diag([2.0, 3.0])))
    assert np.allclose(pairs.values, [3.0, 2.0])
    # unit basis vectors up to sign
    assert np.allclose(np.abs(pairs.vectors), np.eye(2)[:, ::-1], atol=1e-12)


def test_eig_rotation_conjugate_pair():
    pairs = eig(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert sorted(np.round(v.imag, 12) for v in pairs.values) == [-1.0, 1.0]
    assert np.abs(pairs.values.real).max() <= 1e-12


def test_eig_reconstruction():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((8, 8))
    pairs = eig(A)
    R = pairs.vectors @ np.diag(pairs.values) @ np.linalg.inv(pairs.vectors)
    assert np.linalg.norm(R.real - A, "fro") <= 1e-7 * np.linalg.norm(A, "fro")
    assert np.abs(R.imag).max() <= 1e-8


def test_eig_symmetric_real_spectrum():
    rng = np.random.default_rng(10)
    S = rng.standard_normal((7, 7))
    S = S + S.T
    pairs = eig(S)
    assert np.abs(pairs.values.imag).max() <= 1e-10


def test_eig_residual_invariant():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((12, 12))
    pairs = eig(A)
    res = np.linalg.norm(A @ pairs.vectors - pairs.vectors * pairs.values[None, :], axis=0)
    assert res.max() <= 1e-8 * np.linalg.norm(A)


def test_sort_eigenpairs_ordering():
    # descending real part; equal real parts by descending imaginary, then index
    values = np.array([1.0 + 0.0j, 1.0 + 2.0j, 1.0 - 2.0j, 3.0 + 0.0j, -1.0 + 0.0j])
    vectors = np.eye(5, dtype=complex)
    pairs = sort_eigenpairs(EigenPairs(values=values, vectors=vectors))
    assert pairs.sorted
    assert np.array_equal(pairs.values, np.array([3.0, 1.0 + 2.0j, 1.0, 1.0 - 2.0j, -1.0]))
    # columns follow their eigenvalues
    assert np.array_equal(pairs.vectors[:, 0], np.eye(5, dtype=complex)[:, 3])


def test_sort_eigenpairs_index_tiebreak_is_stable():
    values = np.array([2.0 + 0.0j, 2.0 + 0.0j, 5.0 + 0.0j])
    vectors = np.diag([10.0, 20.0, 30.0]).astype(complex)
    pairs = sort_eigenpairs(EigenPairs(values=values, vectors=vectors))
    assert np.array_equal(pairs.vectors[0, :], np.array([0.0, 10.0, 0.0], dtype=complex))
    assert np.array_equal(pairs.vectors[1, :], np.array([0.0, 0.0, 20.0], dtype=complex))


def test_evolve_identity_cases():
    rng = np.random.default_rng(12)
    L = rng.standard_normal((4, 4))
    z = rng.standard_normal((6, 4))
    assert np.array_equal(evolve(L, z, 0.0), z)
    assert np.array_equal(evolve(np.zeros((4, 4)), z, 0.7), z)


def test_evolve_semigroup():
    rng = np.random.default_rng(13)
    L = rng.standard_normal((5, 5))
    z = rng.standard_normal((3, 5))
    two_hops = evolve(L, evolve(L, z, 0.3), 0.7)
    one_hop = evolve(L, z, 1.0)
    assert np.abs(two_hops - one_hop).max() <= 1e-9


def test_evolve_time_contract():
    with pytest.raises(ContractViolation):
        evolve(np.zeros((2, 2)), np.zeros((1, 2)), -0.1)
    with pytest.raises(ContractViolation):
        evolve(np.zeros((2, 2)), np.zeros((1, 2)), 1.5)
