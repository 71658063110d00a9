import numpy as np
import pytest

from sigmaflow.core.symfunc import (
    DeletionIndexSet,
    Spectrum,
    convexity_form,
    deletion_matrix,
    deletion_matrix_from_subsets,
    elem_sym,
    elem_sym_all,
    elem_sym_deleted,
    fd_gradient,
    fd_hessian,
    grad_inverse_sigma,
    hessian_inverse_sigma,
)
from sigmaflow.core.operators import OperatorSpec
from sigmaflow.core.validators import DomainError


@pytest.mark.parametrize(
    "k, lam, expected",
    [(0, (7, 3), 1.0), (2, (1, 2, 3), 11.0), (3, (1, 1, 1), 1.0), (-1, (2, 5), 0.0)],
)
def test_elem_sym_values(k, lam, expected):
    assert elem_sym(k, lam) == pytest.approx(expected)


def test_elem_sym_rejects_degree_out_of_range():
    with pytest.raises(DomainError):
        elem_sym(3, (1, 2))
    with pytest.raises(DomainError):
        elem_sym(-2, (1, 2))


def test_elem_sym_recursion_matches_enumeration_above_twelve(rng):
    lam = rng.uniform(0.5, 1.5, 14)
    coeffs = np.poly(-lam)
    for k in (1, 5, 14):
        assert elem_sym(k, lam) == pytest.approx(coeffs[k], rel=1e-12)


def test_elem_sym_all_is_batched():
    out = elem_sym_all([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(out, [[1, 3, 2], [1, 7, 12]])


def test_deleted_values():
    assert elem_sym_deleted(2, [1], (1, 2, 3)) == pytest.approx(6.0)
    assert elem_sym_deleted(2, DeletionIndexSet((1,)), (1, 2, 3)) == pytest.approx(6.0)
    assert elem_sym_deleted(2, [1, 1], (1, 2, 3)) == 0.0
    assert elem_sym_deleted(-1, [2], (1, 2, 3)) == 0.0


def test_deletion_set_rejects_duplicates_and_range():
    with pytest.raises(DomainError):
        DeletionIndexSet((2, 2))
    with pytest.raises(DomainError):
        elem_sym_deleted(1, [4], (1, 2, 3))


def test_deletion_identity(rng):
    for n in range(1, 9):
        lam = rng.uniform(0.2, 5.0, n)
        for l in range(n):
            total = sum(elem_sym_deleted(l, [i], lam) for i in range(1, n + 1))
            assert total == pytest.approx((n - l) * elem_sym(l, lam), rel=1e-12)


def test_spectrum_type():
    s = Spectrum.of(2.0, 4.0)
    assert s.n == 2 and s.is_positive()
    assert s.inverse().values == (0.5, 0.25)
    with pytest.raises(DomainError):
        Spectrum(())


def test_gradient_examples():
    np.testing.assert_allclose(grad_inverse_sigma(1, (1, 1, 1)), -np.eye(3))
    np.testing.assert_allclose(grad_inverse_sigma(2, (2, 2)), -np.eye(2) / 8)


def test_gradient_rejects_nonpositive():
    with pytest.raises(DomainError):
        grad_inverse_sigma(1, (1.0, 0.0))


def test_hessian_examples():
    H = hessian_inverse_sigma(1, (1, 1))
    assert H.entry(0, 0, 0, 0) == pytest.approx(2.0)
    # S_{2;1,2}(1,1,1) vanishes for k = 1; the unit value belongs to k = 2
    assert hessian_inverse_sigma(1, (1, 1, 1)).entry(0, 0, 1, 1) == pytest.approx(0.0)
    assert hessian_inverse_sigma(2, (1, 1, 1)).entry(0, 0, 1, 1) == pytest.approx(1.0)
    H3 = hessian_inverse_sigma(2, (1.0, 2.0, 3.0))
    assert H3.entry(0, 1, 0, 2) == 0.0
    dense = H3.dense()
    assert dense[0, 1, 1, 0] == pytest.approx(H3.swap_pairs[0, 1])
    assert dense[0, 1, 0, 1] == 0.0


def test_derivatives_match_finite_differences(rng):
    for _ in range(20):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, n + 1))
        lam = rng.uniform(0.5, 2.0, n)
        approx = fd_gradient(k, lam)
        exact = grad_inverse_sigma(k, lam)
        assert np.linalg.norm(exact - approx) / np.linalg.norm(approx) < 1e-6
        F = fd_hessian(k, lam)
        H = hessian_inverse_sigma(k, lam)
        scale = max(np.max(np.abs(F.diag_pairs)), np.max(np.abs(F.swap_pairs)))
        assert np.max(np.abs(H.diag_pairs - F.diag_pairs)) / scale < 1e-4
        assert np.max(np.abs(H.swap_pairs - F.swap_pairs)) / scale < 1e-4


def test_convexity_form_examples():
    spec = OperatorSpec.j_operator(2)
    assert convexity_form(spec, (1, 1), np.zeros((2, 2))) == 0.0
    B = np.zeros((2, 2))
    B[0, 0] = 1.0
    assert convexity_form(spec, (1, 1), B) == pytest.approx(1.0)
    pair = (B, np.zeros((2, 2)))
    assert convexity_form(spec, (1, 1), pair) == pytest.approx(1.0)


def test_convexity_form_rejects_non_hermitian():
    with pytest.raises(DomainError):
        convexity_form([1.0, 0.0], (1, 1), np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_convexity_form_nonnegative_for_pure_weights(rng):
    for _ in range(300):
        n = int(rng.integers(2, 5))
        lam = np.exp(rng.uniform(np.log(0.1), np.log(10.0), n))
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        B = 0.5 * (X + X.conj().T)
        assert convexity_form(rng.uniform(0, 1, n), lam, B) >= -1e-10 * max(1.0, 1.0 / lam.min() ** (n + 2))


def test_deletion_matrix_decomposition(rng):
    for n in (2, 3, 4):
        lam = rng.uniform(0.2, 5.0, n)
        for k in range(1, n + 1):
            M = deletion_matrix(k, lam)
            np.testing.assert_allclose(M, deletion_matrix_from_subsets(k, lam), atol=1e-12)
            assert np.linalg.eigvalsh(M).min() >= -1e-10
