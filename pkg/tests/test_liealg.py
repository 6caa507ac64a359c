from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebelab.errors import DomainError
from ebelab.liealg import (build_lie_context, cartan_inverse, cartan_matrix, casimir_apply,
                           casimir_matrix, casimir_spectrum, commutator, from_coords,
                           hermitian_basis, indicial_roots, to_coords)

ranks = st.integers(min_value=1, max_value=8)


def test_cartan_rank_two():
    assert cartan_matrix(2).tolist() == [[2, -1], [-1, 2]]


def test_cartan_inverse_entry_rank_three():
    assert cartan_inverse(3)[0][1] == Fraction(1, 2)


def test_weights_rank_three():
    assert build_lie_context(3).weights == (3, 4, 3)


def test_rank_one_triple():
    ctx = build_lie_context(1)
    assert np.array_equal(ctx.sl2_zero, np.diag([1, -1]))
    assert np.array_equal(ctx.sl2_plus, [[0, 1], [0, 0]])


@pytest.mark.parametrize("n", [0, 9, -1, 2.5, True])
def test_rank_out_of_range(n):
    with pytest.raises(DomainError):
        build_lie_context(n)


@given(ranks)
def test_cartan_inverse_exact(n):
    a, ai = cartan_matrix(n), cartan_inverse(n)
    for i in range(n):
        for j in range(n):
            assert sum(int(a[i, k]) * ai[k][j] for k in range(n)) == (1 if i == j else 0)


@given(ranks)
def test_weights_from_inverse(n):
    ctx = build_lie_context(n)
    for i, b in enumerate(ctx.weights, start=1):
        assert b == i * (n + 1 - i)
        assert 2 * sum(ctx.cartan_inv[i - 1]) == b


@given(ranks)
def test_chevalley_relations_exact(n):
    ctx = build_lie_context(n)
    a = ctx.cartan
    for i in range(n):
        for j in range(n):
            want = ctx.h_basis[j] if i == j else np.zeros_like(ctx.h_basis[j])
            assert np.array_equal(commutator(ctx.e_plus[i], ctx.e_minus[j]), want)
            assert not commutator(ctx.h_basis[i], ctx.h_basis[j]).any()
            assert np.array_equal(commutator(ctx.h_basis[i], ctx.e_plus[j]),
                                  a[i, j] * ctx.e_plus[j])
            assert np.array_equal(commutator(ctx.h_basis[i], ctx.e_minus[j]),
                                  -a[i, j] * ctx.e_minus[j])


@given(ranks)
def test_principal_triple(n):
    ctx = build_lie_context(n)
    ep, e0, em = ctx.sl2_plus, ctx.sl2_zero, ctx.sl2_minus
    scale = max(1.0, np.abs(ep).max() ** 2)
    assert np.abs(commutator(ep, em) - e0).max() <= 1e-12 * scale
    assert np.abs(commutator(e0, ep) - 2 * ep).max() <= 1e-12 * scale
    assert np.abs(commutator(e0, em) + 2 * em).max() <= 1e-12 * scale
    assert np.array_equal(np.diag(e0), np.arange(n, -n - 1, -2))


def test_casimir_on_cartan_rank_one():
    ctx = build_lie_context(1)
    h = np.asarray(ctx.h_basis[0], dtype=complex)
    assert np.allclose(casimir_apply(ctx, h), 2 * h, atol=1e-14)


def test_casimir_zero():
    ctx = build_lie_context(3)
    assert not np.any(casimir_apply(ctx, np.zeros((4, 4), complex)))


def test_casimir_spectrum_sl3():
    evals, _ = casimir_spectrum(build_lie_context(2))
    assert np.allclose(np.sort(evals), [2] * 3 + [6] * 5, atol=1e-10)


@given(ranks)
def test_casimir_spectrum_all_ranks(n):
    evals, _ = casimir_spectrum(build_lie_context(n))
    want = np.sort(np.concatenate([[j * (j + 1)] * (2 * j + 1) for j in range(1, n + 1)]))
    assert evals.size == (n + 1) ** 2 - 1
    assert np.max(np.abs(np.sort(evals) - want)) <= 1e-8


@given(ranks, st.integers(0, 2 ** 32 - 1))
def test_casimir_self_adjoint(n, seed):
    ctx = build_lie_context(n)
    rng = np.random.default_rng(seed)
    m = n + 1

    def rand():
        a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        return a - np.trace(a) / m * np.eye(m)

    a, b = rand(), rand()
    lhs = np.trace(casimir_apply(ctx, a) @ np.conj(b).T)
    rhs = np.trace(a @ np.conj(casimir_apply(ctx, b)).T)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("n, roots", [(1, [-1, 2]), (2, [-2, -1, 2, 3]),
                                      (3, [-3, -2, -1, 2, 3, 4])])
def test_indicial_roots(n, roots):
    assert indicial_roots(build_lie_context(n)) == roots


@given(ranks)
def test_indicial_roots_closed_form(n):
    assert indicial_roots(build_lie_context(n)) == list(range(-n, 0)) + list(range(2, n + 2))


@given(ranks)
def test_hermitian_basis_orthonormal(n):
    b = hermitian_basis(n + 1)
    gram = np.einsum("aij,bji->ab", b, b).real
    assert np.allclose(gram, np.eye(len(b)), atol=1e-12)
    c = np.arange(len(b), dtype=float)
    assert np.allclose(to_coords(from_coords(c, n + 1)), c)


def test_casimir_matrix_symmetric():
    m = casimir_matrix(build_lie_context(4))
    assert np.allclose(m, m.T, atol=1e-12)
