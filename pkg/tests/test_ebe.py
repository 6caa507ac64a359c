import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import unitary_group

from conftest import random_hermitian
from ebelab.ebe import (YGauge, _pair, adjoint_higgs, expansion_identity_check,
                        holomorphic_residual, linearization_apply,
                        linearization_operator_form, metric_norm, nahm_residual_convergence,
                        norm_identity_check, omega_derivative, omega_field, omega_residual,
                        unitary_gauge)
from ebelab.errors import DomainError
from ebelab.field import Grid2, Grid3, dagger, herm_exp, herm_sqrt, hermitian_part
from ebelab.holo import hitchin_section_higgs
from ebelab.liealg import build_lie_context
from ebelab.models import nahm_model_metric
from ebelab.solver import hitchin2d_solve
from ebelab.variational import smooth_direction

seeds = st.integers(0, 2 ** 32 - 1)


@pytest.fixture(scope="module")
def ctx1():
    return build_lie_context(1)


def smooth2(grid, m, rng, amp=0.5):
    """Random smooth traceless Hermitian field on a torus grid."""
    x2, x3 = grid.coords()
    s = 0.0
    for kx in (-1, 0, 1):
        for kz in (-1, 0, 1):
            c = hermitian_part(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
            c -= np.trace(c) / m * np.eye(m)
            s = s + np.cos(2 * np.pi * (kx * x2 + kz * x3) + rng.uniform(0, 6))[..., None, None] * c
    return amp * s / np.abs(s).max()


def self_adjoint(H0, sig):
    """``H0^{-1/2} sig H0^{1/2}``, self-adjoint for ``H0`` when ``sig`` is Hermitian."""
    r = herm_sqrt(H0)
    return np.linalg.solve(r, sig @ r)


def _slope(h, err):
    return np.polyfit(np.log(h), np.log(err), 1)[0]


def test_adjoint_higgs_examples():
    phi = np.array([[1.0, 2.0], [3j, 4.0]])
    assert np.allclose(adjoint_higgs(np.eye(2), phi), dagger(phi))
    H = np.diag([2.0, 1.0])
    assert np.allclose(adjoint_higgs(H, phi), np.diag([0.5, 1.0]) @ dagger(phi) @ H)
    with pytest.raises(DomainError):
        adjoint_higgs(np.diag([1.0, 0.0]), phi)


def test_adjoint_is_metric_adjoint(rng):
    H = herm_exp(random_hermitian(rng, (), 3))
    phi = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    lhs = np.vdot(a, H @ (phi @ b))
    rhs = np.vdot(adjoint_higgs(H, phi) @ a, H @ b)
    assert lhs == pytest.approx(rhs)


def test_omega_flat_examples(ctx1):
    g = Grid2(6, 6)
    eye = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2))
    assert np.allclose(omega_field(eye, np.zeros((2, 2)), g), 0.0)
    om = omega_field(eye, ctx1.sl2_plus, g)
    assert np.allclose(om, np.diag([1.0, -1.0]))


@given(seeds)
def test_omega_traceless_and_self_adjoint(seed):
    rng = np.random.default_rng(seed)
    g = Grid3.graded(5, 6, 4.0, ny=30)
    H = herm_exp(random_hermitian(rng, g.shape, 2, scale=0.5))
    phi = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    om = omega_field(H, phi, g)
    assert np.abs(np.trace(om, axis1=-2, axis2=-1)).max() <= 1e-8 * np.abs(om).max()
    Hom = H @ om
    assert np.abs(Hom - dagger(Hom)).max() <= 1e-10 * np.abs(Hom).max()


def test_nahm_exact_in_balanced_gauge():
    for n in (1, 2, 3):
        ctx = build_lie_context(n)
        g = Grid3.graded(5, 5, 4.0, ny=40)
        H = np.broadcast_to(nahm_model_metric(ctx, g.y), g.shape + (ctx.dim, ctx.dim))
        r = omega_residual(H.astype(complex), ctx.sl2_plus, g, gauge=YGauge.log_y(ctx, g))
        assert r.interior_weighted_sup <= 1e-10


def test_nahm_plain_scheme_second_order(ctx1):
    rep = nahm_residual_convergence(ctx1)
    assert abs(rep.order - 2.0) <= 0.3
    assert rep.residuals == sorted(rep.residuals, reverse=True)


def test_gauge_round_trip(ctx1, rng):
    g = Grid3.graded(5, 5, 4.0, ny=30)
    gauge = YGauge.log_y(ctx1, g).conjugated(unitary_group.rvs(2, random_state=1))
    H = herm_exp(random_hermitian(rng, g.shape, 2))
    assert np.allclose(gauge.from_hat(gauge.to_hat(H)), H)
    assert np.allclose(gauge.unconjugate(gauge.conjugate(H)), H)


def test_gauge_scheme_consistent(ctx1):
    # both schemes discretize the same operator
    errs = []
    for npd in (16, 32, 64):
        g = Grid3.graded(5, 5, 2.0, nodes_per_decade=npd, y_min=0.1)
        s = smooth_direction(g, 2, np.random.default_rng(2), 0.5, modes=0, y_range=(0.1, 2.0))
        H = herm_exp(s)
        a = omega_field(H, ctx1.sl2_plus, g)
        b = omega_field(H, ctx1.sl2_plus, g, gauge=YGauge.log_y(ctx1, g))
        errs.append(np.abs(a - b)[:, :, 1:-1].max())
    assert errs[0] > errs[1] > errs[2]


def test_derivative_matches_finite_difference(ctx1, rng):
    g = Grid3.graded(5, 6, 4.0, ny=30)
    H = herm_exp(random_hermitian(rng, g.shape, 2, scale=0.3))
    dH = random_hermitian(rng, g.shape, 2)
    phi = hitchin_section_higgs(ctx1, [0.3])
    for gauge in (None, YGauge.log_y(ctx1, g)):
        exact = omega_derivative(H, dH, phi, g, gauge=gauge)
        eps = np.array([1e-3, 1e-4, 1e-5])
        errs = [np.abs((omega_field(H + e * dH, phi, g, gauge=gauge)
                        - omega_field(H, phi, g, gauge=gauge)) / e - exact).max() for e in eps]
        assert abs(_slope(eps, errs) - 1.0) <= 0.2


def test_linearization_symmetric_and_positive_at_solution(ctx1, rng):
    g = Grid2(16, 16)
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    H = hitchin2d_solve(ctx1, phi, g).H
    a = self_adjoint(H, smooth2(g, 2, rng))
    b = self_adjoint(H, smooth2(g, 2, rng))
    la = linearization_apply(H, phi, a, g)
    lb = linearization_apply(H, phi, b, g)
    sym = _pair(H, a, lb).sum() - _pair(H, la, b).sum()
    assert abs(sym) <= 1e-10 * abs(_pair(H, a, la).sum())
    assert _pair(H, a, la).sum() > 0 and _pair(H, b, lb).sum() > 0


def test_operator_form_agrees(ctx1, rng):
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    errs = []
    for n in (16, 32):
        g = Grid2(n, n)
        H = herm_exp(smooth2(g, 2, np.random.default_rng(7)))
        s = self_adjoint(H, smooth2(g, 2, np.random.default_rng(8)))
        errs.append(np.abs(linearization_operator_form(H, phi, s, g)
                           - linearization_apply(H, phi, s, g)).max())
    assert np.log2(errs[0] / errs[1]) >= 1.7


def test_identities_vanish_for_zero_direction(ctx1, rng):
    g = Grid3.graded(6, 6, 2.0, ny=30)
    H = herm_exp(smooth_direction(g, 2, rng, 0.5, modes=1))
    zero = np.zeros_like(H)
    phi = hitchin_section_higgs(ctx1, [0.2])
    assert expansion_identity_check(H, zero, phi, g) <= 1e-12
    assert norm_identity_check(H, zero, phi, g) <= 1e-12


def test_identities_trivial_for_constant_direction(ctx1):
    # phi = 0, flat metric, constant s: every term vanishes
    g = Grid2(8, 8)
    H = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2))
    s = np.broadcast_to(np.diag([0.7, -0.7]).astype(complex), g.shape + (2, 2))
    assert expansion_identity_check(H, s, np.zeros((2, 2)), g) <= 1e-12
    assert norm_identity_check(H, s, np.zeros((2, 2)), g) <= 1e-12


def test_identities_converge_on_torus(ctx1):
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    ns, e1, e2 = [16, 32, 64], [], []
    for n in ns:
        g = Grid2(n, n)
        H = herm_exp(smooth2(g, 2, np.random.default_rng(5)))
        s = self_adjoint(H, smooth2(g, 2, np.random.default_rng(6), 1.0))
        e1.append(expansion_identity_check(H, s, phi, g))
        e2.append(norm_identity_check(H, s, phi, g))
    h = 1.0 / np.array(ns)
    assert _slope(h, e1) >= 1.7
    assert _slope(h, e2) >= 1.7


def test_identities_converge_in_y(ctx1):
    steps, e1, e2 = [], [], []
    for npd in (32, 64, 128):
        g = Grid3.graded(5, 5, 2.0, nodes_per_decade=npd, y_min=0.1)
        H = herm_exp(smooth_direction(g, 2, np.random.default_rng(3), 0.5, modes=0,
                                      y_range=(0.1, 2.0)))
        s = self_adjoint(H, smooth_direction(g, 2, np.random.default_rng(4), 1.0, modes=0,
                                             y_range=(0.1, 2.0)))
        steps.append(g.ratio - 1)
        e1.append(expansion_identity_check(H, s, ctx1.sl2_plus, g))
        e2.append(norm_identity_check(H, s, ctx1.sl2_plus, g))
    assert _slope(steps, e1) >= 1.7
    assert _slope(steps, e2) >= 1.7


@given(seeds)
def test_unitary_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = Grid3.graded(5, 5, 4.0, ny=30)
    H = herm_exp(random_hermitian(rng, g.shape, 3, scale=0.5))
    phi = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    u = unitary_group.rvs(3, random_state=rng.integers(2 ** 31))
    a = u @ omega_field(H, phi, g) @ dagger(u)
    b = omega_field(u @ H @ dagger(u), u @ phi @ dagger(u), g)
    assert np.abs(a - b).max() <= 1e-9 * max(1.0, np.abs(a).max())


def test_metric_norm_identity_metric(rng):
    a = rng.standard_normal((4, 2, 2)) + 1j * rng.standard_normal((4, 2, 2))
    eye = np.broadcast_to(np.eye(2), a.shape)
    assert np.allclose(metric_norm(eye, a), np.linalg.norm(a, axis=(-2, -1)))


def test_holomorphic_residual(ctx1):
    g = Grid2(32, 32)
    assert holomorphic_residual(hitchin_section_higgs(ctx1, [0.3 + 0.1j]), g) <= 1e-12
    x2, x3 = g.coords()
    wave = np.exp(2j * np.pi * (x2 - x3))  # depends on zbar
    bad = wave[..., None, None] * np.asarray(ctx1.sl2_plus)
    assert holomorphic_residual(bad, g) > 1.0


def test_unitary_gauge_flat(ctx1):
    g = Grid3.graded(5, 5, 4.0, ny=30)
    H = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2))
    u = unitary_gauge(H, ctx1.sl2_plus, g)
    assert np.allclose(u.a_z, 0) and np.allclose(u.a_y, 0) and np.allclose(u.phi_1, 0)
    assert np.allclose(u.phi_z, ctx1.sl2_plus)
    assert np.allclose(u.phi_zbar, dagger(np.asarray(ctx1.sl2_plus)))
