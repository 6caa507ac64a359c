import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import unitary_group

from ebelab.ebe import metric_norm, omega_residual
from ebelab.errors import DomainError, SolverError
from ebelab.field import Grid2, Grid3, dagger, herm_exp
from ebelab.holo import hitchin_section_higgs
from ebelab.liealg import build_lie_context
from ebelab.solver import (ContinuitySchedule, FramedProblem, assemble_jacobian,
                           build_background, continuity_solve, geodesic, hitchin2d_solve,
                           jacobian_fd_slope, knot_weight, metric_distance,
                           scalar_balance_oracle, smooth_step)

from conftest import random_hermitian


@pytest.fixture(scope="module")
def ctx1():
    return build_lie_context(1)


@pytest.fixture(scope="module")
def small_problem(ctx1):
    g = Grid3.graded(6, 6, 4.0, ny=24, y_min=0.01)
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    far = hitchin2d_solve(ctx1, phi, g.slice2d)
    return g, phi, far


def test_scalar_oracle():
    for c in (0.25, 1.0, 3.0 + 4.0j):
        h = scalar_balance_oracle(c)
        assert h == pytest.approx(np.sqrt(abs(c)), rel=1e-14)
    with pytest.raises(DomainError):
        scalar_balance_oracle(0.0)


def test_hitchin2d_trivial_higgs(ctx1):
    g = Grid2(8, 8)
    sol = hitchin2d_solve(ctx1, np.zeros((2, 2)), g)
    assert np.allclose(sol.H, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("c", [1.0, 0.3, 2.5])
def test_hitchin2d_constant_oracle(c):
    ctx = build_lie_context(1)
    sol = hitchin2d_solve(ctx, np.array([[0.0, 1.0], [c, 0.0]]), Grid2(8, 8))
    h = scalar_balance_oracle(c)
    assert np.abs(sol.H - np.diag([h, 1 / h])).max() <= 1e-8


def test_hitchin2d_section_solution(ctx1):
    g = Grid2(16, 16)
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    sol = hitchin2d_solve(ctx1, phi, g)
    assert sol.residual <= 1e-10
    assert omega_residual(sol.H, phi, g).sup <= 1e-10
    assert np.allclose(np.linalg.det(sol.H), 1.0)


def test_hitchin2d_unitary_equivariance(ctx1):
    g = Grid2(12, 12)
    phi = np.array([[0.2, 1.0], [0.7, -0.2]], dtype=complex)
    u = unitary_group.rvs(2, random_state=3)
    a = hitchin2d_solve(ctx1, phi, g).H
    b = hitchin2d_solve(ctx1, u @ phi @ dagger(u), g).H
    assert np.abs(u @ a @ dagger(u) - b).max() <= 1e-8


def test_smooth_step():
    u = np.linspace(-0.5, 1.5, 401)
    f, df, ddf = smooth_step(u, derivatives=True)
    assert np.all(f[u <= 0] == 0) and np.all(f[u >= 1] == 1)
    assert np.all(np.diff(f) >= 0)
    h = u[1] - u[0]
    assert np.abs(np.gradient(f, h) - df)[2:-2].max() <= 1e-3
    assert np.abs(np.gradient(df, h) - ddf)[2:-2].max() <= 1e-2
    assert smooth_step(0.5) == pytest.approx(0.5)


def test_geodesic_endpoints(rng):
    a = herm_exp(random_hermitian(rng, (4,), 3))
    b = herm_exp(random_hermitian(rng, (4,), 3))
    assert np.allclose(geodesic(a, b, 0.0), a)
    assert np.allclose(geodesic(a, b, 1.0), b)
    mid = geodesic(a, b, 0.5)
    assert metric_distance(a, mid) == pytest.approx(0.5 * metric_distance(a, b), rel=1e-8)


def test_metric_distance(rng):
    a = herm_exp(random_hermitian(rng, (5,), 2))
    b = herm_exp(random_hermitian(rng, (5,), 2))
    assert metric_distance(a, a) <= 1e-12
    assert metric_distance(a, b) == pytest.approx(metric_distance(b, a))
    s = np.diag([0.3, -0.3])
    assert metric_distance(np.eye(2), herm_exp(s)) == pytest.approx(np.linalg.norm(s))


def test_background_far_field_and_model(ctx1, small_problem):
    g, phi, far = small_problem
    bg = build_background(ctx1, phi, far.H, g, y_c=0.5)
    far_nodes = g.y >= 1.0
    assert np.abs(bg.H[:, :, far_nodes] - far.H[:, :, None]).max() <= 1e-12
    assert np.allclose(dagger(bg.frame) @ bg.frame, bg.H)
    assert np.allclose(np.linalg.det(bg.H), 1.0)


def test_background_k1_improves_near_boundary(ctx1, small_problem):
    g, phi, far = small_problem
    mags = []
    for k in (0, 1):
        bg = build_background(ctx1, phi, far.H, g, k=k)
        om = omega_residual(bg.H, phi, g, gauge=bg.gauge).omega
        mags.append(metric_norm(bg.H, om) * g.y ** 2)
    # nodes whose stencil lies entirely below the blend
    inner = np.zeros(g.ny, bool)
    inner[1:-1] = g.y[2:] < bg.y_c
    assert bg.correction["exponent"] == 4
    assert mags[0][:, :, inner].max() >= 2.0 * mags[1][:, :, inner].max()


def test_background_refusals(ctx1, small_problem):
    g, phi, far = small_problem
    with pytest.raises(DomainError):
        build_background(ctx1, phi, far.H, g, k=2)
    with pytest.raises(DomainError):
        build_background(ctx1, np.asarray(ctx1.sl2_plus), far.H, g, k=1)


def test_background_k1_refuses_indicial_exponent():
    # for sl(3) with q_2 the leading error y^0 needs exponent 2, an indicial root
    ctx = build_lie_context(2)
    g = Grid3.graded(5, 5, 4.0, ny=24, y_min=0.01)
    phi = hitchin_section_higgs(ctx, [0.4, 0.0])
    H_inf = np.broadcast_to(np.eye(3, dtype=complex), g.slice2d.shape + (3, 3))
    with pytest.raises(DomainError, match="indicial"):
        build_background(ctx, phi, H_inf, g, k=1)


def test_jacobian_assembly_and_fd(ctx1):
    g = Grid3.graded(5, 5, 4.0, ny=16, y_min=0.1)
    phi = hitchin_section_higgs(ctx1, [0.5 + 0.2j])
    frame = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2))
    prob = FramedProblem(g, phi, frame, t=0.3)
    x = np.random.default_rng(0).standard_normal(prob.size) * 0.1
    prob.set_point(x)
    J = assemble_jacobian(prob)
    v = np.random.default_rng(1).standard_normal(prob.size)
    assert np.abs(J @ v - prob.jacobian_apply(v)).max() <= 1e-10
    assert abs(jacobian_fd_slope(prob, x) - 1.0) <= 0.2


def test_continuity_trivial_higgs(ctx1):
    g = Grid3.graded(5, 5, 4.0, ny=24, y_min=0.01)
    H_inf = np.broadcast_to(np.eye(2, dtype=complex), g.slice2d.shape + (2, 2))
    bg = build_background(ctx1, np.zeros((2, 2)), H_inf, g)
    # flat frame with zero Higgs field is already a solution
    bg.frame = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2)).copy()
    bg.H = bg.frame.copy()
    bg.gauge = None
    st = continuity_solve(ctx1, np.zeros((2, 2)), bg, g, tol=1e-12)
    assert np.abs(st.s).max() <= 1e-12


def test_continuity_small_grid(ctx1, small_problem):
    g, phi, far = small_problem
    bg = build_background(ctx1, phi, far.H, g)
    st = continuity_solve(ctx1, phi, bg, g, tol=1e-8)
    assert st.monitors["start_residual"] <= 1e-10
    assert st.residual_norm <= 1e-8
    assert st.recompute_residual() == pytest.approx(st.residual_norm, abs=1e-12)
    H = st.metric()
    assert np.abs(np.linalg.det(H) - 1.0).max() <= 1e-10
    assert np.all(np.linalg.eigvalsh(H) > 0)
    assert np.abs(np.trace(st.s, axis1=-2, axis2=-1)).max() <= 1e-10
    assert st.t == 0.0 and st.t_schedule[-1]["t"] == 0.0
    assert np.abs(st.s[:, :, [0, -1]]).max() <= 1e-10


def test_continuity_failure_raises(ctx1):
    g = Grid3.graded(5, 5, 8.0, ny=8, y_min=2.0)
    phi = hitchin_section_higgs(ctx1, [0.5])
    far = hitchin2d_solve(ctx1, phi, g.slice2d)
    bg = build_background(ctx1, phi, far.H, g)
    sch = ContinuitySchedule(max_newton=3, min_step=0.1)
    with pytest.raises(SolverError) as err:
        continuity_solve(ctx1, phi, bg, g, schedule=sch, tol=1e-30)
    assert err.value.history


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.01, 2.0))
def test_knot_weight_polar(a, b, y):
    g = Grid3.graded(5, 5, 4.0, ny=24, y_min=0.01)
    w = knot_weight(g, complex(a, b))
    assert np.all(w >= 0)
    # zero only approaches the knot point at y -> 0
    assert w.min() > 0
