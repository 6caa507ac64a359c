import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebelab.errors import DomainError
from ebelab.liealg import build_lie_context
from ebelab.models import (KnotChart, boundary_asymptote_error, closed_form_profile,
                           collocation_residual, knot_model_metric, lambda_ratio_bound,
                           lambda_ratio_limits, nahm_model_metric, sl2_knot_profile,
                           sl3_knot_profile, toda_bvp_solve, toda_residual)

# reference values evaluated independently with 30-digit mpmath
CHI_SL2_R0_S1 = -0.161439361571195633610119728442
CHI_SL2_R2_S07 = -0.293131383489400479855745969926
CHI_SL3_11_S1 = 0.370268457417554042196992664573
CHI_SL3_12_S05 = (1.90007598373052498672192149181, 1.87729274052339164596809167759)
U_R1_AT_11 = -0.346573590279972654708616060729

SIGMA = np.geomspace(0.1, 10.0, 15)


def test_nahm_model_values():
    assert np.allclose(nahm_model_metric(build_lie_context(1), 0.5), np.diag([2.0, 0.5]))
    assert np.allclose(nahm_model_metric(build_lie_context(2), 1.0), np.eye(3))
    assert np.allclose(nahm_model_metric(build_lie_context(2), 2.0), np.diag([0.25, 1, 4]))


def test_nahm_model_rejects_nonpositive():
    with pytest.raises(DomainError):
        nahm_model_metric(build_lie_context(1), 0.0)


@given(st.integers(1, 8), st.floats(1e-3, 1e3))
def test_nahm_model_unimodular(n, y):
    h = nahm_model_metric(build_lie_context(n), y)
    assert abs(np.prod(np.diag(h)) - 1.0) < 1e-10


def test_sl2_profile_value():
    assert sl2_knot_profile(0).chi(1.0)[0] == pytest.approx(CHI_SL2_R0_S1, abs=1e-14)
    assert sl2_knot_profile(2).chi(0.7)[0] == pytest.approx(CHI_SL2_R2_S07, abs=1e-14)


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_sl2_toda_residual(r):
    assert np.max(np.abs(toda_residual(sl2_knot_profile(r), SIGMA))) < 1e-8


def test_sl2_r0_is_nahm_model():
    ctx = build_lie_context(1)
    rng = np.random.default_rng(0)
    r, y = rng.uniform(0.01, 3, 50), rng.uniform(0.01, 3, 50)
    h = knot_model_metric(ctx, sl2_knot_profile(0), KnotChart.from_ry(r, y))
    assert np.allclose(h, nahm_model_metric(ctx, y), rtol=1e-12)


def test_sl3_profile_value():
    # the displayed closed form at m1 = m2 = 1, sigma = 1
    assert sl3_knot_profile(1, 1).chi(1.0)[0] == pytest.approx(CHI_SL3_11_S1, abs=1e-13)
    assert np.allclose(sl3_knot_profile(1, 2).chi(0.5), CHI_SL3_12_S05, atol=1e-13)


@given(st.integers(1, 4), st.integers(1, 4))
def test_sl3_swap_symmetry(m1, m2):
    a = sl3_knot_profile(m1, m2).chi(SIGMA)
    b = sl3_knot_profile(m2, m1).chi(SIGMA)
    assert np.allclose(a[:, 0], b[:, 1], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("m", [(1, 1), (1, 2), (2, 3)])
def test_sl3_toda_residual(m):
    assert np.max(np.abs(toda_residual(sl3_knot_profile(*m), SIGMA))) < 1e-8


def test_sl3_large_sigma_finite():
    chi = sl3_knot_profile(2, 3).chi(np.array([50.0, 200.0]))
    assert np.all(np.isfinite(chi))


@pytest.mark.parametrize("w", [(0,), (3,), (0, 0), (1, 2)])
def test_boundary_asymptote(w):
    ctx = build_lie_context(len(w))
    err = boundary_asymptote_error(closed_form_profile(w), ctx.weights)
    assert np.max(np.abs(err)) < 5e-2


@pytest.mark.parametrize("w", [(0,), (2,), (0, 0), (1, 1)])
def test_bvp_matches_closed_form(w):
    ctx = build_lie_context(len(w))
    num = toda_bvp_solve(ctx, w)
    grid = num.sigma_grid
    assert np.max(np.abs(num.q(grid) - closed_form_profile(w).q(grid))) < 1e-4
    _, res = collocation_residual(num)
    assert np.max(np.abs(res)) < 1e-6


def test_bvp_rank_three_asymptote():
    ctx = build_lie_context(3)
    num = toda_bvp_solve(ctx, (0, 1, 0))
    assert np.max(np.abs(boundary_asymptote_error(num, ctx.weights))) < 5e-2
    assert np.all(np.exp(num.q(np.array([12.0]))) < 1e-6)


def test_bvp_bad_grid():
    with pytest.raises(DomainError):
        toda_bvp_solve(build_lie_context(1), (0,), sigma_grid=np.linspace(1e-4, 1, 50))


def test_knot_metric_value():
    h = knot_model_metric(build_lie_context(1), sl2_knot_profile(1), KnotChart.from_ry(1.0, 1.0))
    assert np.allclose(h, np.diag([np.exp(U_R1_AT_11), np.exp(-U_R1_AT_11)]), atol=1e-14)


def test_knot_metric_singular_ray():
    with pytest.raises(DomainError):
        knot_model_metric(build_lie_context(1), sl2_knot_profile(1), KnotChart.from_ry(0.0, 1.0))


@pytest.mark.parametrize("w", [(1,), (0, 2)])
def test_knot_metric_unimodular(w):
    ctx = build_lie_context(len(w))
    rng = np.random.default_rng(3)
    chart = KnotChart.from_ry(rng.uniform(1e-3, 2, 1000), rng.uniform(1e-3, 2, 1000))
    h = knot_model_metric(ctx, closed_form_profile(w), chart)
    d = np.diagonal(h, axis1=-2, axis2=-1)
    assert np.all(d > 0)
    assert np.max(np.abs(np.prod(d, axis=-1) - 1)) < 1e-10


@given(st.floats(1e-3, 10), st.floats(1e-3, 1.5))
def test_chart_round_trip(R, psi):
    c = KnotChart.from_polar(R, psi)
    d = KnotChart.from_ry(c.r, c.y)
    assert d.R == pytest.approx(R, rel=1e-12)
    assert d.psi == pytest.approx(psi, rel=1e-12, abs=1e-12)
    assert np.sinh(d.sigma) == pytest.approx(np.tan(psi), rel=1e-10)


def test_lambda_ratio_nahm_bound():
    ctx = build_lie_context(1)
    R, psi = np.meshgrid(np.linspace(0.01, 1, 30), np.linspace(0.01, np.pi / 2 - 0.01, 30))
    chart = KnotChart.from_polar(R, psi)
    bound = lambda_ratio_bound(ctx, sl2_knot_profile(0), chart)
    assert bound == pytest.approx(np.max(chart.y ** 2), rel=1e-10)
    assert bound <= 1.0


def test_lambda_ratio_limits():
    ctx1, ctx2 = build_lie_context(1), build_lie_context(2)
    _, r_lim = lambda_ratio_limits(ctx1, sl2_knot_profile(1), psi=np.pi / 4)
    _, p_lim = lambda_ratio_limits(ctx2, sl3_knot_profile(2, 2), R=1.0)
    assert r_lim[-1] < 1e-3 and np.all(np.diff(r_lim) < 0)
    assert p_lim[-1] < 1e-3
    with pytest.raises(DomainError):
        lambda_ratio_limits(ctx1, sl2_knot_profile(1))
