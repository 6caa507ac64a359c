"""
Continuity method on a small grid
=================================

Solve the moment-map equation for sl(2) Hitchin-section data with constant
q2.  The far field comes from the torus solve, the background blends it into
the Nahm pole, and the continuity path runs from the trivial root to t = 0.
"""

import numpy as np

from ebelab.ebe import omega_residual
from ebelab.field import Grid3, weighted_norms
from ebelab.holo import hitchin_section_higgs
from ebelab.liealg import build_lie_context
from ebelab.solver import build_background, continuity_solve, hitchin2d_solve

ctx = build_lie_context(1)
grid = Grid3.graded(8, 8, 8.0, ny=32)
phi = hitchin_section_higgs(ctx, [0.5])

far = hitchin2d_solve(ctx, phi, grid.slice2d)
print("torus residual:", far.residual)

bg = build_background(ctx, phi, far.H, grid, k=1)
print("background correction:", bg.correction)
r0 = omega_residual(bg.H, phi, grid, gauge=bg.gauge)
print("background weighted residual:", r0.weighted_sup)

state = continuity_solve(ctx, phi, bg, grid, tol=1e-8)
for row in state.t_schedule:
    print(f"t={row['t']:.4g}  residual={row['weighted_residual']:.2e}  "
          f"newton={row['newton_iterations']}")

# the correction decays like y^alpha at the Nahm pole
wn = weighted_norms(state.s, grid)
print("sup |s| =", wn.sup, " fitted alpha =", wn.alpha)
print("det H range:", np.ptp(np.linalg.det(state.metric()).real))
