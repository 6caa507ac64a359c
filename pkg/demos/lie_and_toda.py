"""
Lie data and Toda knot profiles
===============================

Principal sl2 triple, Casimir spectrum and indicial roots, then the
repulsive Toda profile of a knot computed twice: in closed form and by the
collocation BVP solver.
"""

import numpy as np

from ebelab.liealg import build_lie_context, casimir_spectrum, indicial_roots
from ebelab.models import closed_form_profile, toda_bvp_solve

# the principal triple of sl(3) and its Casimir on sl(3)
ctx = build_lie_context(2)
print("e+ =\n", ctx.sl2_plus.real)
evals, _ = casimir_spectrum(ctx)
print("Casimir eigenvalues:", np.round(np.sort(evals), 10))
print("indicial roots:", indicial_roots(ctx))

# knot of weights (1, 2): closed form against the numerical BVP
w = (1, 2)
exact = closed_form_profile(w)
num = toda_bvp_solve(ctx, w)
sigma = np.geomspace(1e-2, 5.0, 6)
for s, a, b in zip(sigma, exact.chi(sigma), num.chi(sigma)):
    print(f"sigma={s:8.3g}  chi closed={a}  chi bvp={b}")
print("sup difference on the BVP grid:",
      np.abs(num.chi(num.sigma_grid) - exact.chi(num.sigma_grid)).max())
