"""
Knot divisor of a Higgs field
=============================

Plant knot weights in a local Higgs field, hide them with a random
holomorphic change of frame, and read them back from the vanishing line
bundle.
"""

import numpy as np

from ebelab.holo import PolyMatrix, canonical_frame, divisor_orders, random_unimodular

rng = np.random.default_rng(7)
weights = (2, 0, 1)
phi = PolyMatrix.knot_local(weights, lower=np.tril(rng.standard_normal((4, 4))), order=24)
hidden = phi.conjugate_by(random_unimodular(4, rng, order=24, fix_line=True))

d = divisor_orders(hidden)
print("z-orders of the wedge powers:", d.z_orders)
print("recovered weights:", d.weights, " planted:", weights)

_, transformed, w = canonical_frame(hidden)
print("canonical superdiagonal orders:", w)
