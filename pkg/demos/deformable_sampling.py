"""What multi-scale deformable attention reads, in the simplest case.

With one level, one point per head, zero offsets and identity projections
the operator collapses to "read the pyramid at the reference point". Once
offsets are switched on, each query reads elsewhere, and bilinear weights
blend the four neighbouring cells.
"""

import numpy as np

from ascent_vit.dmsf import DmsfConfig, MSDA, make_reference_points
from ascent_vit.mse import flatten_concat
from ascent_vit.numerics import Rng, Tensor

D, side = 4, 4
rng = np.random.default_rng(0)
level = rng.normal(size=(1, D, side, side))
pyramid = flatten_concat([Tensor(level)])
ref = make_reference_points(side)

msda = MSDA(Rng(0), D, DmsfConfig(heads=1, points=1), 1)
for p in (msda.offsets.weight, msda.offsets.bias, msda.value_proj.bias, msda.output_proj.bias):
    p.data[...] = 0.0
msda.value_proj.weight.data[...] = np.eye(D)
msda.output_proj.weight.data[...] = np.eye(D)

queries = Tensor(rng.normal(size=(1, side * side, D)))
out = msda(queries, ref, pyramid).data
print("zero offsets reproduce the map:", np.allclose(out, pyramid.flat.data, atol=1e-12))

# shift every query half a cell to the right: each output is now the mean
# of two horizontally adjacent cells (the last column clamps to the border)
msda.offsets.bias.data[0] = 0.5
shifted = msda(queries, ref, pyramid).data[0].reshape(side, side, D)
grid = level[0].transpose(1, 2, 0)
want = 0.5 * (grid[:, :-1] + grid[:, 1:])
print("half-cell shift averages neighbours:", np.allclose(shifted[:, :-1], want, atol=1e-12))
