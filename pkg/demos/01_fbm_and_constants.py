"""fBm increments, the kernel mu(k) and the limit constant c_H.

Run with ``python3 demos/01_fbm_and_constants.py``; takes a few seconds.
"""

# # Sampling fBm on a grid
#
# Paths come from circulant embedding. Each path has its own random stream
# keyed by (master_seed, path_index), so a batch can be cut any way we like.

import numpy as np

from fracsde.constants import c_h, mu
from fracsde.fbm import TimeGrid, indicator_inner, sample_fbm_batch
from fracsde.sums import exact_variance_z1

h = 0.3
grid = TimeGrid(1.0, 8)
batch = sample_fbm_batch(grid, h, master_seed=1, path_indices=range(20_000))
dx = np.diff(batch.values, axis=-1)

# # Increment covariance against the closed form
#
# For H < 1/2 neighbouring increments are negatively correlated.

t = grid.times
print("lag  empirical  closed form")
for j in range(4):
    emp = np.mean(dx[:, 0] * dx[:, j])
    exact = indicator_inner(t[0], t[1], t[j], t[j + 1], h)
    print(f"{j:>3}  {emp:+.5f}   {exact:+.5f}")

# # The kernel mu(k) and c_H
#
# mu(k) is the covariance of the unit-step integrated increments at lag k.
# Beyond lag 1 it is negative and decays like |k|^{2H-2}. Its sum c_H is
# the variance constant of every limit theorem in the package.

print("\nk      mu(k)")
for k in (0, 1, 2, 5, 10, 50):
    print(f"{k:>3}  {mu(k, h):+.3e}")

for hh in (0.1, 0.3, 0.45):
    r = c_h(hh)
    print(f"c_H({hh}) = {r.value:.6f}  (K = {r.k_max}, tail bound {r.tail_bound:.1e})")

# # The finite-n variance converges slowly
#
# Var Z^{(n),1} is a Cesaro sum of mu(k). Its gap to c_H shrinks like
# n^{2H-1}, which is slow when H is close to 1/2.

for hh in (0.1, 0.3, 0.45):
    ch = c_h(hh).value
    gaps = [exact_variance_z1(TimeGrid(1.0, n), hh) / ch - 1 for n in (256, 4096, 65536)]
    print(f"H = {hh}: relative gap at n = 256, 4096, 65536: " + ", ".join(f"{g:+.4f}" for g in gaps))
