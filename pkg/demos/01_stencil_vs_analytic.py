"""
Why grid stencils blur depth edges
==================================

A central difference straddles whatever lies between its two samples.  Next to
a depth step it therefore reports a slope that the surface does not have, while
the derivative of a continuous surface model, evaluated at the same pixel, sees
the flat region it is actually sitting on.

Run with ``python demos/01_stencil_vs_analytic.py``.
"""

import numpy as np

from nlps import discrete_baseline as db
from nlps import synth
from nlps.geometry import CameraModel, chain_scale, pixel_grid

# An 8 x 8 image of a unit step.  Height is 1 where both centered pixel
# coordinates are positive and 0 elsewhere; depth = base - height.
cam = CameraModel(10.0, 8, 8)
cs = chain_scale(cam)
pn = pixel_grid(cam) * cs
stair = synth.discrete_stair(step_height=1.0, base=3.5)
height = 3.5 - stair.depth(pn)
print("height profile (rows top to bottom):")
print(height.astype(int))

# Pixel (row 4, col 5) sits at centered coordinates (u, v) = (1.5, 0.5): inside
# the step horizontally and half a pixel from the edge at v = 0.
r, c = 4, 5
print("\npixel", (r, c), "at (u, v) =", pixel_grid(cam)[r, c].tolist())

# The stencil reaches across the edge in v and reports half a unit of slope.
fd = db.central_difference(db.DepthGrid(height), r, c)
print("central difference (d/du, d/dv):", fd)

# A smooth stand-in for the same step, a product of two steep sigmoids, has a
# derivative that is essentially zero at that pixel for any k >= 200.
for k in (50, 200, 1000):
    g = synth.sigmoid_stair(k=k).gradient(pn[r, c]) * cs
    print(f"sigmoid stair k={k:5d}: |analytic gradient| = {np.linalg.norm(g):.2e}")

# The per-pixel slope error of the stencil over the whole image, against the
# k = 1000 surface, shows that only the pixels flanking the edges are affected.
smooth = synth.sigmoid_stair(k=1000)
err = np.linalg.norm(db.grid_gradient(db.DepthGrid(3.5 - smooth.depth(pn)))
                     + smooth.gradient(pn) * cs, axis=-1)
print("\nstencil slope error per pixel:")
print(np.round(err, 2))
