"""Biventricular shape reconstruction from sparse labeled slices.

Two coordinate-input residual MLPs are trained as an auto-decoder over a
synthetic biventricular shape family: an occupancy classifier mapping
(x, y, z) plus a per-shape latent code to five anatomical label channels,
and a regressor mapping ventricular coordinates plus the same latent code
to Cartesian positions. At reconstruction time only the latent code is
optimized, against sparse slice labels, and personalized meshes and dense
label maps are decoded from it.
"""

__version__ = "0.1.0"
