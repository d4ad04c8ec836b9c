"""conelab: a desk-scale numerical laboratory for divergence-form elliptic
equations with conical coefficients.

Subpackages cover coefficient/metric geometry, exact harmonic functions on
metric cones, a sparse SPD Dirichlet solver, the dyadic frozen-coefficient
iteration, Gaussian heat-semigroup smoothing, and a distributional-Laplacian
test harness.  The ``lab`` command line drives configuration-based runs.
"""

__version__ = "0.1.0"
