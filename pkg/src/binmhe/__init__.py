"""State estimation from binary threshold sensors via moving-horizon MAP.

Subpackages:
    gausstail  -- stable Gaussian tail / CDF logs and derivatives
    mesh       -- 2D triangulations, file I/O, point location
    fem        -- Galerkin assembly and implicit-Euler discrete models
    estimator  -- the moving-horizon MAP window solver
    simlab     -- ground-truth simulation and Monte-Carlo experiments
    cli        -- command-line driver
"""

__version__ = "0.1.0"
