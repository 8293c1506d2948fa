"""Local geodesic X-ray transforms of asymptotically hyperbolic metrics.

Numerical realizations of: metrics in collar normal form and the r = rho^2
compactification, the C^1 compactified connection with its Heaviside split,
regularized geodesic integration, forward transforms and their parametrization
relation, the conjugated microlocalized normal operator with its explicit
kernel, blow-up-space kernel diagnostics, Schur-test perturbation bounds, and
injectivity certificates with regularized reconstruction.
"""

__version__ = "0.1.0"
