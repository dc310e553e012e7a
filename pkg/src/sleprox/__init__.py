"""Chordal SLE boundary-proximity laboratory.

Submodules: loewner (driving paths, slit-map flow, traces), observables
(M^x, C_eps trials, two-point and integral observables, Q statistic),
specfun (gamma, 2F1, incomplete beta, closed forms), criterion (boundary
functions and the integral test), mc (Monte Carlo experiments) and cli.
"""

__version__ = "0.1.0"
