"""Numerical laboratory for noise-to-state stability of stochastic gradient dynamics.

Subpackages cover comparison-function algebra (:mod:`nsslab.compfun`),
Euler-Maruyama simulation of diffusions with time-varying noise covariance
(:mod:`nsslab.sde`), sampling-based Lyapunov dissipation certificates
(:mod:`nsslab.lyapcert`), objective oracles with generalized PL envelopes
(:mod:`nsslab.objectives`), LQR policy optimization (:mod:`nsslab.lqr`),
overdamped/underdamped Langevin constructions (:mod:`nsslab.langevin`),
and Monte Carlo NSS verification (:mod:`nsslab.nssmc`).
"""

__version__ = "0.1.0"
