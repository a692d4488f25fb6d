"""Simulation and verification laboratory for multiple chordal SLE systems.

Subpackages
-----------
loewner    deterministic Loewner-chain engine (forward flow, trace, inverse)
sde        stochastic driver integrator with force points and hit detection
partition  hitting densities, normalisation integrals, pair-partition sums,
           hypergeometric-free PDE and limit-probability checks
jacobi     beta-Jacobi ensemble: density, tridiagonal sampler, MCMC oracle
multisle   cascade sampler for the full curve system plus law verifications
ising      critical Ising model on a lattice polygon with mixed boundary arcs
stats      KS tests, bootstrap, curve distance, convergence diagnostics
cli        command-line entry points; reports as JSON/CSV plus figures
"""

__version__ = "0.1.0"
