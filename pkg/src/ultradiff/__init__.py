"""Ultrametric trees, hierarchical Laplacians and their random-walk approximations.

Submodules
----------
tree       leveled trees, boundary points and ultrametrics
hierlap    hierarchical Laplacians, spectra and heat kernels
spherical  spherical functions, Levy sequences, characters and exponents
randwalk   nearest-neighbour walks, first passage, boundary kernels and sampling
converge   convergence sweeps towards the limiting semigroups
cli        the ``ultradiff`` command
"""
__version__ = "0.1.0"
