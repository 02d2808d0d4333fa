"""
minsurf-lab: minimal surfaces on conformally Euclidean manifolds

Forward minimal-surface solver, simulated Dirichlet-to-Neumann maps and
higher-order linearization recovery of normal Taylor coefficients of the
conformal factor.
"""

__version__ = "0.1.0"
