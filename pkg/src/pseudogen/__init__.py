"""Langevin phase-space dynamics versus configurational Smoluchowski dynamics:
SDE integrators, Ulam transfer operators, pseudo-generators, reconstructions,
reaction-coordinate projection and generalized-coordinate geometry.
"""
__version__ = "0.1.0"
