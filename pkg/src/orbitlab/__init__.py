"""
Find periodic orbits near symplectic extrema of Hamiltonian systems

Periodic orbits on energy levels close to a Bott-nondegenerate symplectic
extremum are located as minimax critical points of a modified action
functional on Fourier loop spaces, then verified against an independent
integrator.
"""

__version__ = "0.1.0"
__author__ = "orbitlab developers"
__author_email__ = "orbitlab@example.org"
__license__ = "MIT"
__url__ = "https://github.com/orbitlab/orbitlab"
