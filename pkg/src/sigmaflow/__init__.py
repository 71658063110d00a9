"""SigmaFlow.

Numerical laboratory for inverse sigma_k type equations in their torus-invariant
reduction: operator calculus, toric stability checks, J-type flows and convex PDE solvers.
"""

__all__ = ["__version__"]
__version__ = "0.1.0"
