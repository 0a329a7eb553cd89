"""Numerical toolkit for degenerate Monge-Ampere equations in the plane.

Modules
-------
grid          domains, polar meshes, strip fields and their discrete calculus
grushin       the degenerate linear model and its weighted norms
monge_ampere  Newton, inverse iteration and gradient flow solvers
radial        radial shooting oracle
transforms    hodograph and partial Legendre transforms
diagnostics   boundary exponent, analyticity and induction indicators
io, cli       persistence and the ``degma`` command
"""

__version__ = "0.1.0"

from degma.errors import DegmaError  # noqa: E402
from degma.grid import Domain2D, GridFunction, StripField  # noqa: E402
from degma.monge_ampere import MASolution, eigen_solve, newton_solve, run_flow  # noqa: E402
from degma.radial import radial_oracle  # noqa: E402

__all__ = [
    "DegmaError",
    "Domain2D",
    "GridFunction",
    "MASolution",
    "StripField",
    "__version__",
    "eigen_solve",
    "newton_solve",
    "radial_oracle",
    "run_flow",
]
