"""thinfb: desk-scale numerics for a thin one-phase free boundary problem.

The package evaluates the square-root profile on the slit plane, the radial
comparison-subsolution family bent around a large sphere, horizontal domain
variations, a front-tracking free boundary solver, the degenerate weighted
linearized problem, and Harnack-type decay measurements, together with a CLI
(`thinfb`) that orchestrates certificate runs.
"""

__version__ = "0.1.0"

from .geometry import GridField, PointXZ, SlitGeometry, eval_U, eval_Un

__all__ = ["GridField", "PointXZ", "SlitGeometry", "eval_U", "eval_Un", "__version__"]
