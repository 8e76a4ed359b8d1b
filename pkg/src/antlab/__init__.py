"""antlab: desk-scale text-to-trajectory diffusion with timestep-aware
conditioning, a dynamic guidance schedule, and a spectral verification suite.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward, grad_check  # noqa: F401
