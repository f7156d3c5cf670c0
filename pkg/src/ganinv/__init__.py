"""Two-phase GAN inversion on a toy style-based generator.

Phase I encodes an image to a single content code in the generator's
latent space; Phase II predicts per-layer residual convolution weights
from an appearance code via hypernetworks and refines the frozen
generator with them. Everything runs on a small from-scratch
reverse-mode autodiff engine over numpy float64 arrays.
"""

from ganinv import ops as _ops  # registers graph op kinds on import

__all__ = ["__version__"]
__version__ = "0.1.0"

del _ops
