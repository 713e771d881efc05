"""latentscore: autoregressive planning + flow-matching refinement over
latent music patches, at a scale where every mechanism is testable."""

from .tensor import Rng, Tensor, no_grad, set_default_dtype

__version__ = "0.1.0"

__all__ = ["Tensor", "Rng", "no_grad", "set_default_dtype", "__version__"]
