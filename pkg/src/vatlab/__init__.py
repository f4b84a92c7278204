"""Semi-supervised image classification with adversarial smoothness training.

Everything runs on a small float64 reverse-mode autodiff core; numpy is the
only runtime dependency. Submodules:

- tensor: autodiff graph (Tensor, backward)
- ops: differentiable layer and loss primitives
- model: CNN/MLP builders, forward pass, checkpoints
- vat: virtual-label smoothness regularizer
- train: splits, Adam, training loop, repeat protocol
- data: PGM images, manifests, synthetic generators
- cli: subcommand front end (also installed as the `vatlab` script)
"""

from .rng import Rng
from .tensor import ShapeError, Tensor, backward

__version__ = "0.1.0"

__all__ = ["Rng", "ShapeError", "Tensor", "backward", "__version__"]
