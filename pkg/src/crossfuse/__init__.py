"""crossfuse: adaptive cross-modal fusion on a small numpy autograd core.

Subpackages by layer:

- ``tensor``, ``nn``, ``gradcheck``: tensors, reverse-mode autodiff, layers
- ``encoders``: 1-D conv audio encoder, 3-D conv visual encoder, token projection
- ``attention``: multi-head self/cross attention and transformer layers
- ``fusion``: the adaptive cross-modal block and bidirectional fusion
- ``model``, ``train``, ``data``, ``metrics``, ``cli``: models and the harness
"""
from .config import FusionConfig, load_config
from .model import build_model, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["FusionConfig", "Tensor", "build_model", "load_checkpoint", "load_config",
           "no_grad", "save_checkpoint"]
