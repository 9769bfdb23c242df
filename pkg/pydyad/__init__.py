from .layers import DenseLayer, DyadConfig, DyadLayer, LayersManager, init_uniform
from .tensor_core import Matrix, Tensor3, accumulation

__version__ = "0.1.0"
