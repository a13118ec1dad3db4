"""PCA-Net operator learning: empirical PCA encoders, ReLU networks, Darcy and
spectral Navier-Stokes data generators, and a ReLU emulation of the spectral
time stepper."""

__version__ = "0.1.0"

from . import field, pca, nn, darcy, spectral_ns, ns_relu, model, experiments, io  # noqa: E402,F401
from .field import Field, GridGeometry, InnerProductSpec  # noqa: E402,F401
from .pca import PcaBasis, empirical_pca, encode, decode  # noqa: E402,F401
from .nn import Mlp, TrainConfig  # noqa: E402,F401
from .model import PcaNetModel, assemble, predict, train_pipeline, error_decomposition  # noqa: E402,F401
