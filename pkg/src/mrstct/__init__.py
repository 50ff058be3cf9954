"""Multi-layer residual sparsifying transforms for low-dose CT reconstruction."""
from .imaging import ConfigError, Image, PatchConfig
from .mrst import LearnConfig, MrstModel, learn
from .ctsim import Geometry, SinogramSet
from .recon import ReconConfig, reconstruct

__version__ = "0.1.0"

__all__ = ["ConfigError", "Geometry", "Image", "LearnConfig", "MrstModel", "PatchConfig",
           "ReconConfig", "SinogramSet", "learn", "reconstruct"]
