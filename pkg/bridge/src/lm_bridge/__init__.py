"""HTTP bridge exposing transformer checkpoints over the decoding wire protocol."""

from .app import create_app
from .config import BridgeConfig
from .model import ModelAdapter, ModelLoadError

__all__ = ["BridgeConfig", "ModelAdapter", "ModelLoadError", "create_app"]

__version__ = "0.1.0"
