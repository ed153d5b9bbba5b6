"""refbackend: reference model server for the panorama denoiser wire protocol."""

__version__ = "0.1.0"

from .models import (
    AdapterError,
    DiffusersLatentModel,
    ModelError,
    ToyLatentModel,
    load_adapter,
    load_model,
    random_adapter,
    save_adapter,
)
from .server import ServerConfig, create_app, serve

__all__ = [
    "__version__",
    "ToyLatentModel",
    "DiffusersLatentModel",
    "load_model",
    "load_adapter",
    "save_adapter",
    "random_adapter",
    "ModelError",
    "AdapterError",
    "ServerConfig",
    "create_app",
    "serve",
]
