from .base import BackendDescriptor, DiffusionBackend, get_backend, list_backends, register_backend
from .toy import ToyBackend, ToyTrainConfig, build_toy_backend

__all__ = [
    "BackendDescriptor",
    "DiffusionBackend",
    "get_backend",
    "list_backends",
    "register_backend",
    "ToyBackend",
    "ToyTrainConfig",
    "build_toy_backend",
]
