"""Semantic slider discovery for diffusion models.

Sample a prompt's generative distribution, decompose the embedding
spread into principal directions, train one low-rank adapter per
direction, then compose any subset at arbitrary scales during
inference. Persistence, evaluation, a CLI, and an HTTP service sit on
top of the same core ops.
"""

from .adapters import LowRankAdapter, SliderActivation, effective_weight, init_adapter, merge_activations
from .backends import DiffusionBackend, get_backend, list_backends, register_backend
from .composer import (
    GenerationRequest,
    GenerationResult,
    TimestepGate,
    generate,
    sparse_random_activation,
    transfer_generate,
)
from .decomposition import PrincipalDirections, fit_pca
from .encoders import Encoder, get_encoder, list_encoders, register_encoder
from .errors import (
    BackendError,
    CapabilityError,
    ConfigurationError,
    ContractViolation,
    IntegrityError,
    NotFoundError,
    SliderKitError,
    TrainingError,
    ValidationError,
)
from .evaluation import (
    diversity_protocol,
    factor_correlation,
    frechet_distance,
    label_sliders,
    pairwise_diversity,
    text_alignment,
)
from .manifest import ManifestBundle, SliderEntry, SliderManifest, load_manifest, save_manifest
from .sampling import RecordStore, SamplingPlan, run_sampling
from .schedule import NoiseSchedule
from .training import TrainingConfig, TrainingReport, direction_alignment_loss, train_sliders, train_variant
from .workspace import DiscoveryConfig, Workspace

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "CapabilityError",
    "ConfigurationError",
    "ContractViolation",
    "DiffusionBackend",
    "DiscoveryConfig",
    "Encoder",
    "GenerationRequest",
    "GenerationResult",
    "IntegrityError",
    "LowRankAdapter",
    "ManifestBundle",
    "NoiseSchedule",
    "NotFoundError",
    "PrincipalDirections",
    "RecordStore",
    "SamplingPlan",
    "SliderActivation",
    "SliderEntry",
    "SliderKitError",
    "SliderManifest",
    "TimestepGate",
    "TrainingConfig",
    "TrainingError",
    "TrainingReport",
    "ValidationError",
    "Workspace",
    "direction_alignment_loss",
    "diversity_protocol",
    "effective_weight",
    "factor_correlation",
    "fit_pca",
    "frechet_distance",
    "generate",
    "get_backend",
    "get_encoder",
    "init_adapter",
    "label_sliders",
    "list_backends",
    "merge_activations",
    "list_encoders",
    "load_manifest",
    "pairwise_diversity",
    "register_backend",
    "register_encoder",
    "run_sampling",
    "save_manifest",
    "sparse_random_activation",
    "text_alignment",
    "train_sliders",
    "train_variant",
    "transfer_generate",
]
