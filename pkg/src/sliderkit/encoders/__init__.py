from .base import Encoder, EncoderDescriptor, get_encoder, list_encoders, register_encoder
from .toy import PixelFlattenEncoder, ToyOracleEncoder, ToySemanticEncoder

__all__ = [
    "Encoder",
    "EncoderDescriptor",
    "get_encoder",
    "list_encoders",
    "register_encoder",
    "PixelFlattenEncoder",
    "ToyOracleEncoder",
    "ToySemanticEncoder",
]
