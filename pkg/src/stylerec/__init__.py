"""stylerec: session-based product recommendation with image-style embeddings.

A self-contained numpy library covering the full pipeline: a minimal
autodiff tensor engine, session preprocessing with purchase/cart
semantics, gram-matrix style embeddings, a multi-head self-attention
encoder, and the training + negative-sampling evaluation protocol.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    InputError,
    MaskError,
    NumericError,
    ShapeError,
    StyleRecError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "FormatError",
    "InputError",
    "MaskError",
    "NumericError",
    "ShapeError",
    "StyleRecError",
    "__version__",
]
