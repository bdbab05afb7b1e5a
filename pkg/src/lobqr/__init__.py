"""lobqr: quantile regression on limit-order-book streams.

Pipeline: synthetic or file-based snapshot streams -> rolling normalization
and windowing -> spread-adjusted long/short return labels -> shared-trunk
multi-branch quantile network (plus persistence/AR/MLP baselines) -> monotone
rearrangement -> simplex-weighted forecast combination -> persistence-
normalized evaluation.
"""

from .book import BookLevel, BookSnapshot, Quote, SnapshotArray, mid_price, quote, spread, validate_snapshot
from .model import DeepLOBQR, ModelConfig, QuantileFan, rearrange
from .synthgen import GenConfig, generate, generate_paired_asymmetric

__version__ = "0.1.0"

__all__ = [
    "BookLevel",
    "BookSnapshot",
    "Quote",
    "SnapshotArray",
    "mid_price",
    "spread",
    "quote",
    "validate_snapshot",
    "DeepLOBQR",
    "ModelConfig",
    "QuantileFan",
    "rearrange",
    "GenConfig",
    "generate",
    "generate_paired_asymmetric",
    "__version__",
]
