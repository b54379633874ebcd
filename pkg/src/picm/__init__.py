"""Progressive trit-plane coding of Gaussian latents, with a confidence-driven
adaptive decoding controller."""

from .codec import (
    DecodeResult,
    ProgressiveBitstream,
    TritPlaneCodec,
    clean_latent,
    decode,
    encode,
    rate_report,
)
from .controller import (
    AdaptiveDecodingController,
    ConfidenceFilter,
    LogitFeatures,
    adaptive_decode,
    build_training_set,
    extract_features,
    predict_confidence,
)
from .errors import PicmError
from .gaussian import kappa, plane_length
from .metrics import bd_metrics, ece
from .oracle import LogitRecord, SyntheticClassifier, load_logits, write_logits
from .priority import STRATEGIES, build_order
from .tensor import LatentGrid, load_grid, quantize, save_grid, synth_grid
from .tritplane import TritPlaneStack, decompose, recompose

__version__ = "0.1.0"

__all__ = [
    "AdaptiveDecodingController", "ConfidenceFilter", "DecodeResult", "LatentGrid", "LogitFeatures", "LogitRecord",
    "PicmError", "ProgressiveBitstream", "STRATEGIES", "SyntheticClassifier", "TritPlaneCodec", "TritPlaneStack",
    "adaptive_decode", "bd_metrics", "build_order", "build_training_set", "clean_latent", "decode", "decompose",
    "ece", "encode", "extract_features", "kappa", "load_grid", "load_logits", "plane_length", "predict_confidence",
    "quantize", "rate_report", "recompose", "save_grid", "synth_grid", "write_logits",
]
