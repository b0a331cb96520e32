"""Backend contracts for the four neural services.

The pipeline talks to segmentation, embedding, generation, and judging
through small client objects.  ``reference`` provides deterministic
in-process implementations used for offline runs and tests;
``client`` provides the HTTP client for live servers speaking the
``/v1/*`` JSON protocol defined in ``protocol``.
"""

from .types import (
    BACKGROUND_STYLE,
    SELF_STYLE,
    EmbeddingBundle,
    GenerationRequest,
    VlmVerdict,
    parse_verdict,
)
from .reference import (
    ReferenceEmbeddingBackend,
    ReferenceGenerationBackend,
    ReferenceJudgeBackend,
    ReferenceSegmentationBackend,
    reference_backends,
)
from .client import ClientConfig, HttpBackendClient

__all__ = [
    "BACKGROUND_STYLE",
    "SELF_STYLE",
    "EmbeddingBundle",
    "GenerationRequest",
    "VlmVerdict",
    "parse_verdict",
    "ReferenceEmbeddingBackend",
    "ReferenceGenerationBackend",
    "ReferenceJudgeBackend",
    "ReferenceSegmentationBackend",
    "reference_backends",
    "ClientConfig",
    "HttpBackendClient",
]
