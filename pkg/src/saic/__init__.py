"""Training-free augmentation for abnormal-cell detection datasets.

Composes banked abnormal-cell crops into annotated cytology backgrounds
under two staining-style routes, filters each pair with a
vision-language judge, and scores the synthesized set.  All neural
services (segmentation, embedding, conditioned generation, judging) sit
behind a small wire protocol with deterministic in-process reference
implementations, so the pipeline itself is exactly reproducible.
"""

__version__ = "0.1.0"

from .cellbank import CellBank, CellRecord, SelectionQuery, select_candidate
from .composer import CompositionPair, compose_pair
from .config import RunConfig, load_config, substream_seed
from .dataio import Dataset, import_dataset, export_dataset, plan_augmentation
from .errors import SaicError
from .evalkit import frechet_distance, frechet_from_features, summarize
from .filtration import FilteredResult, aggregate_stats, filter_pair
from .imageproc import Region, blend_hf, highpass, stitch

__all__ = [
    "__version__",
    "CellBank",
    "CellRecord",
    "SelectionQuery",
    "select_candidate",
    "CompositionPair",
    "compose_pair",
    "RunConfig",
    "load_config",
    "substream_seed",
    "Dataset",
    "import_dataset",
    "export_dataset",
    "plan_augmentation",
    "SaicError",
    "frechet_distance",
    "frechet_from_features",
    "summarize",
    "FilteredResult",
    "aggregate_stats",
    "filter_pair",
    "Region",
    "blend_hf",
    "highpass",
    "stitch",
]
