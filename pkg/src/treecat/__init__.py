"""Street-tree cataloging from aerial and street-level views.

Per-view proposals are fused into geographic candidates, a four-term CRF
(aerial, street, spacing and road-distance potentials) picks the detection
set greedily, and the evaluation module scores detections, species
predictions and change labels. ``treecat.synth`` builds seeded scenes for
all of it; ``treecat.cli`` drives the stages from a JSON config.
"""

from .crf import CrfModel, PriorHistogram, fit_prior_histogram, greedy_infer, search_scalars
from .errors import ConfigError, DataError, InvariantError, TreecatError
from .fusion import CandidateTree, fuse
from .geo import GeoPoint, PixelBox
from .pipeline import SceneData, TrainConfig, evaluate, run_lesions, train_model
from .scoring import FileBackedProvider, ScoreProviderConfig

__version__ = "0.1.0"

__all__ = [
    "CandidateTree",
    "ConfigError",
    "CrfModel",
    "DataError",
    "FileBackedProvider",
    "GeoPoint",
    "InvariantError",
    "PixelBox",
    "PriorHistogram",
    "SceneData",
    "ScoreProviderConfig",
    "TrainConfig",
    "TreecatError",
    "evaluate",
    "fit_prior_histogram",
    "fuse",
    "greedy_infer",
    "run_lesions",
    "search_scalars",
    "train_model",
]
