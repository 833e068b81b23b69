"""Arbitrary-shape text detection by iterative boundary deformation.

The pipeline regresses per-pixel prior maps (text probability, a
normalized distance-to-boundary field, and a direction field), extracts
coarse boundary proposals from the thresholded distance field, and
refines each proposal's control points with a sequence encoder over the
ring plus a per-point offset decoder, applied iteratively.

Modules:

* ``geometry``   -- polygons, resampling, sampling, rasterized IoU
* ``fields``     -- ground-truth field generation and oracles
* ``proposals``  -- thresholding, tracing, and scoring of candidates
* ``network``    -- backbone, prior head, and the deformation model
* ``losses``     -- OHEM classification, field, and matching losses
* ``synthdata``  -- synthetic corpora and augmentation
* ``trainer``    -- training loop and checkpoints
* ``evaluation`` -- metrics, iteration reports, ablations
* ``cli``        -- command-line pipeline
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegeneratePolygonError,
    NumericError,
    TextDeformError,
)
from .fields import AnnotatedSample, GroundTruthBundle, TextInstance, compute_ground_truth
from .geometry import ControlPolygon, GridMap, Polygon, polygon_iou, resample_uniform
from .network import Detection, ModelConfig, TextDetector, build_model
from .proposals import BoundaryProposal, FieldMaps, ProposalConfig
from .synthdata import SynthConfig, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSample",
    "BoundaryProposal",
    "CheckpointError",
    "ConfigError",
    "ControlPolygon",
    "DataError",
    "DegeneratePolygonError",
    "Detection",
    "FieldMaps",
    "GridMap",
    "GroundTruthBundle",
    "ModelConfig",
    "NumericError",
    "Polygon",
    "ProposalConfig",
    "SynthConfig",
    "TextDetector",
    "TextDeformError",
    "TextInstance",
    "TrainConfig",
    "build_model",
    "compute_ground_truth",
    "generate",
    "polygon_iou",
    "resample_uniform",
    "train",
    "__version__",
]
