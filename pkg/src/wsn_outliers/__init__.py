"""Global outlier detection for wireless sensor network traces.

Pipeline: read a trace, inject labeled Gaussian noise, pick each node's best
neighbor by adaptive entropy, compute windowed correlation features, and
classify readings with a random forest (kNN and naive Bayes as baselines).
"""

from .errors import PipelineError
from .evaluate import ConfusionMatrix, PipelineSettings, SweepResult, accuracy, run_sweep, split
from .features import FeatureMatrix, build_feature_matrix
from .forest import Forest, fit_forest, importance, oob_error
from .ingest import Trace, load_trace, synthesize_trace
from .neighbors import NeighborTable, k_nearest_by_distance, monte_carlo_neighbor_count
from .noise import LabeledTrace, NoiseSpec, inject_noise

__version__ = "0.1.0"
