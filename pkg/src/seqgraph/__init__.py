"""Self-supervised object category discovery from tracked mask features."""

from .assignment import Matching, solve_assignment
from .clustering import ClusteringResult, kmeans
from .data import Dataset, InputError, generate_synthetic, load_dataset, write_dataset
from .pipeline import PipelineConfig, RunReport, run_pipeline
from .projection import ProjectionNetwork, TrainConfig

__version__ = "0.1.0"
