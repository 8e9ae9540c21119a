"""Multi-view object recognition by sparse view and modality selection."""

from .dataset import (
    MultiViewDataset,
    SyntheticSceneParams,
    TrialSpec,
    extract_dataset_features,
    generate_synthetic_scene,
    load_dataset,
    split_reference,
)
from .errors import (
    ConfigurationError,
    DatasetError,
    InvalidInputError,
    NumericalError,
    RecognitionError,
    SparseViewsError,
)
from .evaluation import (
    ExperimentGrid,
    brute_force_oracle,
    mi_ranking_report,
    mutual_information,
    run_accuracy_experiment,
    sweep_heatmap,
)
from .features import FeatureParams, extract_feature_vector
from .layout import FeatureVector, ModalityLayout
from .recognition import ObjectLibrary, RecognitionResult, ViewSet, rank_views, recognize
from .solver import ProblemInstance, SolverConfig, SolverResult, objective, solve

__version__ = "0.1.0"
