"""Physics-based augmentation of vacuum pump-down curves and robustness
testing of minimum-pressure prediction models."""

from .physics import ChamberSpec, PumpDownCurve, effective_speed, pressure_at, reconstruct_curve
from .dataio import GroundTruthSet, SyntheticCorpusSpec, generate_synthetic, load_ground_truth, write_ground_truth
from .decomposition import (
    ScalarDistribution,
    SpeedDictionary,
    extract_speed_vector,
    fit_scalar_mle,
    learn_dictionary,
)
from .augmentation import AugmentedSample, AugmentedSet, SparseWeights, generate_augmented
from .models import Dataset, ExternalModelSpec, TrainedModel, predict, predict_batch, split_classic, train
from .robustness import (
    OracleVerdict,
    ScenarioResults,
    Thresholds,
    evaluate_model,
    rank_models,
    run_oracles,
)

__version__ = "0.1.0"
