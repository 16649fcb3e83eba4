"""Energy-modulated conformal classification over pre-computed logits."""

from .conformal import (
    CalibratedPredictor,
    PredictionSet,
    calibrate,
    conformal_quantile,
    load_predictor,
    predict_batch,
    prediction_mask,
    prediction_set,
    predictor_from_dict,
    predictor_to_dict,
    sample_threshold,
    save_predictor,
)
from .data import (
    ClassPriors,
    LogitDataset,
    SplitSpec,
    deserialize_dataset,
    empirical_priors,
    load_logits_csv,
    save_logits_csv,
    serialize_dataset,
    split_dataset,
)
from .errors import (
    DegenerateInputError,
    DomainError,
    FormatError,
    LengthError,
    ParseError,
    TrainingError,
)
from .metrics import (
    DifficultyBins,
    EvalReport,
    average_set_size,
    coverage_gap,
    default_size_bins,
    empirical_coverage,
    evaluate_sets,
    macro_coverage,
    ood_desiderata_report,
    size_stratified_coverage_violation,
    stratified_report,
    welch_one_tailed_p,
    worst_slab_coverage,
)
from .scores import (
    ScoreParams,
    ScoredSample,
    base_score,
    free_energy,
    label_rank,
    modulated_score,
    prevalence_adjusted_score,
    score_all,
    score_matrix,
    shannon_entropy,
    softmax_with_temperature,
    softplus_scale,
)
from .synth import (
    LandscapeGrid,
    SynthConfig,
    ToyMLP,
    generate_ood,
    generate_synthetic,
    landscape_grid,
    make_rings,
    mlp_forward,
    mlp_gradient_check,
    train_mlp,
)

__version__ = "0.1.0"

__all__ = [
    "CalibratedPredictor",
    "ClassPriors",
    "DegenerateInputError",
    "DifficultyBins",
    "DomainError",
    "EvalReport",
    "FormatError",
    "LandscapeGrid",
    "LengthError",
    "LogitDataset",
    "ParseError",
    "PredictionSet",
    "ScoreParams",
    "ScoredSample",
    "SplitSpec",
    "SynthConfig",
    "ToyMLP",
    "TrainingError",
    "average_set_size",
    "base_score",
    "calibrate",
    "conformal_quantile",
    "coverage_gap",
    "default_size_bins",
    "deserialize_dataset",
    "empirical_coverage",
    "empirical_priors",
    "evaluate_sets",
    "free_energy",
    "generate_ood",
    "generate_synthetic",
    "label_rank",
    "landscape_grid",
    "load_logits_csv",
    "load_predictor",
    "macro_coverage",
    "make_rings",
    "mlp_forward",
    "mlp_gradient_check",
    "modulated_score",
    "ood_desiderata_report",
    "predict_batch",
    "prediction_mask",
    "prediction_set",
    "predictor_from_dict",
    "predictor_to_dict",
    "prevalence_adjusted_score",
    "sample_threshold",
    "save_logits_csv",
    "save_predictor",
    "score_all",
    "score_matrix",
    "serialize_dataset",
    "shannon_entropy",
    "size_stratified_coverage_violation",
    "softmax_with_temperature",
    "softplus_scale",
    "split_dataset",
    "stratified_report",
    "train_mlp",
    "welch_one_tailed_p",
    "worst_slab_coverage",
]
