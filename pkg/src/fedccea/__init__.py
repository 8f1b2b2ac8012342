"""Federated-learning simulation and client-contribution valuation toolkit."""

from .aam_evaluator import (
    AAMInput,
    AAMParams,
    ContributionReport,
    aam_forward,
    build_inputs,
    compute_cci,
    contribution_values,
    extract_quality,
    make_report,
    train_aam,
)
from .baselines import UtilityFn, ValuationResult, exact_shapley, federated_utility, loo_values, tmc_shapley
from .datasets import (
    ClientPartition,
    LabeledDataset,
    NoiseKind,
    NoiseSpec,
    PartitionSpec,
    generate_synthetic,
    inject_noise,
    load_idx,
    partition,
)
from .fl_engine import FLConfig, RoundOutcome, fed_avg, local_update, run_round, train_federated
from .nn_core import MLPParams, MLPSpec, evaluate_accuracy, forward, init_mlp, sgd_train
from .rng import RngStream
from .simulator import (
    SimRecord,
    SimStore,
    SizeSample,
    load_store,
    persist_store,
    run_all,
    run_simulation,
    sample_proportions,
    scale_sizes,
)

__version__ = "0.1.0"
