"""Shared desk-scale fixtures for the acceptance suite.

The desk configuration (synthetic 6-class blobs, 8 clients x 300 samples,
R=10, S=50, [16,32,6] MLP) is expensive to run, so everything derived from
it is session-scoped and shared across acceptance criteria.
"""

import numpy as np
import pytest

from fedccea.aam_evaluator import (
    build_inputs,
    contribution_values,
    extract_quality,
    make_report,
    train_aam,
)
from fedccea.datasets import NoiseKind, NoiseSpec, PartitionSpec, generate_synthetic, inject_noise, partition
from fedccea.fl_engine import FLConfig
from fedccea.nn_core import MLPSpec
from fedccea.simulator import run_all

# Desk-scale configuration: the acceptance criteria pin n=8 clients x 300
# samples, R=10, S=50 and the [16,32,6] model; spread, partitioning and FL
# hyperparameters are tuned so that (a) round accuracy rises smoothly,
# (b) a label-noise client hurts from round 1 (high local-epoch count),
# (c) clients are not fully redundant (5 of 6 classes each).
DESK = dict(
    classes=6,
    dim=16,
    spread=0.45,
    train_per_class=450,
    test_per_class=100,
    n_clients=8,
    classes_per_client=5,
    samples_per_client=300,
    rounds=10,
    local_epochs=10,
    batch_size=32,
    fl_lr=0.05,
    hidden=32,
    simulations=50,
    aam_lr=0.1,
    aam_epochs=16000,
    noise_client_fraction=0.25,
    noise_sample_fraction=0.4,
)
ACCEPTANCE_SEEDS = (100, 200, 300, 400, 500)


def desk_problem(master_seed: int, with_noise: bool):
    """Partitions, test set, and FL config for one desk master seed."""
    data = generate_synthetic(
        DESK["classes"],
        DESK["train_per_class"] + DESK["test_per_class"],
        DESK["dim"],
        DESK["spread"],
        seed=master_seed,
    )
    cut = DESK["classes"] * DESK["train_per_class"]
    train = data.subset(np.arange(cut))
    test = data.subset(np.arange(cut, len(data)))
    parts = partition(
        train,
        PartitionSpec(
            DESK["n_clients"], DESK["classes_per_client"], DESK["samples_per_client"],
            seed=master_seed + 1,
        ),
    )
    if with_noise:
        parts = inject_noise(
            parts,
            NoiseSpec(
                NoiseKind.LABEL,
                DESK["noise_client_fraction"],
                DESK["noise_sample_fraction"],
                seed=master_seed + 2,
            ),
        )
    cfg = FLConfig(
        n_clients=DESK["n_clients"],
        rounds=DESK["rounds"],
        local_epochs=DESK["local_epochs"],
        batch_size=DESK["batch_size"],
        lr=DESK["fl_lr"],
        model_spec=MLPSpec((DESK["dim"], DESK["hidden"], DESK["classes"])),
        seed=master_seed + 3,
    )
    return parts, test, cfg


def desk_pipeline(master_seed: int, with_noise: bool):
    """Simulate + fit the accuracy model for one desk seed."""
    parts, test, cfg = desk_problem(master_seed, with_noise)
    store = run_all(parts, test, cfg, DESK["simulations"], master_seed + 7)
    inputs = build_inputs(store, DESK["n_clients"], DESK["rounds"])
    params, mae = train_aam(
        inputs,
        lr=DESK["aam_lr"],
        epochs=DESK["aam_epochs"],
        val_fraction=0.1,
        seed=master_seed + 4,
        patience=10**9,
    )
    quality = extract_quality(params)
    report = make_report(contribution_values(quality, np.ones(DESK["n_clients"])))
    return {
        "seed": master_seed,
        "partitions": parts,
        "test": test,
        "cfg": cfg,
        "store": store,
        "aam_params": params,
        "mae": mae,
        "quality": quality,
        "report": report,
        "noisy_clients": [p.client_id for p in parts if p.noisy],
    }


@pytest.fixture(scope="session")
def desk_clean_run():
    """Noise-free desk pipeline at a fixed seed (criterion 5)."""
    return desk_pipeline(1000, with_noise=False)


@pytest.fixture(scope="session")
def desk_noisy_runs():
    """Noisy desk pipelines over the five acceptance seeds (criteria 6-8)."""
    return [desk_pipeline(seed, with_noise=True) for seed in ACCEPTANCE_SEEDS]
