"""Pipeline stages behind the CLI: simulate -> train-aam -> value ->
baseline -> experiment. Stages communicate only through artifact files in
the output directory, all prefixed with the resolved-config hash."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import aam_evaluator as aam
from . import baselines, experiments
from .config import (
    IdxDataSpec,
    RunConfig,
    SyntheticDataSpec,
    config_hash,
    derive_seed,
    echo_dict,
    with_master_seed,
)
from .datasets import (
    ClientPartition,
    LabeledDataset,
    PartitionSpec,
    export_partition_manifest,
    generate_synthetic,
    inject_noise,
    load_idx,
    partition,
)
from .errors import DependencyError
from .fl_engine import FLConfig, train_federated
from .nn_core import MLPSpec
from .simulator import SimStore, load_store, persist_store, run_all


@dataclass(frozen=True)
class ArtifactPaths:
    config_echo: Path
    partition_manifest: Path
    store: Path
    aam_model: Path
    contributions: Path
    valuations: Path
    valuation_diagnostics: Path

    @property
    def tag(self) -> str:
        return self.store.name.split("_")[0]


def artifact_paths(cfg: RunConfig, out_dir: str | Path) -> ArtifactPaths:
    out = Path(out_dir)
    tag = config_hash(cfg)
    return ArtifactPaths(
        config_echo=out / f"{tag}_config.json",
        partition_manifest=out / f"{tag}_partitions.json",
        store=out / f"{tag}_store.jsonl",
        aam_model=out / f"{tag}_aam.json",
        contributions=out / f"{tag}_contributions.csv",
        valuations=out / f"{tag}_valuations.csv",
        valuation_diagnostics=out / f"{tag}_valuation_diagnostics.json",
    )


def load_datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """(train, test) per the dataset section; synthetic train/test splits come
    from one generation so both share the same class means."""
    spec = cfg.dataset
    if isinstance(spec, SyntheticDataSpec):
        full = generate_synthetic(
            spec.classes,
            spec.train_per_class + spec.test_per_class,
            spec.dim,
            spec.spread,
            spec.seed,
        )
        cut = spec.classes * spec.train_per_class
        train = full.subset(np.arange(cut))
        test = full.subset(np.arange(cut, len(full)))
        return train, test
    if isinstance(spec, IdxDataSpec):
        train = load_idx(spec.train_images, spec.train_labels)
        test = load_idx(spec.test_images, spec.test_labels)
        return train, test
    raise TypeError(f"unknown dataset spec {type(spec)!r}")


def build_problem(cfg: RunConfig) -> tuple[list[ClientPartition], LabeledDataset, FLConfig]:
    """Materialize partitions (noise applied) and the federated config."""
    train, test = load_datasets(cfg)
    parts = partition(train, cfg.partition)
    if cfg.noise is not None:
        parts = inject_noise(parts, cfg.noise)
    model_spec = MLPSpec((train.dim, *cfg.fl.hidden_sizes, train.num_classes))
    fl_cfg = FLConfig(
        n_clients=cfg.partition.n_clients,
        rounds=cfg.fl.rounds,
        local_epochs=cfg.fl.local_epochs,
        batch_size=cfg.fl.batch_size,
        lr=cfg.fl.lr,
        model_spec=model_spec,
        seed=cfg.fl.seed,
    )
    return parts, test, fl_cfg


def full_scaled_sizes(partitions: Sequence[ClientPartition]) -> np.ndarray:
    sizes = np.array([len(p.dataset) for p in partitions], dtype=np.int64)
    return sizes / sizes.mean()


def _write_echo(cfg: RunConfig, paths: ArtifactPaths) -> Path:
    paths.config_echo.parent.mkdir(parents=True, exist_ok=True)
    paths.config_echo.write_text(json.dumps(echo_dict(cfg), indent=1, sort_keys=True) + "\n")
    return paths.config_echo


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing artifact {path}; run the '{producer}' stage first")
    return path


def stage_simulate(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    paths = artifact_paths(cfg, out_dir)
    written = [_write_echo(cfg, paths)]
    parts, test, fl_cfg = build_problem(cfg)
    written.append(export_partition_manifest(parts, paths.partition_manifest))
    store = run_all(parts, test, fl_cfg, cfg.simulations, derive_seed(cfg.seed, "simulate"))
    written.append(persist_store(store, paths.store))
    return written


def stage_train_aam(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    paths = artifact_paths(cfg, out_dir)
    written = [_write_echo(cfg, paths)]
    store = load_store(_require(paths.store, "simulate"))
    inputs = aam.build_inputs(store, cfg.partition.n_clients, cfg.fl.rounds)
    params, mae = aam.train_aam(
        inputs,
        lr=cfg.aam.lr,
        epochs=cfg.aam.epochs,
        val_fraction=cfg.aam.val_fraction,
        seed=cfg.aam.seed,
        batch_size=cfg.aam.batch_size,
        patience=cfg.aam.patience,
    )
    fingerprint = dict(store.fingerprint)
    fingerprint["validation_mae"] = round(mae, 6)
    written.append(aam.export_aam(params, fingerprint, paths.aam_model))
    return written


def stage_value(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    paths = artifact_paths(cfg, out_dir)
    written = [_write_echo(cfg, paths)]
    params, _ = aam.load_aam(_require(paths.aam_model, "train-aam"))
    parts, _, _ = build_problem(cfg)
    values = aam.contribution_values(aam.extract_quality(params), full_scaled_sizes(parts))
    written.append(aam.export_report_csv(aam.make_report(values), paths.contributions))
    return written


def stage_baseline(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    paths = artifact_paths(cfg, out_dir)
    written = [_write_echo(cfg, paths)]
    parts, test, fl_cfg = build_problem(cfg)
    n = len(parts)
    results = []
    for method in cfg.baselines.methods:
        if method == "fedccea":
            continue  # valued by the AAM stages, not by retraining
        utility = baselines.federated_utility(parts, test, fl_cfg)
        if method == "loo":
            results.append(baselines.loo_values(utility, n))
        elif method == "tmc":
            tmc = cfg.baselines.tmc
            results.append(
                baselines.tmc_shapley(utility, n, tmc.max_perms, tmc.trunc_tol, tmc.conv_tol, tmc.seed)
            )
    written.append(baselines.export_valuation_csv(results, paths.valuations))
    written.append(baselines.export_diagnostics_json(results, paths.valuation_diagnostics))
    return written


def _load_baseline_values(paths: ArtifactPaths, n: int) -> dict[str, np.ndarray]:
    import csv

    values: dict[str, np.ndarray] = {}
    with open(paths.valuations) as fh:
        for row in csv.DictReader(fh):
            arr = values.setdefault(row["method"], np.zeros(n))
            arr[int(row["client_id"])] = float(row["value"])
    return values


def _fedccea_report_for_seed(cfg: RunConfig, seed: int, paths: ArtifactPaths):
    """Quality vector and report for an experiment seed. The primary seed
    reuses on-disk artifacts; other seeds recompute the pipeline in memory."""
    seed_cfg = cfg if seed == cfg.seed else with_master_seed(cfg, seed)
    parts, test, fl_cfg = build_problem(seed_cfg)
    if seed == cfg.seed and paths.aam_model.exists():
        params, _ = aam.load_aam(paths.aam_model)
    else:
        store = run_all(parts, test, fl_cfg, seed_cfg.simulations, derive_seed(seed_cfg.seed, "simulate"))
        inputs = aam.build_inputs(store, seed_cfg.partition.n_clients, seed_cfg.fl.rounds)
        params, _ = aam.train_aam(
            inputs,
            lr=seed_cfg.aam.lr,
            epochs=seed_cfg.aam.epochs,
            val_fraction=seed_cfg.aam.val_fraction,
            seed=seed_cfg.aam.seed,
            batch_size=seed_cfg.aam.batch_size,
            patience=seed_cfg.aam.patience,
        )
    quality = aam.extract_quality(params)
    report = aam.make_report(aam.contribution_values(quality, full_scaled_sizes(parts)))
    return seed_cfg, parts, test, fl_cfg, quality, report


def stage_experiment(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    paths = artifact_paths(cfg, out_dir)
    written = [_write_echo(cfg, paths)]
    _require(paths.aam_model, "train-aam")
    parts, test, fl_cfg = build_problem(cfg)
    n = len(parts)

    reports: dict[str, aam.ContributionReport] = {}
    params, _ = aam.load_aam(paths.aam_model)
    quality = aam.extract_quality(params)
    if "fedccea" in cfg.baselines.methods:
        reports["fedccea"] = aam.make_report(
            aam.contribution_values(quality, full_scaled_sizes(parts))
        )
    baseline_methods = [m for m in cfg.baselines.methods if m != "fedccea"]
    if baseline_methods:
        _require(paths.valuations, "baseline")
        for method, values in _load_baseline_values(paths, n).items():
            if method in baseline_methods:
                reports[method] = aam.make_report(values)

    results = experiments.ExperimentResults()
    results.cci_by_method = {m: reports[m].cci for m in reports}
    results.skewness = experiments.skewness_report(results.cci_by_method)
    results.zero_exclusion = experiments.zero_exclusion_retrain(reports, parts, test, fl_cfg)

    fractions = cfg.experiment.fractions
    for method, report in reports.items():
        if method == "fedccea":
            continue  # fedccea removal runs per experiment seed below
        least, most = experiments.client_removal_curves(report.rank, parts, test, fl_cfg, fractions)
        results.removal_rows.extend(
            experiments.removal_rows_from_curves(method, cfg.seed, least, most)
        )
    for seed in cfg.experiment.seeds:
        seed_cfg, s_parts, s_test, s_fl, s_quality, s_report = _fedccea_report_for_seed(
            cfg, seed, paths
        )
        least, most = experiments.client_removal_curves(
            s_report.rank, s_parts, s_test, s_fl, fractions
        )
        results.removal_rows.extend(
            experiments.removal_rows_from_curves("fedccea", seed, least, most)
        )
        curves = experiments.partial_participation_curves(
            s_quality, s_parts, s_test, s_fl, fractions, seed_cfg.experiment.partial_seed
        )
        for (mode, direction), curve in sorted(curves.items()):
            for fraction, accuracy in curve.points:
                results.partial_rows.append((mode, direction, fraction, seed, accuracy))

    cost_cfg = cfg.experiment.cost

    def build_cost_problem(n_clients: int):
        # The cost study always runs on a small synthetic stand-in so the
        # grid over n stays cheap, regardless of the main dataset source.
        classes = cfg.dataset.classes if isinstance(cfg.dataset, SyntheticDataSpec) else 6
        dim = cfg.dataset.dim if isinstance(cfg.dataset, SyntheticDataSpec) else 16
        spc = max(classes, cost_cfg.samples_per_client - cost_cfg.samples_per_client % classes)
        train_per_class = (n_clients * spc) // classes
        test_per_class = 25
        data = generate_synthetic(
            classes, train_per_class + test_per_class, dim, 0.05, derive_seed(cfg.seed, "dataset")
        )
        cut = classes * train_per_class
        train = data.subset(np.arange(cut))
        cost_test = data.subset(np.arange(cut, len(data)))
        spec = PartitionSpec(n_clients, None, spc, derive_seed(cfg.seed, "partition"))
        cost_fl = FLConfig(
            n_clients=n_clients,
            rounds=cost_cfg.rounds,
            local_epochs=cost_cfg.local_epochs,
            batch_size=cfg.fl.batch_size,
            lr=cfg.fl.lr,
            model_spec=MLPSpec((dim, *cfg.fl.hidden_sizes, classes)),
            seed=cfg.fl.seed,
        )
        return partition(train, spec), cost_test, cost_fl

    results.cost = experiments.cost_report(
        build_cost_problem,
        cost_cfg.n_grid,
        cfg.baselines.methods,
        cost_cfg.simulations,
        derive_seed(cfg.seed, "simulate"),
        cost_cfg.tmc_perms,
        cfg.baselines.tmc.trunc_tol,
        cfg.baselines.tmc.conv_tol,
    )

    written.extend(experiments.emit_outputs(results, out_dir, paths.tag))
    return written


STAGES = {
    "simulate": stage_simulate,
    "train-aam": stage_train_aam,
    "value": stage_value,
    "baseline": stage_baseline,
    "experiment": stage_experiment,
}
STAGE_ORDER = ("simulate", "train-aam", "value", "baseline", "experiment")


def run_stage(name: str, cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    if name == "all":
        written = []
        for stage in STAGE_ORDER:
            written.extend(STAGES[stage](cfg, out_dir))
        return written
    return STAGES[name](cfg, out_dir)
