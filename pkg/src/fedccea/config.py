"""Strict JSON run-configuration loading with seeded defaults.

Every field has a documented default derived from the master seed; unknown
keys are rejected with the path to the offending key, and the fully-resolved
config can be echoed back out and re-parsed to the identical object.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .datasets import NoiseKind, NoiseSpec, PartitionSpec
from .errors import ConfigError

_U64 = 2**64

DEFAULT_SIMULATIONS = 100
DEFAULT_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
KNOWN_METHODS = ("fedccea", "tmc", "loo")

# Offsets for stage seeds derived from the master seed.
_SEED_OFFSETS = {
    "dataset": 0,
    "partition": 1,
    "noise": 2,
    "fl": 3,
    "aam": 4,
    "tmc": 5,
    "partial": 6,
    "simulate": 7,
}


def derive_seed(master: int, stage: str) -> int:
    return (master + _SEED_OFFSETS[stage]) % _U64


@dataclass(frozen=True)
class SyntheticDataSpec:
    classes: int
    dim: int
    spread: float
    train_per_class: int
    test_per_class: int
    seed: int


@dataclass(frozen=True)
class IdxDataSpec:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class FLSettings:
    rounds: int
    local_epochs: int
    batch_size: int
    lr: float
    hidden_sizes: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class AAMSettings:
    lr: float
    epochs: int
    batch_size: int
    val_fraction: float
    patience: int
    seed: int


@dataclass(frozen=True)
class TMCSettings:
    max_perms: int
    trunc_tol: float
    conv_tol: float
    seed: int


@dataclass(frozen=True)
class BaselineSettings:
    methods: tuple[str, ...]
    tmc: TMCSettings


@dataclass(frozen=True)
class CostSettings:
    n_grid: tuple[int, ...]
    simulations: int
    rounds: int
    local_epochs: int
    samples_per_client: int
    tmc_perms: int


@dataclass(frozen=True)
class ExperimentSettings:
    fractions: tuple[float, ...]
    seeds: tuple[int, ...]
    partial_seed: int
    cost: CostSettings


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: str
    dataset: SyntheticDataSpec | IdxDataSpec
    partition: PartitionSpec
    noise: NoiseSpec | None
    fl: FLSettings
    simulations: int
    aam: AAMSettings
    baselines: BaselineSettings
    experiment: ExperimentSettings
    raw: Mapping[str, Any] = field(compare=False, repr=False, default_factory=dict)


class _Section:
    """Typed accessor over one level of the config document."""

    def __init__(self, data: Mapping[str, Any], path: str, known: set[str]):
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path or 'config'}: expected an object")
        unknown = set(data) - known
        if unknown:
            where = f"{path}." if path else ""
            raise ConfigError(f"{where}{sorted(unknown)[0]}: unknown key")
        self.data = data
        self.path = path

    def _get(self, key: str, default):
        return self.data.get(key, default)

    def _fail(self, key: str, expected: str, value) -> ConfigError:
        where = f"{self.path}.{key}" if self.path else key
        return ConfigError(f"{where}: expected {expected}, got {value!r}")

    def integer(self, key: str, default: int | None, minimum: int | None = None) -> int:
        v = self._get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self._fail(key, "an integer", v)
        if minimum is not None and v < minimum:
            raise self._fail(key, f"an integer >= {minimum}", v)
        return v

    def real(self, key: str, default: float | None, minimum=None, maximum=None) -> float:
        v = self._get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self._fail(key, "a number", v)
        v = float(v)
        if minimum is not None and v < minimum:
            raise self._fail(key, f"a number >= {minimum}", v)
        if maximum is not None and v > maximum:
            raise self._fail(key, f"a number <= {maximum}", v)
        return v

    def string(self, key: str, default: str | None, choices: tuple[str, ...] | None = None) -> str:
        v = self._get(key, default)
        if not isinstance(v, str):
            raise self._fail(key, "a string", v)
        if choices and v not in choices:
            raise self._fail(key, f"one of {choices}", v)
        return v

    def seed(self, key: str, default: int) -> int:
        v = self._get(key, None)
        if v is None:
            return default
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < _U64:
            raise self._fail(key, "an unsigned 64-bit integer", v)
        return v

    def sub(self, key: str, known: set[str], required=False) -> "_Section | None":
        v = self._get(key, None)
        if v is None:
            if required:
                raise ConfigError(f"{self.path + '.' if self.path else ''}{key}: required section missing")
            return None
        where = f"{self.path}.{key}" if self.path else key
        return _Section(v, where, known)


def _parse_dataset(section: _Section | None, master: int) -> SyntheticDataSpec | IdxDataSpec:
    if section is None:
        section = _Section({}, "dataset", {"kind"})
    kind = section.string("kind", "synthetic", ("synthetic", "idx"))
    if kind == "idx":
        sec = _Section(section.data, section.path,
                       {"kind", "train_images", "train_labels", "test_images", "test_labels"})
        return IdxDataSpec(
            sec.string("train_images", None),
            sec.string("train_labels", None),
            sec.string("test_images", None),
            sec.string("test_labels", None),
        )
    sec = _Section(section.data, section.path,
                   {"kind", "classes", "dim", "spread", "train_per_class", "test_per_class", "seed"})
    return SyntheticDataSpec(
        classes=sec.integer("classes", 6, minimum=2),
        dim=sec.integer("dim", 16, minimum=2),
        spread=sec.real("spread", 0.05, minimum=0.0),
        train_per_class=sec.integer("train_per_class", 400, minimum=1),
        test_per_class=sec.integer("test_per_class", 100, minimum=1),
        seed=sec.seed("seed", derive_seed(master, "dataset")),
    )


def _parse_partition(section: _Section | None, master: int) -> PartitionSpec:
    if section is None:
        section = _Section({}, "partition", set())
    sec = _Section(section.data, "partition",
                   {"n_clients", "classes_per_client", "samples_per_client", "seed"})
    cpc_raw = sec.data.get("classes_per_client", "all")
    if cpc_raw == "all":
        cpc = None
    elif isinstance(cpc_raw, int) and not isinstance(cpc_raw, bool) and cpc_raw >= 1:
        cpc = cpc_raw
    else:
        raise ConfigError(f"partition.classes_per_client: expected 'all' or a positive integer, got {cpc_raw!r}")
    try:
        return PartitionSpec(
            n_clients=sec.integer("n_clients", 8, minimum=2),
            classes_per_client=cpc,
            samples_per_client=sec.integer("samples_per_client", 300, minimum=1),
            seed=sec.seed("seed", derive_seed(master, "partition")),
        )
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from exc


def _parse_noise(section: _Section | None, master: int) -> NoiseSpec | None:
    if section is None:
        return None
    sec = _Section(section.data, "noise", {"kind", "client_fraction", "sample_fraction", "seed"})
    try:
        return NoiseSpec(
            kind=NoiseKind(sec.string("kind", None, ("label", "pattern"))),
            client_fraction=sec.real("client_fraction", 0.25, minimum=0.0, maximum=1.0),
            sample_fraction=sec.real("sample_fraction", 0.4, minimum=0.0, maximum=1.0),
            seed=sec.seed("seed", derive_seed(master, "noise")),
        )
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from exc


def _parse_fl(section: _Section | None, master: int) -> FLSettings:
    if section is None:
        section = _Section({}, "fl", set())
    sec = _Section(section.data, "fl",
                   {"rounds", "local_epochs", "batch_size", "lr", "hidden_sizes", "seed"})
    hidden = sec.data.get("hidden_sizes", [32])
    if (
        not isinstance(hidden, list)
        or not hidden
        or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden)
    ):
        raise ConfigError(f"fl.hidden_sizes: expected a non-empty list of positive integers, got {hidden!r}")
    return FLSettings(
        rounds=sec.integer("rounds", 10, minimum=1),
        local_epochs=sec.integer("local_epochs", 3, minimum=1),
        batch_size=sec.integer("batch_size", 32, minimum=1),
        lr=sec.real("lr", 0.05, minimum=1e-12),
        hidden_sizes=tuple(hidden),
        seed=sec.seed("seed", derive_seed(master, "fl")),
    )


def _parse_aam(section: _Section | None, master: int) -> AAMSettings:
    if section is None:
        section = _Section({}, "aam", set())
    sec = _Section(section.data, "aam",
                   {"lr", "epochs", "batch_size", "val_fraction", "patience", "seed"})
    epochs = sec.integer("epochs", 500, minimum=1)
    return AAMSettings(
        lr=sec.real("lr", 0.01, minimum=0.0),
        epochs=epochs,
        batch_size=sec.integer("batch_size", 32, minimum=1),
        val_fraction=sec.real("val_fraction", 0.1, minimum=1e-9, maximum=0.999999999),
        patience=sec.integer("patience", 20, minimum=1),
        seed=sec.seed("seed", derive_seed(master, "aam")),
    )


def _parse_baselines(section: _Section | None, master: int) -> BaselineSettings:
    if section is None:
        section = _Section({}, "baselines", set())
    sec = _Section(section.data, "baselines", {"methods", "tmc"})
    methods = sec.data.get("methods", list(KNOWN_METHODS))
    if not isinstance(methods, list) or any(m not in KNOWN_METHODS for m in methods):
        raise ConfigError(f"baselines.methods: expected a subset of {KNOWN_METHODS}, got {methods!r}")
    tmc_sec = sec.sub("tmc", {"max_perms", "trunc_tol", "conv_tol", "seed"})
    if tmc_sec is None:
        tmc_sec = _Section({}, "baselines.tmc", {"max_perms", "trunc_tol", "conv_tol", "seed"})
    tmc = TMCSettings(
        max_perms=tmc_sec.integer("max_perms", 20, minimum=1),
        trunc_tol=tmc_sec.real("trunc_tol", 0.01, minimum=1e-12),
        conv_tol=tmc_sec.real("conv_tol", 1e-4, minimum=1e-12),
        seed=tmc_sec.seed("seed", derive_seed(master, "tmc")),
    )
    return BaselineSettings(tuple(methods), tmc)


def _parse_experiment(section: _Section | None, master: int) -> ExperimentSettings:
    if section is None:
        section = _Section({}, "experiment", set())
    sec = _Section(section.data, "experiment", {"fractions", "seeds", "partial_seed", "cost"})
    fractions = sec.data.get("fractions", list(DEFAULT_FRACTIONS))
    if (
        not isinstance(fractions, list)
        or not fractions
        or any(isinstance(f, bool) or not isinstance(f, (int, float)) for f in fractions)
    ):
        raise ConfigError(f"experiment.fractions: expected a list of numbers, got {fractions!r}")
    fractions = [float(f) for f in fractions]
    if fractions != sorted(fractions) or fractions[0] != 0.0 or any(not 0 <= f < 1 for f in fractions):
        raise ConfigError(
            "experiment.fractions: must be ascending, start at 0, and lie in [0, 1)"
        )
    seeds = sec.data.get("seeds", [master])
    if not isinstance(seeds, list) or not seeds or any(
        isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < _U64 for s in seeds
    ):
        raise ConfigError(f"experiment.seeds: expected a list of unsigned 64-bit integers, got {seeds!r}")
    cost_sec = sec.sub("cost", {"n_grid", "simulations", "rounds", "local_epochs",
                                "samples_per_client", "tmc_perms"})
    if cost_sec is None:
        cost_sec = _Section({}, "experiment.cost",
                            {"n_grid", "simulations", "rounds", "local_epochs",
                             "samples_per_client", "tmc_perms"})
    n_grid = cost_sec.data.get("n_grid", [4, 8])
    if not isinstance(n_grid, list) or not n_grid or any(
        isinstance(n, bool) or not isinstance(n, int) or n < 2 for n in n_grid
    ):
        raise ConfigError(f"experiment.cost.n_grid: expected a list of integers >= 2, got {n_grid!r}")
    cost = CostSettings(
        n_grid=tuple(n_grid),
        simulations=cost_sec.integer("simulations", 10, minimum=1),
        rounds=cost_sec.integer("rounds", 2, minimum=1),
        local_epochs=cost_sec.integer("local_epochs", 1, minimum=1),
        samples_per_client=cost_sec.integer("samples_per_client", 60, minimum=1),
        tmc_perms=cost_sec.integer("tmc_perms", 5, minimum=1),
    )
    return ExperimentSettings(
        fractions=tuple(fractions),
        seeds=tuple(seeds),
        partial_seed=sec.seed("partial_seed", derive_seed(master, "partial")),
        cost=cost,
    )


_TOP_KEYS = {
    "seed", "output_dir", "dataset", "partition", "noise", "fl",
    "simulations", "aam", "baselines", "experiment",
}


def resolve_config(data: Mapping[str, Any]) -> RunConfig:
    """Validate a config document and fill every default."""
    top = _Section(data, "", _TOP_KEYS)
    master = top.seed("seed", 0)
    dataset_sec = top.sub("dataset", {"kind", "classes", "dim", "spread", "train_per_class",
                                      "test_per_class", "seed", "train_images", "train_labels",
                                      "test_images", "test_labels"})
    return RunConfig(
        seed=master,
        output_dir=top.string("output_dir", "out"),
        dataset=_parse_dataset(dataset_sec, master),
        partition=_parse_partition(top.sub("partition", {"n_clients", "classes_per_client",
                                                         "samples_per_client", "seed"}), master),
        noise=_parse_noise(top.sub("noise", {"kind", "client_fraction", "sample_fraction", "seed"}), master),
        fl=_parse_fl(top.sub("fl", {"rounds", "local_epochs", "batch_size", "lr",
                                    "hidden_sizes", "seed"}), master),
        simulations=top.integer("simulations", DEFAULT_SIMULATIONS, minimum=1),
        aam=_parse_aam(top.sub("aam", {"lr", "epochs", "batch_size", "val_fraction",
                                       "patience", "seed"}), master),
        baselines=_parse_baselines(top.sub("baselines", {"methods", "tmc"}), master),
        experiment=_parse_experiment(top.sub("experiment", {"fractions", "seeds", "partial_seed",
                                                            "cost"}), master),
        raw=dict(data),
    )


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return resolve_config(data)


def with_master_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Re-resolve the original document under a different master seed; seeds
    the user pinned explicitly stay pinned."""
    data = dict(cfg.raw)
    data["seed"] = int(seed)
    return resolve_config(data)


def echo_dict(cfg: RunConfig) -> dict:
    """Fully-resolved, JSON-able view; parsing it back yields an equal config."""
    if isinstance(cfg.dataset, SyntheticDataSpec):
        dataset = {
            "kind": "synthetic",
            "classes": cfg.dataset.classes,
            "dim": cfg.dataset.dim,
            "spread": cfg.dataset.spread,
            "train_per_class": cfg.dataset.train_per_class,
            "test_per_class": cfg.dataset.test_per_class,
            "seed": cfg.dataset.seed,
        }
    else:
        dataset = {
            "kind": "idx",
            "train_images": cfg.dataset.train_images,
            "train_labels": cfg.dataset.train_labels,
            "test_images": cfg.dataset.test_images,
            "test_labels": cfg.dataset.test_labels,
        }
    noise = None
    if cfg.noise is not None:
        noise = {
            "kind": cfg.noise.kind.value,
            "client_fraction": cfg.noise.client_fraction,
            "sample_fraction": cfg.noise.sample_fraction,
            "seed": cfg.noise.seed,
        }
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "dataset": dataset,
        "partition": {
            "n_clients": cfg.partition.n_clients,
            "classes_per_client": "all" if cfg.partition.classes_per_client is None
            else cfg.partition.classes_per_client,
            "samples_per_client": cfg.partition.samples_per_client,
            "seed": cfg.partition.seed,
        },
        "noise": noise,
        "fl": {
            "rounds": cfg.fl.rounds,
            "local_epochs": cfg.fl.local_epochs,
            "batch_size": cfg.fl.batch_size,
            "lr": cfg.fl.lr,
            "hidden_sizes": list(cfg.fl.hidden_sizes),
            "seed": cfg.fl.seed,
        },
        "simulations": cfg.simulations,
        "aam": {
            "lr": cfg.aam.lr,
            "epochs": cfg.aam.epochs,
            "batch_size": cfg.aam.batch_size,
            "val_fraction": cfg.aam.val_fraction,
            "patience": cfg.aam.patience,
            "seed": cfg.aam.seed,
        },
        "baselines": {
            "methods": list(cfg.baselines.methods),
            "tmc": {
                "max_perms": cfg.baselines.tmc.max_perms,
                "trunc_tol": cfg.baselines.tmc.trunc_tol,
                "conv_tol": cfg.baselines.tmc.conv_tol,
                "seed": cfg.baselines.tmc.seed,
            },
        },
        "experiment": {
            "fractions": list(cfg.experiment.fractions),
            "seeds": list(cfg.experiment.seeds),
            "partial_seed": cfg.experiment.partial_seed,
            "cost": {
                "n_grid": list(cfg.experiment.cost.n_grid),
                "simulations": cfg.experiment.cost.simulations,
                "rounds": cfg.experiment.cost.rounds,
                "local_epochs": cfg.experiment.cost.local_epochs,
                "samples_per_client": cfg.experiment.cost.samples_per_client,
                "tmc_perms": cfg.experiment.cost.tmc_perms,
            },
        },
    }


def config_hash(cfg: RunConfig) -> str:
    """Short hash of the resolved config, used to prefix artifact file names."""
    canonical = json.dumps(echo_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:10]
