"""Phase 1: repeated FL simulations under per-round uniform data-size
sampling, logging (scaled-size vector, round accuracy) pairs."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import ClientPartition, LabeledDataset
from .errors import FormatError
from .fl_engine import FLConfig, run_round
from .nn_core import init_mlp
from .rng import RngStream
from .serialize import format_real, format_real_list, sha256_arrays


@dataclass(frozen=True)
class SizeSample:
    """Sampled proportions with the integer sizes and scaled sizes they induce."""

    p: np.ndarray  # proportions in (0, 1] per client
    d: np.ndarray  # d_i = floor(size_i * p_i)
    x: np.ndarray  # d / mean(full client sizes)


@dataclass(frozen=True)
class SimRecord:
    sim_id: int    # 1-based
    round_id: int  # 1-based
    x: np.ndarray
    accuracy: float


@dataclass(frozen=True)
class SimStore:
    """Ordered log of every simulated round, with a config fingerprint."""

    fingerprint: dict
    records: tuple[SimRecord, ...]

    def __post_init__(self):
        n_sims = int(self.fingerprint["simulations"])
        rounds = int(self.fingerprint["rounds"])
        seen = {(rec.sim_id, rec.round_id) for rec in self.records}
        expected = {(s, r) for s in range(1, n_sims + 1) for r in range(1, rounds + 1)}
        if seen != expected or len(self.records) != len(expected):
            raise ValueError("store must contain exactly one record per (simulation, round)")


def sample_proportions(n: int, rng: RngStream) -> np.ndarray:
    """n i.i.d. uniform draws on the open interval (0, 1); zeros are redrawn."""
    if n < 1:
        raise ValueError("n must be positive")
    p = rng.random(n)
    while True:
        zero = p == 0.0
        if not zero.any():
            return p
        p[zero] = rng.random(int(zero.sum()))


def scale_sizes(sizes: Sequence[int], p: np.ndarray) -> SizeSample:
    """Turn proportions into integer sizes (floor) and scaled sizes.

    The scale is the mean full client size, so with equal clients a full
    participant has scaled size exactly 1.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if sizes.shape != p.shape:
        raise ValueError(f"sizes shape {sizes.shape} != proportions shape {p.shape}")
    if (sizes <= 0).any():
        raise ValueError("client sizes must be positive")
    if (p <= 0).any() or (p > 1).any():
        raise ValueError("proportions must lie in (0, 1]")
    d = np.floor(sizes * p).astype(np.int64)
    mean_size = float(sizes.mean())
    return SizeSample(p, d, d / mean_size)


def run_simulation(
    partitions: Sequence[ClientPartition],
    test: LabeledDataset,
    cfg: FLConfig,
    sim_id: int,
    rng: RngStream,
) -> list[SimRecord]:
    """One R-round simulation; model state carries across rounds and
    proportions are resampled every round from `rng`.

    Every simulation restarts from the same seeded initial model (cfg.seed,
    exactly as a full training run would), so the size history is the only
    thing distinguishing one simulation from another.
    """
    sizes = [len(p.dataset) for p in partitions]
    params = init_mlp(cfg.model_spec, RngStream(cfg.seed))
    records = []
    for round_id in range(1, cfg.rounds + 1):
        sample = scale_sizes(sizes, sample_proportions(len(partitions), rng))
        outcome = run_round(params, partitions, sample.d, test, cfg)
        params = outcome.global_params
        records.append(SimRecord(sim_id, round_id, sample.x, outcome.accuracy))
    return records


def dataset_fingerprint(partitions: Sequence[ClientPartition], test: LabeledDataset) -> str:
    arrays = []
    for part in partitions:
        arrays += [part.dataset.features, part.dataset.labels]
    arrays += [test.features, test.labels]
    return sha256_arrays(*arrays)


def run_all(
    partitions: Sequence[ClientPartition],
    test: LabeledDataset,
    cfg: FLConfig,
    simulations: int,
    master_seed: int,
) -> SimStore:
    """Run `simulations` independent simulations; simulation s draws from the
    child stream (master_seed, s), so each is reproducible in isolation."""
    if simulations < 1:
        raise ValueError("simulations must be at least 1")
    base = RngStream(master_seed)
    records: list[SimRecord] = []
    for sim_id in range(1, simulations + 1):
        records.extend(run_simulation(partitions, test, cfg, sim_id, base.child(sim_id)))
    fingerprint = {
        "n_clients": len(partitions),
        "rounds": cfg.rounds,
        "simulations": simulations,
        "master_seed": master_seed,
        "fl_seed": cfg.seed,
        "dataset_sha256": dataset_fingerprint(partitions, test),
    }
    return SimStore(fingerprint, tuple(records))


def persist_store(store: SimStore, path: str | Path) -> Path:
    """JSON-lines: a fingerprint header, then one record per line with reals
    at 17 significant digits."""
    path = Path(path)
    lines = [json.dumps(store.fingerprint, sort_keys=True)]
    for rec in store.records:
        lines.append(
            '{"s":%d,"r":%d,"x":%s,"acc":%s}'
            % (rec.sim_id, rec.round_id, format_real_list(rec.x), format_real(rec.accuracy))
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def load_store(path: str | Path, expected_fingerprint: dict | None = None) -> SimStore:
    """Inverse of persist_store; warns when the stored fingerprint does not
    match the config the caller is about to use it with."""
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty store file")
    try:
        fingerprint = json.loads(lines[0])
        raw = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed store line: {exc}") from exc
    if not isinstance(fingerprint, dict) or "simulations" not in fingerprint:
        raise FormatError(f"{path}: first line is not a fingerprint header")
    try:
        records = tuple(
            SimRecord(int(r["s"]), int(r["r"]), np.asarray(r["x"], dtype=np.float64), float(r["acc"]))
            for r in raw
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: record missing field: {exc}") from exc
    try:
        store = SimStore(fingerprint, records)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if expected_fingerprint is not None and expected_fingerprint != fingerprint:
        warnings.warn(
            f"{path}: store fingerprint does not match the current config; "
            "results may mix incompatible runs",
            stacklevel=2,
        )
    return store
