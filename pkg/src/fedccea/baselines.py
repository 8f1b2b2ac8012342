"""Client-level Leave-One-Out and Shapley valuation over a coalition utility.

The utility of a client subset is the final test accuracy of a federated
training run restricted to that subset, retrained from scratch under a fixed
seed so subset composition is the only varying factor. An exact enumeration
oracle (small n) validates the truncated Monte-Carlo estimator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .datasets import ClientPartition, LabeledDataset
from .errors import CapacityError
from .fl_engine import FLConfig, train_federated
from .nn_core import evaluate_accuracy, init_mlp
from .rng import RngStream
from .serialize import write_csv

EXACT_MAX_CLIENTS = 8


class UtilityFn:
    """Memoizing coalition -> utility map with evaluation counters.

    `evaluations` counts cache misses; `fl_runs` counts the misses that
    actually trained a model (every non-empty subset).
    """

    def __init__(self, fn: Callable[[tuple[int, ...]], float], n_clients: int):
        self._fn = fn
        self.n_clients = n_clients
        self._cache: dict[tuple[int, ...], float] = {}
        self.evaluations = 0
        self.fl_runs = 0

    def __call__(self, subset: Iterable[int]) -> float:
        key = tuple(sorted(set(int(i) for i in subset)))
        if key and not (0 <= key[0] and key[-1] < self.n_clients):
            raise ValueError(f"subset {key} outside [0, {self.n_clients})")
        if key not in self._cache:
            self.evaluations += 1
            if key:
                self.fl_runs += 1
            self._cache[key] = float(self._fn(key))
        return self._cache[key]


def federated_utility(
    partitions: Sequence[ClientPartition], test: LabeledDataset, cfg: FLConfig
) -> UtilityFn:
    """Subset -> final federated accuracy, fixed seed; the empty coalition is
    the seeded initial model's accuracy."""

    def evaluate(subset: tuple[int, ...]) -> float:
        if not subset:
            return evaluate_accuracy(init_mlp(cfg.model_spec, RngStream(cfg.seed)), test)
        return train_federated([partitions[i] for i in subset], None, test, cfg).final_accuracy

    return UtilityFn(evaluate, len(partitions))


@dataclass(frozen=True)
class ValuationResult:
    method: str  # "loo" | "tmc" | "exact"
    values: np.ndarray
    diagnostics: dict

    def __post_init__(self):
        if self.method not in ("loo", "tmc", "exact"):
            raise ValueError(f"unknown method {self.method!r}")


def _snapshot(utility: UtilityFn) -> tuple[int, int]:
    return utility.evaluations, utility.fl_runs


def _counts_since(utility: UtilityFn, before: tuple[int, int]) -> dict:
    return {
        "utility_evaluations": utility.evaluations - before[0],
        "fl_runs": utility.fl_runs - before[1],
    }


def loo_values(utility: UtilityFn, n: int) -> ValuationResult:
    """v_i = U(all) - U(all minus i); exactly n+1 distinct evaluations."""
    if n < 2:
        raise ValueError("need at least 2 clients")
    before = _snapshot(utility)
    everyone = tuple(range(n))
    full = utility(everyone)
    values = np.array([full - utility(everyone[:i] + everyone[i + 1 :]) for i in range(n)])
    return ValuationResult("loo", values, _counts_since(utility, before))


def exact_shapley(utility: UtilityFn, n: int) -> ValuationResult:
    """Enumerate all subsets (n <= 8): phi_i = sum over S not containing i of
    |S|!(n-|S|-1)!/n! * (U(S+i) - U(S))."""
    if n > EXACT_MAX_CLIENTS:
        raise CapacityError(f"exact enumeration supports n <= {EXACT_MAX_CLIENTS}, got {n}")
    if n < 1:
        raise ValueError("need at least 1 client")
    before = _snapshot(utility)
    values = np.zeros(n)
    others = list(range(n))
    for i in range(n):
        rest = [j for j in others if j != i]
        for size in range(n):
            weight = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
            for subset in combinations(rest, size):
                values[i] += weight * (utility(subset + (i,)) - utility(subset))
    return ValuationResult("exact", values, _counts_since(utility, before))


def tmc_shapley(
    utility: UtilityFn,
    n: int,
    max_perms: int,
    trunc_tol: float = 0.01,
    conv_tol: float = 1e-4,
    seed: int = 0,
) -> ValuationResult:
    """Truncated Monte-Carlo Shapley estimation.

    Scans seeded random permutations, accumulating prefix marginals. Once the
    running prefix utility is within trunc_tol of the full-coalition utility,
    the remaining marginals of that permutation are taken as 0 (the first
    position is always evaluated). Stops early when no estimate moved by more
    than conv_tol over the last 10 permutations.
    """
    if max_perms < 1:
        raise ValueError("max_perms must be at least 1")
    if not (trunc_tol > 0 and conv_tol > 0):
        raise ValueError("tolerances must be positive")
    before = _snapshot(utility)
    rng = RngStream(seed)
    full = utility(range(n))
    sums = np.zeros(n)
    history: list[np.ndarray] = []
    truncation_count = 0
    perms_used = 0
    for _ in range(max_perms):
        perm = rng.permutation(n)
        prefix: list[int] = []
        prev = utility(())
        for position, client in enumerate(perm):
            if position > 0 and abs(prev - full) < trunc_tol:
                truncation_count += n - position
                break
            prefix.append(int(client))
            current = utility(prefix)
            sums[client] += current - prev
            prev = current
        perms_used += 1
        history.append(sums / perms_used)
        if len(history) > 10:
            if np.abs(history[-1] - history[-11]).max() < conv_tol:
                break
    diagnostics = {
        "permutations_used": perms_used,
        "truncation_count": truncation_count,
        **_counts_since(utility, before),
    }
    return ValuationResult("tmc", history[-1].copy(), diagnostics)


def export_valuation_csv(results: Sequence[ValuationResult], path: str | Path) -> Path:
    rows = [
        (client_id, value, res.method)
        for res in results
        for client_id, value in enumerate(res.values)
    ]
    return write_csv(path, ("client_id", "value", "method"), rows)


def export_diagnostics_json(results: Sequence[ValuationResult], path: str | Path) -> Path:
    path = Path(path)
    payload = {res.method: res.diagnostics for res in results}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path
