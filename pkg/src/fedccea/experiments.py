"""Desk-scale studies: contribution skewness, zero-contributor exclusion,
client removal curves, partial-participation robustness, and evaluation-cost
accounting, with CSV and SVG emission."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .aam_evaluator import ContributionReport, contribution_values
from .baselines import federated_utility, loo_values, tmc_shapley
from .datasets import ClientPartition, LabeledDataset
from .errors import CapacityError
from .fl_engine import FLConfig, train_federated
from .rng import RngStream
from .serialize import write_csv
from .simulator import run_all

LEAST_FIRST = "least_first"
MOST_FIRST = "most_first"


@dataclass(frozen=True)
class RemovalCurve:
    direction: str  # LEAST_FIRST or MOST_FIRST
    points: tuple[tuple[float, float], ...]  # (fraction, retrained accuracy)

    def accuracy_at(self, fraction: float) -> float:
        for f, acc in self.points:
            if f == fraction:
                return acc
        raise KeyError(f"no point at fraction {fraction}")


@dataclass(frozen=True)
class SkewnessRow:
    method: str
    cci_min: float
    cci_max: float
    gini: float
    zero_count: int


@dataclass(frozen=True)
class ZeroExclusionResult:
    base_accuracy: float
    accuracy: dict[str, float | None]  # None when every client was excluded
    excluded: dict[str, int]


def gini_coefficient(values: np.ndarray) -> float:
    """Mean absolute difference normalized by twice the mean; 0 for a uniform
    vector, (n-1)/n for a one-hot vector."""
    v = np.asarray(values, dtype=np.float64)
    total = v.sum()
    if total == 0:
        return 0.0
    return float(np.abs(v[:, None] - v[None, :]).sum() / (2.0 * len(v) * total))


def skewness_report(cci_by_method: Mapping[str, np.ndarray]) -> list[SkewnessRow]:
    rows = []
    for method, cci in cci_by_method.items():
        cci = np.asarray(cci, dtype=np.float64)
        rows.append(
            SkewnessRow(
                method,
                float(cci.min()),
                float(cci.max()),
                gini_coefficient(cci),
                int((cci == 0.0).sum()),
            )
        )
    return rows


def zero_exclusion_retrain(
    reports: Mapping[str, ContributionReport],
    partitions: Sequence[ClientPartition],
    test: LabeledDataset,
    cfg: FLConfig,
) -> ZeroExclusionResult:
    """Retrain without each method's zero-index clients, next to the no-exclusion
    Base run (same seed, so a method that excludes nobody matches Base exactly)."""
    base = train_federated(partitions, None, test, cfg).final_accuracy
    accuracy: dict[str, float | None] = {}
    excluded: dict[str, int] = {}
    for method, report in reports.items():
        keep = [i for i in range(len(partitions)) if report.cci[i] > 0.0]
        excluded[method] = len(partitions) - len(keep)
        if not keep:
            accuracy[method] = None
        elif len(keep) == len(partitions):
            accuracy[method] = base
        else:
            accuracy[method] = train_federated(
                [partitions[i] for i in keep], None, test, cfg
            ).final_accuracy
    return ZeroExclusionResult(base, accuracy, excluded)


def _removal_count(fraction: float, n: int) -> int:
    # floor(f*n) with a guard against decimal fractions landing just under an integer
    return int(math.floor(fraction * n + 1e-9))


def _validate_fractions(fractions: Sequence[float], n: int) -> list[float]:
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f < 1.0 for f in fractions):
        raise ValueError("removal fractions must lie in [0, 1)")
    if _removal_count(max(fractions), n) >= n:
        raise CapacityError("a removal fraction would exclude every client")
    return fractions


def client_removal_curves(
    rank: np.ndarray,
    partitions: Sequence[ClientPartition],
    test: LabeledDataset,
    cfg: FLConfig,
    fractions: Sequence[float],
) -> tuple[RemovalCurve, RemovalCurve]:
    """Retrain from scratch at each fraction, excluding floor(f*n) clients from
    the low (least_first) or high (most_first) end of the contribution rank."""
    n = len(partitions)
    fractions = _validate_fractions(fractions, n)
    rank = np.asarray(rank, dtype=np.int64)
    cache: dict[tuple[int, ...], float] = {}

    def retrain_without(removed: np.ndarray) -> float:
        keep = tuple(i for i in range(n) if i not in set(int(r) for r in removed))
        if keep not in cache:
            cache[keep] = train_federated(
                [partitions[i] for i in keep], None, test, cfg
            ).final_accuracy
        return cache[keep]

    curves = []
    for direction in (LEAST_FIRST, MOST_FIRST):
        points = []
        for f in fractions:
            k = _removal_count(f, n)
            removed = rank[n - k :] if direction == LEAST_FIRST else rank[:k]
            points.append((f, retrain_without(removed)))
        curves.append(RemovalCurve(direction, tuple(points)))
    return curves[0], curves[1]


def partial_participation_curves(
    quality: np.ndarray,
    partitions: Sequence[ClientPartition],
    test: LabeledDataset,
    cfg: FLConfig,
    fractions: Sequence[float],
    seed: int,
) -> dict[tuple[str, str], RemovalCurve]:
    """Removal curves under per-round random participation.

    Partial mode draws one seeded proportion vector per round (shared across
    all fractions and directions so exclusion is the only difference), ranks
    clients by that round's contribution, and zeroes the excluded clients'
    sizes for that round only. Full mode uses full sizes and the static rank.
    Keys are (mode, direction) with mode in {"full", "partial"}.
    """
    n = len(partitions)
    fractions = _validate_fractions(fractions, n)
    sizes = np.array([len(p.dataset) for p in partitions], dtype=np.int64)
    x_full = sizes / sizes.mean()
    static_order = np.argsort(-contribution_values(quality, x_full), kind="stable")

    proportions = RngStream(seed).random((cfg.rounds, n))
    d_partial = np.floor(sizes * proportions).astype(np.int64)
    round_orders = [
        np.argsort(-contribution_values(quality, d_partial[r] / sizes.mean()), kind="stable")
        for r in range(cfg.rounds)
    ]

    curves: dict[tuple[str, str], RemovalCurve] = {}
    for mode in ("full", "partial"):
        for direction in (LEAST_FIRST, MOST_FIRST):
            points = []
            for f in fractions:
                k = _removal_count(f, n)
                schedule = []
                for r in range(cfg.rounds):
                    d = (sizes if mode == "full" else d_partial[r]).copy()
                    order = static_order if mode == "full" else round_orders[r]
                    dropped = order[n - k :] if direction == LEAST_FIRST else order[:k]
                    d[dropped] = 0
                    schedule.append(d)
                result = train_federated(partitions, schedule, test, cfg)
                points.append((f, result.final_accuracy))
            curves[(mode, direction)] = RemovalCurve(direction, tuple(points))
    return curves


@dataclass(frozen=True)
class CostRow:
    method: str
    n_clients: int
    fl_runs: int


def cost_report(
    build_problem: Callable[[int], tuple[list[ClientPartition], LabeledDataset, FLConfig]],
    n_grid: Sequence[int],
    methods: Sequence[str],
    simulations: int,
    master_seed: int,
    tmc_perms: int,
    trunc_tol: float = 0.01,
    conv_tol: float = 1e-4,
) -> list[CostRow]:
    """Count FL training runs per method across client counts.

    The simulator costs one run per simulation regardless of n; LOO costs
    n+1; the Monte-Carlo estimator is bounded by perms * n.
    """
    rows = []
    for n in n_grid:
        partitions, test, cfg = build_problem(int(n))
        store = run_all(partitions, test, cfg, simulations, master_seed)
        rows.append(CostRow("fedccea", n, len({rec.sim_id for rec in store.records})))
        if "loo" in methods:
            utility = federated_utility(partitions, test, cfg)
            result = loo_values(utility, n)
            rows.append(CostRow("loo", n, result.diagnostics["fl_runs"]))
        if "tmc" in methods:
            utility = federated_utility(partitions, test, cfg)
            result = tmc_shapley(utility, n, tmc_perms, trunc_tol, conv_tol, master_seed)
            rows.append(CostRow("tmc", n, result.diagnostics["fl_runs"]))
    return rows


@dataclass
class ExperimentResults:
    """Bundle of whichever studies were run, ready for emission."""

    cci_by_method: dict[str, np.ndarray] | None = None
    skewness: list[SkewnessRow] | None = None
    zero_exclusion: ZeroExclusionResult | None = None
    removal_rows: list[tuple[str, str, float, int, float]] = field(default_factory=list)
    partial_rows: list[tuple[str, str, float, int, float]] = field(default_factory=list)
    cost: list[CostRow] | None = None


def removal_rows_from_curves(
    method: str, seed: int, least: RemovalCurve, most: RemovalCurve
) -> list[tuple[str, str, float, int, float]]:
    """Flatten a curve pair into (method, direction, fraction, seed, accuracy) rows."""
    rows = []
    for curve in (least, most):
        for fraction, accuracy in curve.points:
            rows.append((method, curve.direction, fraction, seed, accuracy))
    return rows


def _chart_path(out_dir: Path, tag: str, name: str) -> Path:
    return out_dir / f"{tag}_{name}.svg"


def _save_chart(fig, path: Path, tag: str) -> Path:
    plt.rcParams["svg.hashsalt"] = tag
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _skewness_chart(cci_by_method: dict[str, np.ndarray], path: Path, tag: str) -> Path:
    methods = list(cci_by_method)
    fig, axes = plt.subplots(1, len(methods), figsize=(4 * len(methods), 3), squeeze=False)
    for ax, method in zip(axes[0], methods):
        cci = cci_by_method[method]
        ax.bar(np.arange(len(cci)), cci, color="tab:blue")
        ax.axhline(1.0 / len(cci), linestyle="--", color="gray", label="equal share")
        ax.set_title(method)
        ax.set_xlabel("client")
        ax.set_ylabel("contribution index")
    fig.tight_layout()
    return _save_chart(fig, path, tag)


def _curve_chart(
    rows: list[tuple[str, str, float, int, float]], path: Path, tag: str, title: str
) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series: dict[tuple[str, str], dict[float, list[float]]] = {}
    for method, direction, fraction, _, accuracy in rows:
        series.setdefault((method, direction), {}).setdefault(fraction, []).append(accuracy)
    for (method, direction), by_fraction in sorted(series.items()):
        fractions = sorted(by_fraction)
        means = [float(np.mean(by_fraction[f])) for f in fractions]
        style = "-" if direction == LEAST_FIRST else "--"
        ax.plot(fractions, means, style, marker="o", label=f"{method} {direction}")
    ax.set_xlabel("fraction removed")
    ax.set_ylabel("test accuracy")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save_chart(fig, path, tag)


def emit_outputs(results: ExperimentResults, out_dir: str | Path, tag: str) -> list[Path]:
    """Write the CSVs (and one SVG per figure-style study) for every study
    present in the bundle. Reruns with the same inputs produce byte-identical
    CSVs; file names are deterministic in the config tag."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if results.cci_by_method is not None:
        rows = [
            (method, client_id, value)
            for method, cci in results.cci_by_method.items()
            for client_id, value in enumerate(cci)
        ]
        written.append(write_csv(out_dir / f"{tag}_skewness.csv", ("method", "client_id", "cci"), rows))
        written.append(_skewness_chart(results.cci_by_method, _chart_path(out_dir, tag, "skewness"), tag))
    if results.zero_exclusion is not None:
        ze = results.zero_exclusion
        rows = [("base", ze.base_accuracy, 0)] + [
            (m, ze.accuracy[m] if ze.accuracy[m] is not None else "degenerate", ze.excluded[m])
            for m in sorted(ze.accuracy)
        ]
        written.append(
            write_csv(out_dir / f"{tag}_zero_exclusion.csv", ("method", "accuracy", "excluded_count"), rows)
        )
    if results.removal_rows:
        written.append(
            write_csv(
                out_dir / f"{tag}_removal.csv",
                ("method", "direction", "fraction", "seed", "accuracy"),
                results.removal_rows,
            )
        )
        written.append(
            _curve_chart(results.removal_rows, _chart_path(out_dir, tag, "removal"), tag, "client removal")
        )
    if results.partial_rows:
        written.append(
            write_csv(
                out_dir / f"{tag}_partial.csv",
                ("mode", "direction", "fraction", "seed", "accuracy"),
                results.partial_rows,
            )
        )
        written.append(
            _curve_chart(
                results.partial_rows, _chart_path(out_dir, tag, "partial"), tag, "partial participation"
            )
        )
    if results.cost is not None:
        rows = [(row.method, row.n_clients, row.fl_runs) for row in results.cost]
        written.append(write_csv(out_dir / f"{tag}_cost.csv", ("method", "n", "fl_runs"), rows))
    return written
