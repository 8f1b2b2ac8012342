"""Phase 2: the accuracy approximation model and contribution indexing.

The model maps an n x R history of scaled data sizes (columns after the
observed round are zero-padded) to the round's test accuracy. One weight
vector is shared across all round columns, like a filter sliding over
rounds: column r collapses to the scalar X_r = sum_i history[i, r] *
quality_i. A sigmoid is applied to the X vector, a ten-node fully connected
layer and a linear scalar head produce the prediction. The shared vector is
projected onto >= 0 after every optimizer step, and after training it is
read off as per-client data quality. Contribution of client i is then
quality_i times its scaled data size, and the contribution index normalizes
the clamped values to sum to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, FormatError
from .rng import RngStream
from .serialize import format_real, format_real_list, write_csv
from .simulator import SimStore

HIDDEN_NODES = 10
DEFAULT_LEARNING_RATE = 0.01  # 0.05 suits harder, noisier targets
DEFAULT_EPOCHS = 500
DEFAULT_BATCH_SIZE = 32
PATIENCE = 20
MIN_IMPROVEMENT = 1e-4


@dataclass(frozen=True)
class AAMInput:
    """One training pair: zero-padded size history and the accuracy it led to."""

    history: np.ndarray  # (n_clients, rounds), columns > round_id are zero
    target: float
    sim_id: int
    round_id: int


@dataclass
class AAMParams:
    quality: np.ndarray      # (n,) shared first-layer weights, kept >= 0
    fc1_weights: np.ndarray  # (HIDDEN_NODES, rounds)
    fc1_bias: np.ndarray     # (HIDDEN_NODES,)
    out_weights: np.ndarray  # (HIDDEN_NODES,)
    out_bias: float

    @property
    def n_clients(self) -> int:
        return self.quality.shape[0]

    @property
    def rounds(self) -> int:
        return self.fc1_weights.shape[1]

    def copy(self) -> AAMParams:
        return AAMParams(
            self.quality.copy(),
            self.fc1_weights.copy(),
            self.fc1_bias.copy(),
            self.out_weights.copy(),
            float(self.out_bias),
        )


@dataclass(frozen=True)
class ContributionReport:
    """Raw values, clamped values, contribution index, and descending rank."""

    values: np.ndarray
    clamped: np.ndarray
    cci: np.ndarray
    rank: np.ndarray  # client ids, highest raw value first, ties by id
    degenerate: bool


def build_inputs(store: SimStore, n_clients: int, rounds: int) -> list[AAMInput]:
    """One input per logged round: columns 1..r hold that simulation's size
    vectors in round order, the remaining columns stay zero."""
    by_sim: dict[int, dict[int, "np.ndarray"]] = {}
    for rec in store.records:
        if rec.x.shape != (n_clients,):
            raise ConsistencyError(
                f"record ({rec.sim_id},{rec.round_id}) has size vector of length "
                f"{rec.x.shape[0]}, expected {n_clients}"
            )
        by_sim.setdefault(rec.sim_id, {})[rec.round_id] = rec
    inputs = []
    for sim_id in sorted(by_sim):
        rounds_seen = by_sim[sim_id]
        if sorted(rounds_seen) != list(range(1, rounds + 1)):
            raise ConsistencyError(f"simulation {sim_id} does not cover rounds 1..{rounds}")
        history = np.zeros((n_clients, rounds))
        for round_id in range(1, rounds + 1):
            rec = rounds_seen[round_id]
            history[:, round_id - 1] = rec.x
            inputs.append(AAMInput(history.copy(), rec.accuracy, sim_id, round_id))
    return inputs


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def init_aam(n_clients: int, rounds: int, rng: RngStream) -> AAMParams:
    """Quality starts in (0, 0.1) so the non-negativity projection is inactive;
    the FC layers get Glorot-uniform weights and zero biases."""
    quality = rng.uniform(0.0, 0.1, size=n_clients)
    a1 = np.sqrt(6.0 / (rounds + HIDDEN_NODES))
    fc1 = rng.uniform(-a1, a1, size=(HIDDEN_NODES, rounds))
    a2 = np.sqrt(6.0 / (HIDDEN_NODES + 1))
    out = rng.uniform(-a2, a2, size=HIDDEN_NODES)
    return AAMParams(quality, fc1, np.zeros(HIDDEN_NODES), out, 0.0)


def aam_forward(params: AAMParams, history: np.ndarray) -> float:
    """Predicted accuracy for one history matrix (may fall slightly outside
    [0,1]: the head is linear)."""
    history = np.asarray(history, dtype=np.float64)
    if history.shape != (params.n_clients, params.rounds):
        raise ValueError(
            f"history shape {history.shape} != ({params.n_clients}, {params.rounds})"
        )
    return float(_forward_batch(params, history[None, :, :])[0])


def _forward_batch(params: AAMParams, histories: np.ndarray) -> np.ndarray:
    collapsed = np.einsum("i,bir->br", params.quality, histories)
    hidden = _sigmoid(collapsed) @ params.fc1_weights.T + params.fc1_bias
    return hidden @ params.out_weights + params.out_bias


def mse_loss(params: AAMParams, histories: np.ndarray, targets: np.ndarray) -> float:
    pred = _forward_batch(params, histories)
    return float(((pred - targets) ** 2).mean())


def loss_gradients(params: AAMParams, histories: np.ndarray, targets: np.ndarray):
    """Backprop the mean squared error through the shared first layer.

    Returns (loss, dquality, dfc1_w, dfc1_b, dout_w, dout_b).
    """
    m = histories.shape[0]
    collapsed = np.einsum("i,bir->br", params.quality, histories)
    gate = _sigmoid(collapsed)
    hidden = gate @ params.fc1_weights.T + params.fc1_bias
    pred = hidden @ params.out_weights + params.out_bias
    err = pred - targets
    loss = float((err**2).mean())

    dpred = 2.0 * err / m
    dout_w = hidden.T @ dpred
    dout_b = float(dpred.sum())
    dhidden = np.outer(dpred, params.out_weights)
    dfc1_w = dhidden.T @ gate
    dfc1_b = dhidden.sum(axis=0)
    dcollapsed = (dhidden @ params.fc1_weights) * gate * (1.0 - gate)
    dquality = np.einsum("br,bir->i", dcollapsed, histories)
    return loss, dquality, dfc1_w, dfc1_b, dout_w, dout_b


def _mae(params: AAMParams, histories: np.ndarray, targets: np.ndarray) -> float:
    return float(np.abs(_forward_batch(params, histories) - targets).mean())


def train_aam(
    inputs: Sequence[AAMInput],
    lr: float = DEFAULT_LEARNING_RATE,
    epochs: int = DEFAULT_EPOCHS,
    val_fraction: float = 0.1,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    patience: int = PATIENCE,
) -> tuple[AAMParams, float]:
    """Fit the model by mini-batch SGD on squared error.

    The quality vector is projected elementwise onto >= 0 after every update.
    A seeded val_fraction split tracks held-out mean absolute error; training
    stops at the epoch budget or after `patience` epochs without improving
    the best MAE by MIN_IMPROVEMENT. The quality ordering keeps sharpening
    long after the MAE has flattened, so runs that care about the ranking
    should raise `patience` and let the epoch budget do the stopping.
    Returns the best-validation parameters and their held-out MAE.
    """
    if len(inputs) < 10:
        raise ValueError(f"need at least 10 inputs to fit, got {len(inputs)}")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if patience < 1:
        raise ValueError("patience must be at least 1")

    histories = np.stack([inp.history for inp in inputs])
    targets = np.asarray([inp.target for inp in inputs])
    n_clients, rounds = histories.shape[1:]

    rng = RngStream(seed)
    order = rng.permutation(len(inputs))
    n_val = max(1, int(round(val_fraction * len(inputs))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    val_h, val_t = histories[val_idx], targets[val_idx]

    params = init_aam(n_clients, rounds, rng)
    best = params.copy()
    best_mae = _mae(params, val_h, val_t)
    stall = 0
    for _ in range(epochs):
        epoch_order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(epoch_order), batch_size):
            batch = epoch_order[start : start + batch_size]
            _, dq, dw1, db1, dwo, dbo = loss_gradients(params, histories[batch], targets[batch])
            params.quality -= lr * dq
            params.fc1_weights -= lr * dw1
            params.fc1_bias -= lr * db1
            params.out_weights -= lr * dwo
            params.out_bias -= lr * dbo
            np.maximum(params.quality, 0.0, out=params.quality)
        mae = _mae(params, val_h, val_t)
        if mae < best_mae - MIN_IMPROVEMENT:
            best, best_mae, stall = params.copy(), mae, 0
        else:
            stall += 1
            if stall >= patience:
                break
    return best, best_mae


def extract_quality(params: AAMParams) -> np.ndarray:
    """Copy of the shared first-layer weights; one non-negative entry per client."""
    return params.quality.copy()


def contribution_values(quality: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Contribution = data quality times scaled data size, elementwise."""
    quality = np.asarray(quality, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if quality.shape != x.shape:
        raise ValueError(f"quality shape {quality.shape} != size shape {x.shape}")
    return x * quality


def compute_cci(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clamp negatives to zero and normalize to sum to 1.

    Returns (cci, degenerate); an all-zero clamped vector yields an all-zero
    index with the degenerate flag set instead of an error.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("values must be non-empty")
    clamped = np.maximum(values, 0.0)
    total = clamped.sum()
    if total == 0.0:
        return np.zeros_like(clamped), True
    return clamped / total, False


def make_report(values: np.ndarray) -> ContributionReport:
    """Full report for a raw value vector; ranking uses the raw (pre-clamp)
    values so negative contributors keep their relative order."""
    values = np.asarray(values, dtype=np.float64)
    cci, degenerate = compute_cci(values)
    rank = np.argsort(-values, kind="stable")
    return ContributionReport(values, np.maximum(values, 0.0), cci, rank, degenerate)


def export_aam(params: AAMParams, fingerprint: dict, path: str | Path) -> Path:
    """JSON export with reals at 17 significant digits."""
    path = Path(path)
    fc1_rows = ",".join(format_real_list(row) for row in params.fc1_weights)
    payload = (
        "{\n"
        f'"fingerprint":{json.dumps(fingerprint, sort_keys=True)},\n'
        f'"quality":{format_real_list(params.quality)},\n'
        f'"fc1_weights":[{fc1_rows}],\n'
        f'"fc1_bias":{format_real_list(params.fc1_bias)},\n'
        f'"out_weights":{format_real_list(params.out_weights)},\n'
        f'"out_bias":{format_real(params.out_bias)}\n'
        "}\n"
    )
    path.write_text(payload)
    return path


def load_aam(path: str | Path) -> tuple[AAMParams, dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        params = AAMParams(
            np.asarray(doc["quality"], dtype=np.float64),
            np.asarray(doc["fc1_weights"], dtype=np.float64),
            np.asarray(doc["fc1_bias"], dtype=np.float64),
            np.asarray(doc["out_weights"], dtype=np.float64),
            float(doc["out_bias"]),
        )
        return params, doc["fingerprint"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a valid model export: {exc}") from exc


def export_report_csv(report: ContributionReport, path: str | Path) -> Path:
    """CSV rows per client: raw value, clamped value, index, and 1-based rank."""
    position = np.empty(len(report.values), dtype=np.int64)
    position[report.rank] = np.arange(1, len(report.values) + 1)
    rows = [
        (i, report.values[i], report.clamped[i], report.cci[i], position[i])
        for i in range(len(report.values))
    ]
    return write_csv(path, ("client_id", "v", "v_clamped", "cci", "rank"), rows)
