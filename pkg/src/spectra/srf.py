"""Spectrally restricted finetuning.

The adapter keeps a frozen factorization and trains only an r x r block
of spectral coefficients sitting on the contiguous rank interval
[start, start + width): the effective weight is U (Sigma + A) V^T with A
zero outside that block. Gradients are exact projections of the dense
weight gradient into the frozen block, so training never introduces new
singular directions.

The training objective here is least-squares regression of the layer
output against a target linear map; batches are consumed from a data
source via `batch(step)`, and the bundled synthetic tasks serve one
fixed batch so runs are exactly repeatable and the optimum has a closed
form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import TrainingDivergedError
from .linalg import SvdFactorization, WeightMatrix
from .rng import stream_for


@dataclass
class SpectralAdapter:
    """Frozen basis plus a trainable spectral block."""

    base: SvdFactorization
    start: int
    width: int
    block: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (0 <= self.start and self.width >= 1 and self.start + self.width <= self.base.p):
            raise ValueError(
                f"spectral interval [{self.start}, {self.start + self.width}) outside [0, {self.base.p}]"
            )
        if self.block is None:
            # start exactly at the pretrained function
            self.block = np.zeros((self.width, self.width))
        else:
            self.block = np.array(self.block, dtype=float)
            if self.block.shape != (self.width, self.width):
                raise ValueError(f"block must be {self.width} x {self.width}")
        for arr in (self.base.U, self.base.S, self.base.V):
            arr.setflags(write=False)

    @property
    def u_block(self) -> np.ndarray:
        return self.base.U[:, self.start : self.start + self.width]

    @property
    def v_block(self) -> np.ndarray:
        return self.base.V[:, self.start : self.start + self.width]


def adapter_effective_weight(adapter: SpectralAdapter) -> WeightMatrix:
    """U (Sigma + A) V^T as a dense matrix."""
    f = adapter.base
    w = (f.U * f.S) @ f.V.T + adapter.u_block @ adapter.block @ adapter.v_block.T
    return WeightMatrix(w, name=f.name)


def adapter_forward(adapter: SpectralAdapter, x: np.ndarray) -> np.ndarray:
    """Apply the effective weight to x (shape (n,) or (n, batch)) in
    factored form, cost O((m + n) p) per column."""
    f = adapter.base
    vec = x.ndim == 1
    xc = x[:, None] if vec else x
    if xc.shape[0] != f.V.shape[0]:
        raise ValueError(f"input has {xc.shape[0]} rows, expected {f.V.shape[0]}")
    z = f.V.T @ xc
    w = f.S[:, None] * z
    w[adapter.start : adapter.start + adapter.width] += adapter.block @ z[adapter.start : adapter.start + adapter.width]
    y = f.U @ w
    return y[:, 0] if vec else y


def adapter_grad(adapter: SpectralAdapter, weight_grad: np.ndarray) -> np.ndarray:
    """Exact gradient w.r.t. the trainable block given the dense
    gradient w.r.t. the effective weight: U_B^T G V_B."""
    if weight_grad.shape != adapter.base.shape:
        raise ValueError(f"gradient shape {weight_grad.shape} != weight shape {adapter.base.shape}")
    return adapter.u_block.T @ weight_grad @ adapter.v_block


def finite_diff_check(
    adapter: SpectralAdapter,
    loss: Callable[[np.ndarray], float],
    loss_grad: Callable[[np.ndarray], np.ndarray],
    step: float = 1e-5,
) -> float:
    """Max relative disagreement between the analytic block gradient and
    central finite differences of the loss through the effective weight."""
    if step <= 0:
        raise ValueError("step must be positive")
    w0 = adapter_effective_weight(adapter).values
    analytic = adapter_grad(adapter, np.asarray(loss_grad(w0), dtype=float))
    ub, vb = adapter.u_block, adapter.v_block
    worst = 0.0
    for i in range(adapter.width):
        for j in range(adapter.width):
            bump = np.outer(ub[:, i], vb[:, j])
            lp = float(loss(w0 + step * bump))
            lm = float(loss(w0 - step * bump))
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError("loss returned a non-finite value")
            cd = (lp - lm) / (2.0 * step)
            err = abs(analytic[i, j] - cd) / max(1e-12, abs(cd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    learning_rate: float
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TrainLog:
    losses: np.ndarray
    grad_norms: np.ndarray
    final_blocks: tuple[np.ndarray, ...]

    @property
    def final_block(self) -> np.ndarray:
        return self.final_blocks[0]

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


class FixedBatch:
    """Data source that serves the same (x, y) batch at every step."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        if x.shape[1] != y.shape[1]:
            raise ValueError("x and y must have the same number of columns")
        self.x = x
        self.y = y

    def batch(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        return self.x, self.y


class _Optimizer:
    def __init__(self, cfg: TrainConfig, shapes: Sequence[tuple[int, int]]):
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self.m = [np.zeros(s) for s in shapes]
            self.v = [np.zeros(s) for s in shapes]

    def update(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        if cfg.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
            return
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def _batch_loss_and_residual(y_hat: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    # squared residual norm averaged over the batch columns
    r = y_hat - y
    return float(np.sum(r * r) / r.shape[1]), r


def train_srf(adapter: SpectralAdapter, data, cfg: TrainConfig) -> TrainLog:
    """Gradient-train the adapter's block on (x, y) batches.

    The frozen base is never touched; only the block is updated, in
    place. Loss per step is the squared residual norm of W x - y
    averaged over the batch. Raises TrainingDivergedError (with the step
    index) if the loss goes non-finite.
    """
    return train_srf_chain([adapter], data, cfg)


def train_srf_chain(adapters: Sequence[SpectralAdapter], data, cfg: TrainConfig) -> TrainLog:
    """Jointly train a chain of adapters composing a deep linear map.

    adapters[0] consumes the input; each next adapter must accept the
    previous one's output dimension. Backpropagation through the frozen
    bases is exact.
    """
    chain = list(adapters)
    if not chain:
        raise ValueError("no adapters to train")
    for up, down in zip(chain, chain[1:]):
        if down.base.shape[1] != up.base.shape[0]:
            raise ValueError(
                f"chain mismatch: {up.base.shape} feeds {down.base.shape}"
            )

    opt = _Optimizer(cfg, [a.block.shape for a in chain])
    losses = np.empty(cfg.steps)
    grad_norms = np.empty(cfg.steps)

    for step in range(cfg.steps):
        x, y = data.batch(step)
        batch = x.shape[1]

        activations = [x]
        for a in chain:
            activations.append(adapter_forward(a, activations[-1]))
        loss, resid = _batch_loss_and_residual(activations[-1], y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)

        # backward pass: delta is dL/d(output of layer l)
        delta = (2.0 / batch) * resid
        grads: list[np.ndarray] = [None] * len(chain)  # type: ignore[list-item]
        for l in range(len(chain) - 1, -1, -1):
            a = chain[l]
            h_in = activations[l]
            grads[l] = (a.u_block.T @ delta) @ (a.v_block.T @ h_in).T
            if l > 0:
                f = a.base
                z = f.U.T @ delta
                w = f.S[:, None] * z
                w[a.start : a.start + a.width] += a.block.T @ z[a.start : a.start + a.width]
                delta = f.V @ w

        losses[step] = loss
        grad_norms[step] = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        opt.update([a.block for a in chain], grads)

    return TrainLog(
        losses=losses,
        grad_norms=grad_norms,
        final_blocks=tuple(a.block.copy() for a in chain),
    )


def write_train_log(log: TrainLog, path) -> None:
    """TrainLog as CSV: step, loss, grad_norm."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("# spectra srf-train v1\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "grad_norm"])
        for i, (loss, gn) in enumerate(zip(log.losses, log.grad_norms)):
            writer.writerow([i, f"{loss:.12g}", f"{gn:.12g}"])


# ---------------------------------------------------------------------------
# synthetic tasks (fixed design matrix, closed-form optimum)


@dataclass(frozen=True)
class SyntheticTask:
    source: FixedBatch
    target_weight: np.ndarray
    target_block: np.ndarray | None


def make_recovery_task(
    base: SvdFactorization,
    start: int,
    width: int,
    batch_size: int,
    data_seed: int,
    target_seed: int,
    block_scale: float = 1.0,
) -> SyntheticTask:
    """Regression target inside the trainable block: the optimum block
    equals the planted one and the minimal loss is zero."""
    n = base.shape[1]
    planted = block_scale * stream_for(target_seed, base.name, 0).normals(width * width).reshape(width, width)
    w0 = (base.U * base.S) @ base.V.T
    ub = base.U[:, start : start + width]
    vb = base.V[:, start : start + width]
    target = w0 + ub @ planted @ vb.T
    x = stream_for(data_seed, base.name, 0).normals(n * batch_size).reshape(n, batch_size)
    return SyntheticTask(source=FixedBatch(x, target @ x), target_weight=target, target_block=planted)


def make_outside_task(
    base: SvdFactorization,
    batch_size: int,
    data_seed: int,
    outside_rank: int,
    scale: float = 0.5,
) -> SyntheticTask:
    """Regression target displaced along a singular direction outside
    the trainable block; no block value can reach zero loss."""
    if not 0 <= outside_rank < base.p:
        raise ValueError(f"outside rank {outside_rank} not in [0, {base.p})")
    n = base.shape[1]
    w0 = (base.U * base.S) @ base.V.T
    target = w0 + scale * np.outer(base.U[:, outside_rank], base.V[:, outside_rank])
    x = stream_for(data_seed, base.name, 0).normals(n * batch_size).reshape(n, batch_size)
    return SyntheticTask(source=FixedBatch(x, target @ x), target_weight=target, target_block=None)


# ---------------------------------------------------------------------------
# configuration sweeps


def rank_budget_sweep(base: SvdFactorization, data, budgets: Sequence[int], cfg: TrainConfig) -> list[tuple[int, float]]:
    """Train once per rank budget (block anchored at start 0) and report
    (budget, final loss) rows in input order."""
    rows = []
    for r in budgets:
        adapter = SpectralAdapter(base, start=0, width=int(r))
        rows.append((int(r), train_srf(adapter, data, cfg).final_loss))
    return rows


def block_location_sweep(
    base: SvdFactorization, data, starts: Sequence[int], width: int, cfg: TrainConfig
) -> list[tuple[int, float]]:
    """Train once per block starting index at fixed width; report
    (start, final loss) rows in input order."""
    rows = []
    for k in starts:
        adapter = SpectralAdapter(base, start=int(k), width=int(width))
        rows.append((int(k), train_srf(adapter, data, cfg).final_loss))
    return rows
