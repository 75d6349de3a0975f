"""Adam, step learning-rate schedule, mini-batch training loop and checkpoints."""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import Dataset
from .rae import LAYOUT, RaeParams, check_length, init_params, mae_loss, rae_backward, rae_forward
from .tensor import ConvLayerParams

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: RaeParams, **hyper) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **hyper)


class NonFiniteError(FloatingPointError):
    """A gradient or loss went NaN/inf; training cannot continue."""


def adam_step(params: RaeParams, grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One in-place Adam update of ``params`` and ``state``.

    Moments and parameters are stored as float32; the update is evaluated in float64.
    """
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError(f"{len(grads)} gradient arrays for {len(arrays)} parameter arrays")
    for i, (a, g) in enumerate(zip(arrays, grads)):
        if g.shape != a.shape:
            raise ValueError(f"gradient {i} shape {g.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter array {i} at Adam step {state.step_count + 1}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m64 = b1 * m.astype(np.float64) + (1 - b1) * g
        v64 = b2 * v.astype(np.float64) + (1 - b2) * g * g
        m_hat = m64 / (1 - b1**t)
        v_hat = v64 / (1 - b2**t)
        a[...] = a.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        m[...] = m64
        v[...] = v64


@dataclass
class TrainConfig:
    total_iterations: int = 20000
    decay_at: int = 18000
    lr_before: float = 1e-3
    lr_after: float = 1e-4
    batch_size: int = 8
    master_seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 200

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.total_iterations and not self.decay_at < self.total_iterations:
            raise ValueError(f"decay_at={self.decay_at} must be < total_iterations={self.total_iterations}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    if not 0 <= iteration < cfg.total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.total_iterations})")
    return cfg.lr_before if iteration < cfg.decay_at else cfg.lr_after


@dataclass
class LossCurves:
    iterations: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def append(self, iteration: int, train_loss: float, val_loss: float) -> None:
        self.iterations.append(iteration)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "train_loss", "val_loss"])
            for row in zip(self.iterations, self.train_loss, self.val_loss):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def dataset_loss(params: RaeParams, distorted: np.ndarray, clean: np.ndarray, chunk: int = 16) -> float:
    """Mean MAE over a split, parameters untouched."""
    total = 0.0
    for s in range(0, len(clean), chunk):
        y, _ = rae_forward(distorted[s : s + chunk], params)
        total += float(np.sum(np.mean(np.abs(y - clean[s : s + chunk]), axis=-1)))
    return total / len(clean)


def train(dataset: Dataset, cfg: TrainConfig, params: RaeParams | None = None,
          checkpoint_dir=None) -> tuple[RaeParams, LossCurves, AdamState]:
    """Fit the network to map distorted rows onto clean rows.

    Each iteration draws ``batch_size`` training rows with replacement, averages
    the MAE loss and gradients over the batch and takes one Adam step. Train and
    validation losses over the full splits are logged at iteration 0, every
    ``log_every`` iterations and at the end.
    """
    train_clean, train_dist = dataset.train
    val_clean, val_dist = dataset.val
    if not len(train_clean) or not len(val_clean):
        raise ValueError("dataset needs non-empty train and validation splits")
    check_length(dataset.length)
    params = init_params(cfg.master_seed) if params is None else params
    state = AdamState.zeros_like(params)
    curves = LossCurves()
    if cfg.total_iterations == 0:
        return params, curves, state
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 1]))

    def record(i: int) -> None:
        tl = dataset_loss(params, train_dist, train_clean)
        vl = dataset_loss(params, val_dist, val_clean)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise NonFiniteError(f"non-finite logged loss at iteration {i}: train={tl} val={vl}")
        curves.append(i, tl, vl)
        log.info("iter %6d  train %.6f  val %.6f", i, tl, vl)

    record(0)
    for i in range(cfg.total_iterations):
        idx = rng.integers(0, len(train_clean), size=cfg.batch_size)
        y, cache = rae_forward(train_dist[idx], params)
        loss, g = mae_loss(y, train_clean[idx])
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite loss at iteration {i}, batch indices {idx.tolist()}")
        grads = rae_backward(cache, params, g)
        try:
            adam_step(params, grads.arrays(), state, lr_at(i, cfg))
        except NonFiniteError as e:
            raise NonFiniteError(f"{e}; iteration {i}, batch indices {idx.tolist()}") from None
        done = i + 1
        if cfg.log_every and done % cfg.log_every == 0 or done == cfg.total_iterations:
            record(done)
        if checkpoint_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"ckpt_{done:06d}.mwpc", params, state, done)
    return params, curves, state


CKPT_MAGIC = b"MWPC"
CKPT_VERSION = 1


def save_checkpoint(path, params: RaeParams, state: AdamState | None = None, iteration: int = 0) -> None:
    """Little-endian: magic, version, layer count, per layer dims (u32 x3) + weights + bias
    (float32), then iteration and an optimizer-present flag followed by Adam state."""
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(params.layers))]
    for layer in params.layers:
        parts.append(struct.pack("<3I", *layer.weights.shape))
        parts.append(np.asarray(layer.weights, "<f4").tobytes())
        parts.append(np.asarray(layer.bias, "<f4").tobytes())
    parts.append(struct.pack("<QI", iteration, state is not None))
    if state is not None:
        parts.append(struct.pack("<Qddd", state.step_count, state.beta1, state.beta2, state.epsilon))
        for a in state.m + state.v:
            parts.append(np.asarray(a, "<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated while reading {what} "
                                  f"(need {n} bytes at offset {self.pos}, file has {len(self.data)})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, shape, what: str) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n, what), "<f4").reshape(shape).astype(np.float32)


def load_checkpoint(path) -> tuple[RaeParams, AdamState | None, int]:
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    version, n_layers = r.unpack("<II", "header")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this reader supports {CKPT_VERSION}")
    if n_layers != len(LAYOUT):
        raise CheckpointError(f"{path}: {n_layers} layers, expected {len(LAYOUT)}")
    layers = []
    for i, (transposed, _, stride, _) in enumerate(LAYOUT):
        dims = r.unpack("<3I", f"layer {i} dims")
        w = r.floats(dims, f"layer {i} weights")
        b = r.floats((dims[1] if transposed else dims[0],), f"layer {i} bias")
        layers.append(ConvLayerParams(w, b, stride, transposed))
    try:
        params = RaeParams(layers)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from None
    iteration, has_state = r.unpack("<QI", "iteration")
    state = None
    if has_state:
        step, b1, b2, eps = r.unpack("<Qddd", "optimizer header")
        shapes = [a.shape for a in params.arrays()]
        m = [r.floats(s, "first moment") for s in shapes]
        v = [r.floats(s, "second moment") for s in shapes]
        state = AdamState(m, v, step, b1, b2, eps)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return params, state, iteration
