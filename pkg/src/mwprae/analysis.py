"""Bottleneck feature extraction, segment labelling and exact t-SNE."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .channel import Dataset
from .rae import BOTTLENECK_LAYER, DOWNSAMPLING, LAYOUT, RaeParams, check_length, rae_forward
from .tensor import same_padding

log = logging.getLogger(__name__)

NEIGHBOURS = 10
MAX_POINTS = 2000
# bottleneck steps whose input segment is quieter than this fraction of the
# loudest segment carry no usable frequency label
SILENCE_FRACTION = 0.02


def extract_features(params: RaeParams, x: np.ndarray) -> np.ndarray:
    """Bottleneck feature vectors, one row per bottleneck time-step: shape (L/16, channels)."""
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    check_length(x.size)
    _, cache = rae_forward(x, params)
    return cache.bottleneck[0].T.copy()


def receptive_field(step: int, length: int) -> tuple[int, int]:
    """Inclusive range of input samples that can influence bottleneck ``step``."""
    lengths = [length]
    for transposed, k, stride, _ in LAYOUT[: BOTTLENECK_LAYER + 1]:
        lengths.append(-(-lengths[-1] // stride))
    lo = hi = step
    for i in range(BOTTLENECK_LAYER, -1, -1):
        _, k, stride, _ = LAYOUT[i]
        _, left, _ = same_padding(lengths[i], stride, k)
        lo, hi = lo * stride - left, hi * stride - left + k - 1
    return max(lo, 0), min(hi, length - 1)


def label_segments(x, sample_rate: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(frequency, amplitude) label for the 16-sample input segment under each bottleneck step.

    Frequency is the phase-difference estimate of the analytic signal, weighted
    over the segment; amplitude is the segment rms of the analytic envelope
    divided by sqrt(2), which equals the rms of a steady sinusoid.
    """
    fs = sample_rate if sample_rate is not None else getattr(x, "sample_rate", None)
    if fs is None:
        raise ValueError("sample_rate required for a plain array")
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    n_steps = x.size // DOWNSAMPLING
    a = hilbert(x)
    prod = np.append(a[1:] * np.conj(a[:-1]), a[-1] * np.conj(a[-2]))
    seg_prod = prod[: n_steps * DOWNSAMPLING].reshape(n_steps, DOWNSAMPLING).sum(axis=1)
    freq = np.abs(np.angle(seg_prod)) * fs / (2 * np.pi)
    env2 = (np.abs(a[: n_steps * DOWNSAMPLING]) ** 2).reshape(n_steps, DOWNSAMPLING)
    amp = np.sqrt(env2.mean(axis=1) / 2.0)
    return freq, amp


# ---------------------------------------------------------------------------- t-SNE


def _sq_distances(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_affinities(x: np.ndarray, perplexity: float = 30.0, tol: float = 1e-7,
                           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian conditionals p_{j|i} with per-point precision matched to ``perplexity``.

    Returns (P with rows summing to 1, precisions beta_i, achieved entropies in nats).
    All rows are bisected together.
    """
    d = _sq_distances(np.asarray(x, dtype=np.float64))
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    # shift each row by its nearest-neighbour distance; normalisation cancels it
    d_min = np.where(off, d, np.inf).min(axis=1, keepdims=True)
    d_shift = np.where(off, d - d_min, 0.0)
    target = np.log(perplexity)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for _ in range(max_iter):
        p = np.where(off, np.exp(-d_shift * beta[:, None]), 0.0)
        s = p.sum(axis=1)
        h = np.log(s) + beta * np.sum(d_shift * p, axis=1) / s
        diff = h - target
        if np.all(np.abs(diff) < tol):
            break
        up = diff > 0  # entropy too high -> sharpen
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(np.isinf(hi), beta * 2.0, (lo + hi) / 2.0)
    p = np.where(off, np.exp(-d_shift * beta[:, None]), 0.0)
    s = p.sum(axis=1)
    h = np.log(s) + beta * np.sum(d_shift * p, axis=1) / s
    return p / s[:, None], beta, h


def joint_affinities(p_cond: np.ndarray) -> np.ndarray:
    n = p_cond.shape[0]
    return (p_cond + p_cond.T) / (2.0 * n)


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-300)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_history: dict[int, float] = field(default_factory=dict)

    @property
    def final_kl(self) -> float:
        return self.kl_history[max(self.kl_history)]


def tsne(points, perplexity: float = 30.0, output_dims: int = 3, iterations: int = 1000, seed: int = 0,
         learning_rate: float = 200.0, exaggeration: float = 12.0, exaggeration_iters: int = 250,
         log_every: int = 50) -> TsneResult:
    """Exact O(N^2) t-SNE with early exaggeration, momentum switch and adaptive gains.

    Momentum is 0.5 for the first ``exaggeration_iters`` iterations and 0.8 after;
    the KL divergence (against the un-exaggerated P) is recorded every
    ``log_every`` iterations, at ``exaggeration_iters`` and at the end.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if perplexity < 2:
        raise ValueError(f"perplexity must be >= 2, got {perplexity}")
    min_points = int(np.floor(3 * perplexity)) + 1
    if n < min_points:
        raise ValueError(f"{n} points is too few for perplexity {perplexity}; need at least {min_points}")
    p_cond, _, _ = conditional_affinities(x, perplexity)
    p = np.maximum(joint_affinities(p_cond), 1e-300)
    np.fill_diagonal(p, 0.0)
    rng = np.random.default_rng(seed)
    y = 1e-4 * rng.standard_normal((n, output_dims))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    result = TsneResult(y)
    for it in range(iterations):
        if it == exaggeration_iters or (log_every and it % log_every == 0):
            result.kl_history[it] = kl_divergence(p, y)
        exag = exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        num = 1.0 / (1.0 + _sq_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        w = (exag * p - q) * num
        grad = 4.0 * (np.sum(w, axis=1)[:, None] * y - w @ y)
        same_sign = (grad > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    result.embedding = y
    result.kl_history[iterations] = kl_divergence(p, y)
    return result


# ------------------------------------------------------------------ dependency study


def neighbour_label_score(embedding: np.ndarray, labels: np.ndarray, k: int = NEIGHBOURS) -> float:
    """Mean label std among each point's ``k`` nearest embedded neighbours over the global std.

    Near 1 when labels are unrelated to the embedding; lower when points with
    similar labels sit together.
    """
    labels = np.asarray(labels, dtype=np.float64)
    d = _sq_distances(np.asarray(embedding, dtype=np.float64))
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.std(labels[nn], axis=1)) / np.std(labels))


@dataclass
class FeatureSet:
    vectors: np.ndarray
    freq: np.ndarray
    amp: np.ndarray
    source: np.ndarray  # (n, 2): example index, bottleneck step


def collect_features(params: RaeParams, inputs: np.ndarray, sample_rate: float, stride_subsample: int = 1,
                     max_points: int = MAX_POINTS) -> FeatureSet:
    """Labelled bottleneck vectors from every ``stride_subsample``-th step of every input row.

    Silent steps are dropped; if more than ``max_points`` remain they are thinned
    evenly.
    """
    vecs, freqs, amps, src = [], [], [], []
    for i, row in enumerate(inputs):
        f = extract_features(params, row)
        fl, al = label_segments(np.asarray(row, dtype=np.float64), sample_rate)
        steps = np.arange(0, len(f), stride_subsample)
        vecs.append(f[steps])
        freqs.append(fl[steps])
        amps.append(al[steps])
        src.append(np.column_stack([np.full(steps.size, i), steps]))
    fs = FeatureSet(np.concatenate(vecs), np.concatenate(freqs), np.concatenate(amps), np.concatenate(src))
    keep = fs.amp >= SILENCE_FRACTION * fs.amp.max()
    if keep.sum() > max_points:
        chosen = np.flatnonzero(keep)
        keep[:] = False
        keep[chosen[np.linspace(0, chosen.size - 1, max_points).round().astype(int)]] = True
    return FeatureSet(fs.vectors[keep], fs.freq[keep], fs.amp[keep], fs.source[keep])


@dataclass
class DependencyResult:
    features: FeatureSet
    embedding: np.ndarray
    freq_score: float
    amp_score: float
    shuffled_freq_score: float
    shuffled_amp_score: float
    final_kl: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y", "z", "freq_label", "amp_label", "example", "step"])
            for e, fr, am, (ex, st) in zip(self.embedding, self.features.freq, self.features.amp,
                                           self.features.source):
                w.writerow([*(repr(float(v)) for v in e), repr(float(fr)), repr(float(am)), int(ex), int(st)])


def dependency_study(params: RaeParams, dataset: Dataset, stride_subsample: int = 4,
                     max_points: int = MAX_POINTS, perplexity: float = 30.0, iterations: int = 1000,
                     seed: int = 0) -> DependencyResult:
    """Embed validation-split bottleneck features in 3-D and score label clustering."""
    _, distorted = dataset.val
    fs = collect_features(params, distorted, dataset.sample_rate, stride_subsample, max_points)
    log.info("t-SNE on %d feature points", len(fs.freq))
    res = tsne(fs.vectors, perplexity, 3, iterations, seed)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 3])).permutation(len(fs.freq))
    return DependencyResult(
        fs,
        res.embedding,
        neighbour_label_score(res.embedding, fs.freq),
        neighbour_label_score(res.embedding, fs.amp),
        neighbour_label_score(res.embedding, fs.freq[perm]),
        neighbour_label_score(res.embedding, fs.amp[perm]),
        res.final_kl,
    )
