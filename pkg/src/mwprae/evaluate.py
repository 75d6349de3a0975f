"""Recovery metrics, spectrograms and the noise-robustness sweep."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import get_window

from .channel import AcquisitionConfig, ChannelModel, Dataset, reacquire
from .rae import RaeParams, rae_forward

AVG_COUNTS = (128, 64, 32, 16, 8, 4, 1)
AWGN_LEVELS = tuple(float(v) for v in np.geomspace(1e-3, 0.3, 10))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def improvement_db(mse_before: float, mse_after: float) -> float:
    """``10 log10(before / after)``; a perfect recovery (after == 0) gives ``math.inf``."""
    if mse_before <= 0 or mse_after < 0:
        raise ValueError(f"need mse_before > 0 and mse_after >= 0, got {mse_before}, {mse_after}")
    if mse_after == 0:
        return math.inf
    return 10.0 * math.log10(mse_before / mse_after)


def stft(x, window_len: int = 256, hop: int = 64) -> np.ndarray:
    """Hann-windowed DFT magnitudes, shape (frames, window_len // 2 + 1)."""
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if not 1 <= window_len <= x.size or hop < 1:
        raise ValueError(f"need 1 <= window_len <= {x.size} and hop >= 1, got {window_len}, {hop}")
    frames = (x.size - window_len) // hop + 1
    idx = np.arange(window_len) + hop * np.arange(frames)[:, None]
    return np.abs(np.fft.rfft(x[idx] * hann(window_len), axis=1))


def hann(n: int) -> np.ndarray:
    return get_window("hann", n)


def frame_energy(mag: np.ndarray, window_len: int) -> np.ndarray:
    """Per-frame energy from one-sided magnitudes (Parseval)."""
    w = np.full(mag.shape[-1], 2.0)
    w[0] = 1.0
    if window_len % 2 == 0:
        w[-1] = 1.0
    return np.sum(w * mag**2, axis=-1) / window_len


def stft_frequencies(window_len: int, sample_rate: float) -> np.ndarray:
    return np.fft.rfftfreq(window_len, 1.0 / sample_rate)


def write_spectrogram_csv(path, mag: np.ndarray, window_len: int, sample_rate: float) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([repr(float(v)) for v in stft_frequencies(window_len, sample_rate)])
        for row in mag:
            w.writerow([repr(float(v)) for v in row])


@dataclass
class RecoveryReport:
    mse_before: list[float] = field(default_factory=list)
    mse_after: list[float] = field(default_factory=list)
    improvement_db: list[float] = field(default_factory=list)
    dataset: str = ""
    channel: str = ""

    @property
    def mean_improvement_db(self) -> float:
        return float(np.mean(self.improvement_db))

    @property
    def mean_mse_before(self) -> float:
        return float(np.mean(self.mse_before))

    @property
    def mean_mse_after(self) -> float:
        return float(np.mean(self.mse_after))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "mse_before", "mse_after", "improvement_db"])
            for i, row in enumerate(zip(self.mse_before, self.mse_after, self.improvement_db)):
                w.writerow([i, *(repr(float(v)) for v in row)])


def recover(params: RaeParams, distorted: np.ndarray, chunk: int = 16) -> np.ndarray:
    out = np.empty(distorted.shape, np.float64)
    for s in range(0, len(distorted), chunk):
        out[s : s + chunk], _ = rae_forward(distorted[s : s + chunk], params)
    return out


def report(clean: np.ndarray, distorted: np.ndarray, recovered: np.ndarray, **ids) -> RecoveryReport:
    rep = RecoveryReport(**ids)
    for c, d, r in zip(clean, distorted, recovered):
        before, after = mse(d, c), mse(r, c)
        rep.mse_before.append(before)
        rep.mse_after.append(after)
        rep.improvement_db.append(improvement_db(before, after))
    return rep


def evaluate(params: RaeParams, clean: np.ndarray, distorted: np.ndarray, **ids) -> RecoveryReport:
    """Per-example MSE against ``clean`` before and after running the network."""
    return report(clean, distorted, recover(params, distorted), **ids)


def evaluate_split(params: RaeParams, dataset: Dataset) -> RecoveryReport:
    clean, distorted = dataset.val
    return evaluate(params, clean, distorted, dataset=str(dataset.meta.get("category", "")),
                    channel=str(dataset.meta.get("channel", "")))


@dataclass
class SweepPoint:
    noise_kind: str
    level: float
    mse_before: float
    mse_after: float


def noise_sweep(params: RaeParams, dataset: Dataset, model: ChannelModel, acq: AcquisitionConfig,
                awgn_levels=AWGN_LEVELS, avg_counts=AVG_COUNTS, seed: int = 0) -> list[SweepPoint]:
    """Robustness of a clean-trained network on the validation split.

    ``awgn`` points add white Gaussian noise of each rms to the stored distorted
    inputs; ``avg`` points re-acquire the split through ``model`` with fewer
    averaged shots at the native per-shot noise. Levels are rms for ``awgn`` and
    the averaging count for ``avg``.
    """
    clean, distorted = dataset.val
    clean = clean.astype(np.float64)
    points = []
    for j, level in enumerate(awgn_levels):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, j]))
        noisy = distorted + level * rng.standard_normal(distorted.shape)
        points.append(_point("awgn", level, clean, noisy, params))
    for k in avg_counts:
        noisy = reacquire(clean, model, replace(acq, avg_count=int(k)), dataset.sample_rate)
        points.append(_point("avg", k, clean, noisy, params))
    return points


def _point(kind: str, level: float, clean, noisy, params) -> SweepPoint:
    rep = evaluate(params, clean, noisy)
    return SweepPoint(kind, float(level), rep.mean_mse_before, rep.mean_mse_after)


def write_sweep_csv(path, points: list[SweepPoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["noise_kind", "level", "mse_before", "mse_after"])
        for p in points:
            w.writerow([p.noise_kind, repr(p.level), repr(p.mse_before), repr(p.mse_after)])
