"""Defective analog link models, averaged acquisition and dataset files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import firwin

from .signals import (
    DEFAULT_LENGTH,
    DEFAULT_PEAK,
    DEFAULT_SAMPLE_RATE,
    Waveform,
    fractional_delay,
    normalize,
    random_transmit,
    sample_target_scene,
    synthesize_echo,
)

# per-shot AWGN putting a full-scale (0.9 peak) tone 28 dB above the noise
DEFAULT_NOISE_RMS = DEFAULT_PEAK / np.sqrt(2.0) * 10 ** (-28.0 / 20.0)
DEFAULT_AVG_COUNT = 128


@dataclass
class InterleaveMismatch:
    num_channels: int
    gains: tuple[float, ...]
    offsets: tuple[float, ...]
    skews: tuple[float, ...]

    def __post_init__(self):
        if self.num_channels < 1:
            raise ValueError(f"num_channels must be >= 1, got {self.num_channels}")
        self.gains, self.offsets, self.skews = (tuple(map(float, v)) for v in (self.gains, self.offsets, self.skews))
        for name in ("gains", "offsets", "skews"):
            if len(getattr(self, name)) != self.num_channels:
                raise ValueError(f"{name} must have {self.num_channels} entries, got {len(getattr(self, name))}")


@dataclass
class ChannelModel:
    """Nonlinearity -> FIR -> interleave mismatch. ``None`` stages are skipped."""

    nonlinearity_beta: float | None = None
    filter_taps: tuple[float, ...] | None = None
    interleave: InterleaveMismatch | None = None
    preset_name: str = "custom"

    def __post_init__(self):
        if self.nonlinearity_beta is not None:
            _check_beta(self.nonlinearity_beta)
        if self.filter_taps is not None:
            self.filter_taps = tuple(float(t) for t in self.filter_taps)
            if not self.filter_taps or not np.all(np.isfinite(self.filter_taps)):
                raise ValueError("filter_taps must be non-empty and finite")


@dataclass
class AcquisitionConfig:
    noise_rms: float = DEFAULT_NOISE_RMS
    avg_count: int = DEFAULT_AVG_COUNT
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_rms < 0:
            raise ValueError(f"noise_rms must be >= 0, got {self.noise_rms}")
        if self.avg_count < 1:
            raise ValueError(f"avg_count must be >= 1, got {self.avg_count}")


def pps_like() -> ChannelModel:
    return ChannelModel(1.2, tuple(firwin(31, 0.35)), None, "pps-like")


def padc_like() -> ChannelModel:
    mismatch = InterleaveMismatch(
        4,
        gains=(1.05, 0.95, 1.03, 0.97),
        offsets=(0.01, -0.01, 0.005, -0.005),
        skews=(0.1, -0.1, 0.05, -0.05),
    )
    return replace(pps_like(), interleave=mismatch, preset_name="padc-like")


PRESETS = {"pps-like": pps_like, "padc-like": padc_like}


def preset(name: str) -> ChannelModel:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; choose from {sorted(PRESETS)}") from None


def _check_beta(beta: float) -> None:
    if not 0 < beta <= np.pi / 2:
        raise ValueError(f"nonlinearity beta must be in (0, pi/2], got {beta}")


def apply_nonlinearity(w: Waveform, beta: float) -> Waveform:
    """Sine transfer ``sin(beta x) / sin(beta)``: unit gain at full scale, odd harmonics."""
    _check_beta(beta)
    if np.max(np.abs(w.samples)) > 1.0:
        raise ValueError("nonlinearity input exceeds full scale |x| <= 1; normalize first")
    return w.replace(np.sin(beta * w.samples) / np.sin(beta))


def apply_fir(w: Waveform, taps) -> Waveform:
    """Linear convolution cropped to the input length, centred on the middle tap."""
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 1 or taps.size == 0:
        raise ValueError("taps must be a non-empty 1-D sequence")
    full = np.convolve(w.samples, taps)
    start = (taps.size - 1) // 2
    return w.replace(full[start : start + len(w)])


def apply_interleave_mismatch(w: Waveform, mm: InterleaveMismatch) -> Waveform:
    """Sample ``n`` goes through sub-channel ``n mod M``: gain, offset and timing skew."""
    x = w.samples
    m = np.arange(len(w)) % mm.num_channels
    skews = np.asarray(mm.skews)[m]
    delayed = fractional_delay(x, skews) if np.any(skews) else x
    return w.replace(np.asarray(mm.gains)[m] * delayed + np.asarray(mm.offsets)[m])


def apply_channel(w: Waveform, model: ChannelModel) -> Waveform:
    out = w
    if model.nonlinearity_beta is not None:
        out = apply_nonlinearity(out, model.nonlinearity_beta)
    if model.filter_taps is not None:
        out = apply_fir(out, model.filter_taps)
    if model.interleave is not None:
        out = apply_interleave_mismatch(out, model.interleave)
    return out.replace(out.samples, label=f"{w.label}|{model.preset_name}")


def acquire(w: Waveform, cfg: AcquisitionConfig) -> Waveform:
    """Average ``avg_count`` independently noisy captures of ``w``."""
    if cfg.noise_rms == 0:
        return w.replace(w.samples.copy())
    rng = np.random.default_rng(cfg.rng_seed)
    acc = np.zeros(len(w))
    for _ in range(cfg.avg_count):
        acc += w.samples + cfg.noise_rms * rng.standard_normal(len(w))
    return w.replace(acc / cfg.avg_count)


def example_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """(signal seed, noise seed) for one dataset example, independent of build order."""
    state = np.random.SeedSequence([master_seed, index]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def make_example(category: str, model: ChannelModel, acq: AcquisitionConfig, master_seed: int, index: int,
                 length: int = DEFAULT_LENGTH, sample_rate: float = DEFAULT_SAMPLE_RATE,
                 peak: float = DEFAULT_PEAK) -> tuple[Waveform, Waveform]:
    """One (clean, distorted) pair. The receive window opens on the nearest scatterer's echo."""
    sig_seed, noise_seed = example_seeds(master_seed, index)
    rng = np.random.default_rng(sig_seed)
    scene = sample_target_scene(rng)
    tx = random_transmit(category, rng, length, sample_rate)
    # range at t = 0, so no echo starts before the window
    gate = min(s.range_offset + s.spin_radius * np.sin(s.spin_phase) for s in scene.scatterers)
    clean = synthesize_echo(tx, scene, peak=peak, range_gate=gate)
    clean = clean.replace(clean.samples, label=f"{category} seed={master_seed} idx={index}")
    noise_cfg = replace(acq, rng_seed=int(np.random.SeedSequence([acq.rng_seed, noise_seed]).generate_state(1)[0]))
    distorted = acquire(apply_channel(clean, model), noise_cfg)
    return clean, distorted


MAGIC = b"MWPD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdI")


@dataclass
class Dataset:
    """Index-aligned clean / distorted waveform pairs; rows ``[:split]`` train, ``[split:]`` validate."""

    clean: np.ndarray
    distorted: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    split: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.clean = np.asarray(self.clean, dtype=np.float32)
        self.distorted = np.asarray(self.distorted, dtype=np.float32)
        if self.clean.ndim != 2 or self.clean.shape != self.distorted.shape:
            raise ValueError(f"clean {self.clean.shape} and distorted {self.distorted.shape} must be equal 2-D")
        if not 0 <= self.split <= len(self.clean):
            raise ValueError(f"split {self.split} outside [0, {len(self.clean)}]")

    def __len__(self) -> int:
        return self.clean.shape[0]

    @property
    def length(self) -> int:
        return self.clean.shape[1]

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.clean[: self.split], self.distorted[: self.split]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.clean[self.split :], self.distorted[self.split :]

    def save(self, path) -> None:
        header = _HEADER.pack(MAGIC, VERSION, len(self), self.length, float(self.sample_rate), self.split)
        body = np.stack([self.clean, self.distorted], axis=1).astype("<f4")
        with open(path, "wb") as f:
            f.write(header)
            f.write(body.tobytes())

    @classmethod
    def load(cls, path) -> Dataset:
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValueError(f"{path}: truncated dataset header ({len(data)} bytes)")
        magic, version, count, length, fs, split = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValueError(f"{path}: dataset version {version}, this reader supports {VERSION}")
        expected = _HEADER.size + count * 2 * length * 4
        if len(data) != expected:
            raise ValueError(f"{path}: size {len(data)} bytes, header implies {expected}")
        body = np.frombuffer(data, "<f4", offset=_HEADER.size).reshape(count, 2, length)
        return cls(body[:, 0].astype(np.float32), body[:, 1].astype(np.float32), fs, split)


def build_dataset(category: str, model: ChannelModel, acq: AcquisitionConfig, count: int = 250,
                  split: tuple[int, int] = (200, 50), master_seed: int = 0, length: int = DEFAULT_LENGTH,
                  sample_rate: float = DEFAULT_SAMPLE_RATE, peak: float = DEFAULT_PEAK) -> Dataset:
    """Generate ``count`` (clean, distorted) pairs; example ``i`` depends only on (master_seed, i)."""
    if len(split) != 2 or min(split) < 0 or sum(split) != count:
        raise ValueError(f"split {tuple(split)} must be two non-negative sizes summing to count={count}")
    clean = np.empty((count, length), np.float32)
    distorted = np.empty((count, length), np.float32)
    for i in range(count):
        c, d = make_example(category, model, acq, master_seed, i, length, sample_rate, peak)
        clean[i], distorted[i] = c.samples, d.samples
    meta = {"category": category, "channel": model.preset_name, "master_seed": master_seed}
    return Dataset(clean, distorted, sample_rate, split[0], meta)


def reacquire(clean: np.ndarray, model: ChannelModel, acq: AcquisitionConfig,
              sample_rate: float = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Distorted copies of stored clean rows under a different acquisition setting."""
    out = np.empty(clean.shape, np.float32)
    for i, row in enumerate(clean):
        cfg = replace(acq, rng_seed=int(np.random.SeedSequence([acq.rng_seed, acq.avg_count, i]).generate_state(1)[0]))
        out[i] = acquire(apply_channel(Waveform(row, sample_rate), model), cfg).samples
    return out
