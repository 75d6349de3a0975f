"""Transmit waveforms (LFM, Costas) and multi-scattering-center radar echoes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

C_LIGHT = 2.998e8  # m/s

DEFAULT_SAMPLE_RATE = 20e9
DEFAULT_LENGTH = 4096
DEFAULT_PEAK = 0.9

INTERP_TAPS = 33
KAISER_BETA = 8.0

MAX_SCATTERERS = 12
MAX_RANGE = 10.0  # m
MAX_VELOCITY = 300.0  # m/s
MAX_ROTATION = 0.2  # rad/s
MAX_SPIN_RADIUS = 1.0  # m


@dataclass
class Waveform:
    """A real sampled signal.

    Attributes:
        samples: 1-D float64 amplitudes.
        sample_rate: Samples per second.
        label: Free-text provenance.
    """

    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    label: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"samples must be a non-empty 1-D array, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def replace(self, samples: np.ndarray, label: str | None = None) -> Waveform:
        return Waveform(samples, self.sample_rate, self.label if label is None else label)

    def padded(self, length: int) -> Waveform:
        """Zero-pad or truncate to ``length`` samples."""
        out = np.zeros(length)
        n = min(length, self.samples.size)
        out[:n] = self.samples[:n]
        return self.replace(out)


@dataclass
class Scatterer:
    cross_section: float
    range_offset: float
    spin_radius: float
    spin_phase: float


@dataclass
class TargetScene:
    scatterers: list[Scatterer] = field(default_factory=list)
    radial_velocity: float = 0.0
    rotation_rate: float = 0.0

    def __post_init__(self):
        if not 1 <= len(self.scatterers) <= MAX_SCATTERERS:
            raise ValueError(f"scatterer count must be in [1, {MAX_SCATTERERS}], got {len(self.scatterers)}")
        _check_interval("radial_velocity", self.radial_velocity, 0.0, MAX_VELOCITY)
        _check_interval("rotation_rate", self.rotation_rate, 0.0, MAX_ROTATION)
        for s in self.scatterers:
            _check_interval("cross_section", s.cross_section, 0.0, 1.0)
            _check_interval("range_offset", s.range_offset, 0.0, MAX_RANGE)
            _check_interval("spin_radius", s.spin_radius, 0.0, MAX_SPIN_RADIUS)
            if not np.isfinite(s.spin_phase):
                raise ValueError("spin_phase must be finite")


def _check_interval(name: str, value: float, lo: float, hi: float) -> None:
    if not lo <= value <= hi:
        raise ValueError(f"{name}={value} outside [{lo}, {hi}]")


def _check_nyquist(freq: float, sample_rate: float) -> None:
    if not 0 <= freq < sample_rate / 2:
        raise ValueError(
            f"aliasing: frequency {freq:.6g} Hz not in [0, Nyquist={sample_rate / 2:.6g} Hz)"
        )


def gen_lfm(f_start: float, f_stop: float, duration: float, sample_rate: float = DEFAULT_SAMPLE_RATE,
            amplitude: float = 1.0) -> Waveform:
    """Linear chirp ``A sin(2 pi (f0 t + (f1 - f0) t^2 / (2 T)))`` over ``round(T fs)`` samples."""
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    _check_nyquist(f_start, sample_rate)
    _check_nyquist(f_stop, sample_rate)
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ValueError(f"duration {duration} s is shorter than one sample")
    t = np.arange(n) / sample_rate
    phase = 2 * np.pi * (f_start * t + (f_stop - f_start) / (2 * duration) * t**2)
    return Waveform(amplitude * np.sin(phase), sample_rate, f"lfm {f_start:.4g}-{f_stop:.4g} Hz")


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, int(n**0.5) + 1))


def _prime_factors(n: int) -> set[int]:
    out, d = set(), 2
    while d * d <= n:
        while n % d == 0:
            out.add(d)
            n //= d
        d += 1
    if n > 1:
        out.add(n)
    return out


def is_primitive_root(g: int, p: int) -> bool:
    if not is_prime(p) or not 0 < g < p:
        return False
    if p == 2:
        return g == 1
    return all(pow(g, (p - 1) // q, p) != 1 for q in _prime_factors(p - 1))


def primitive_roots(p: int) -> list[int]:
    return [g for g in range(1, p) if is_primitive_root(g, p)]


def welch_costas(prime: int, primitive_root: int) -> list[int]:
    """Welch construction ``a_i = g^i mod p``, i = 1..p-1; values are a permutation of 1..p-1."""
    if not is_prime(prime):
        raise ValueError(f"{prime} is not prime")
    if not is_primitive_root(primitive_root, prime):
        raise ValueError(f"{primitive_root} is not a primitive root modulo {prime}")
    return [pow(primitive_root, i, prime) for i in range(1, prime)]


def gen_costas(prime: int, primitive_root: int, base_freq: float, hop_spacing: float, hop_duration: float,
               sample_rate: float = DEFAULT_SAMPLE_RATE, amplitude: float = 1.0) -> Waveform:
    """Phase-continuous frequency-hopping pulse following a Welch-Costas sequence.

    Hop ``i`` plays ``base_freq + (a_i - 1) * hop_spacing`` for ``round(hop_duration * fs)``
    samples; phase accumulates across hops instead of restarting.
    """
    seq = welch_costas(prime, primitive_root)
    if not hop_duration > 0:
        raise ValueError(f"hop_duration must be positive, got {hop_duration}")
    freqs = np.array([base_freq + (a - 1) * hop_spacing for a in seq])
    for f in freqs:
        _check_nyquist(f, sample_rate)
    per_hop = int(round(hop_duration * sample_rate))
    if per_hop < 1:
        raise ValueError(f"hop_duration {hop_duration} s is shorter than one sample")
    inst_freq = np.repeat(freqs, per_hop)
    # phase at sample n is the integral of frequency up to n, starting from 0
    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(inst_freq[:-1]))) / sample_rate
    return Waveform(amplitude * np.sin(phase), sample_rate, f"costas p={prime} g={primitive_root}")


def sample_target_scene(rng_seed: int | np.random.Generator) -> TargetScene:
    """Draw a random target from the fixed parameter intervals."""
    rng = np.random.default_rng(rng_seed)
    count = int(rng.integers(1, MAX_SCATTERERS + 1))
    scatterers = [
        Scatterer(
            cross_section=float(rng.uniform(0.0, 1.0)),
            range_offset=float(rng.uniform(0.0, MAX_RANGE)),
            spin_radius=float(rng.uniform(0.0, MAX_SPIN_RADIUS)),
            spin_phase=float(rng.uniform(0.0, 2 * np.pi)),
        )
        for _ in range(count)
    ]
    return TargetScene(
        scatterers,
        radial_velocity=float(rng.uniform(0.0, MAX_VELOCITY)),
        rotation_rate=float(rng.uniform(0.0, MAX_ROTATION)),
    )


def _kaiser(d: np.ndarray, half_width: float) -> np.ndarray:
    r = np.clip(d / half_width, -1.0, 1.0)
    return np.i0(KAISER_BETA * np.sqrt(1.0 - r * r)) / np.i0(KAISER_BETA)


def fractional_delay(x: np.ndarray, delay: float | np.ndarray, taps: int = INTERP_TAPS) -> np.ndarray:
    """Evaluate ``x(n - delay[n])`` by Kaiser-windowed sinc interpolation.

    ``delay`` is in samples, scalar or per output sample. Content outside the
    record is zero. Integer delays reproduce shifted samples exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    pos = np.arange(n) - np.broadcast_to(np.asarray(delay, dtype=np.float64), (n,))
    centre = np.rint(pos)
    frac = pos - centre
    half = taps // 2
    k = np.arange(-half, half + 1)
    idx = centre[:, None].astype(np.int64) + k
    d = frac[:, None] - k
    h = np.sinc(d) * _kaiser(d, half + 1.0)
    h[frac == 0.0] = (k == 0)
    valid = (idx >= 0) & (idx < n)
    return np.sum(np.where(valid, h * x[np.clip(idx, 0, n - 1)], 0.0), axis=1)


def synthesize_echo(tx: Waveform, scene: TargetScene, peak: float | None = DEFAULT_PEAK,
                    range_gate: float = 0.0) -> Waveform:
    """Sum of delayed, scaled copies of ``tx``: one per scattering center.

    Scatterer ``i`` sits at ``R_i(t) = r_i + v t + rho_i sin(omega t + phi_i)`` and
    contributes ``sigma_i tx(t - 2 (R_i(t) - range_gate) / c)``. The echo keeps the
    length of ``tx``; ``peak=None`` skips the final normalization.
    """
    t = tx.t
    echo = np.zeros(len(tx))
    for s in scene.scatterers:
        rng_t = s.range_offset - range_gate + scene.radial_velocity * t + s.spin_radius * np.sin(
            scene.rotation_rate * t + s.spin_phase
        )
        echo += s.cross_section * fractional_delay(tx.samples, 2.0 * rng_t / C_LIGHT * tx.sample_rate)
    out = Waveform(echo, tx.sample_rate, f"echo[{tx.label}]")
    return out if peak is None else normalize(out, peak)


def normalize(w: Waveform, peak: float = DEFAULT_PEAK) -> Waveform:
    """Scale so that ``max |sample| == peak``."""
    m = np.max(np.abs(w.samples))
    if m == 0:
        raise ValueError("cannot normalize an all-zero waveform")
    y = w.samples * (peak / m)
    # pin the extreme sample so the peak is exact, not just within rounding
    i = int(np.argmax(np.abs(w.samples)))
    y[i] = np.copysign(peak, w.samples[i])
    return w.replace(y)


def random_transmit(category: str, rng: np.random.Generator, length: int = DEFAULT_LENGTH,
                    sample_rate: float = DEFAULT_SAMPLE_RATE) -> Waveform:
    """A freshly parameterized transmit pulse, zero-padded to ``length``.

    LFM: 3 GHz sweep starting in [0.1, 0.5] GHz. Costas: p in {5, 7, 11, 13},
    random primitive root, hops spanning 3.5 GHz from a base in [0.1, 0.5] GHz.
    Pulse width is drawn in [0.4, 0.6] of the record so delayed copies stay inside it.
    """
    record = length / sample_rate
    duration = float(rng.uniform(0.4, 0.6)) * record
    f0 = float(rng.uniform(0.1e9, 0.5e9))
    if category == "lfm":
        tx = gen_lfm(f0, f0 + 3e9, duration, sample_rate)
    elif category == "costas":
        p = int(rng.choice([5, 7, 11, 13]))
        g = int(rng.choice(primitive_roots(p)))
        tx = gen_costas(p, g, f0, 3.5e9 / (p - 1), duration / (p - 1), sample_rate)
    else:
        raise ValueError(f"unknown waveform category {category!r} (expected 'lfm' or 'costas')")
    return tx.padded(length)
