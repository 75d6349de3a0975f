"""Run configuration: every setting has a default; stored as INI key = value text.

Values are written as Python literals so files round-trip exactly.
"""
from __future__ import annotations

import ast
import configparser
import copy
import io
from dataclasses import asdict, dataclass, field, fields

from .channel import DEFAULT_AVG_COUNT, DEFAULT_NOISE_RMS, AcquisitionConfig, ChannelModel, InterleaveMismatch, preset
from .evaluate import AVG_COUNTS, AWGN_LEVELS
from .signals import DEFAULT_LENGTH, DEFAULT_PEAK, DEFAULT_SAMPLE_RATE
from .train import TrainConfig


@dataclass
class DataSection:
    category: str = "lfm"
    channel: str = "pps-like"
    count: int = 250
    split: tuple[int, int] = (200, 50)
    length: int = DEFAULT_LENGTH
    sample_rate: float = DEFAULT_SAMPLE_RATE
    peak: float = DEFAULT_PEAK
    master_seed: int = 0


@dataclass
class ChannelSection:
    """Explicit channel parameters; used when ``data.channel == "custom"``."""

    nonlinearity_beta: float | None = None
    filter_taps: tuple[float, ...] | None = None
    interleave_gains: tuple[float, ...] | None = None
    interleave_offsets: tuple[float, ...] | None = None
    interleave_skews: tuple[float, ...] | None = None

    def model(self) -> ChannelModel:
        mm = None
        if self.interleave_gains is not None:
            n = len(self.interleave_gains)
            mm = InterleaveMismatch(n, self.interleave_gains, self.interleave_offsets or (0.0,) * n,
                                    self.interleave_skews or (0.0,) * n)
        return ChannelModel(self.nonlinearity_beta, self.filter_taps, mm, "custom")

    @classmethod
    def from_model(cls, m: ChannelModel) -> ChannelSection:
        mm = m.interleave
        return cls(m.nonlinearity_beta, m.filter_taps, mm and mm.gains, mm and mm.offsets, mm and mm.skews)


@dataclass
class AcquisitionSection:
    noise_rms: float = float(DEFAULT_NOISE_RMS)
    avg_count: int = DEFAULT_AVG_COUNT
    rng_seed: int = 0


@dataclass
class EvalSection:
    stft_window: int = 256
    stft_hop: int = 64
    awgn_levels: tuple[float, ...] = AWGN_LEVELS
    avg_counts: tuple[int, ...] = AVG_COUNTS
    sweep_seed: int = 0


@dataclass
class TsneSection:
    perplexity: float = 30.0
    iterations: int = 1000
    stride_subsample: int = 4
    max_points: int = 2000
    seed: int = 0


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    tsne: TsneSection = field(default_factory=TsneSection)

    def channel_model(self) -> ChannelModel:
        if self.data.channel == "custom":
            return self.channel.model()
        return preset(self.data.channel)

    def acquisition_config(self) -> AcquisitionConfig:
        return AcquisitionConfig(**asdict(self.acquisition))

    def dumps(self, extra: dict[str, dict] | None = None) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section in extra or {}:
            cp[section] = {k: repr(v) for k, v in extra[section].items()}
        for f in fields(self):
            cp[f.name] = {k: repr(v) for k, v in asdict(getattr(self, f.name)).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        """Parse ``text``; keys it omits keep their value from ``base`` (or the default)."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        cfg = copy.deepcopy(base) if base is not None else cls()
        for f in fields(cls):
            if not cp.has_section(f.name):
                continue
            section = getattr(cfg, f.name)
            known = {sf.name for sf in fields(section)}
            values = {}
            for key, raw in cp[f.name].items():
                if key not in known:
                    raise ValueError(f"unknown config key [{f.name}] {key}")
                try:
                    values[key] = ast.literal_eval(raw)
                except (ValueError, SyntaxError):
                    raise ValueError(f"config value [{f.name}] {key} = {raw!r} is not a literal") from None
            setattr(cfg, f.name, type(section)(**{**asdict(section), **values}))
        return cfg

    @classmethod
    def load(cls, path, base: RunConfig | None = None) -> RunConfig:
        with open(path) as fh:
            return cls.loads(fh.read(), base)


def read_section(path, name: str) -> dict:
    """Raw literal values of one section (e.g. ``[run]`` in a sidecar)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    if not cp.has_section(name):
        return {}
    return {k: ast.literal_eval(v) for k, v in cp[name].items()}
