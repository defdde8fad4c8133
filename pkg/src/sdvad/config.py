"""Engine configuration: one flat ``key = value`` file, validated on load."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .corpus import CorpusConfig
from .errors import ConfigError
from .nnet import TrainConfig


@dataclass
class EngineConfig:
    workdir: str = "work"
    seed: int = 0

    # corpus
    n_train: int = 600
    n_dev: int = 8
    n_test: int = 8
    utts_per_speaker: int = 4
    n_enroll: int = 2
    min_duration: float = 2.0
    max_duration: float = 4.0
    snr_db: float = 20.0
    train_convs: int = 1500
    dev_convs: int = 64
    test_convs: int = 64

    # front end
    sample_rate: int = 8000
    frame_length: float = 25.0
    frame_shift: float = 10.0
    n_mels: int = 36
    n_ceps: int = 20

    # speaker models
    ubm_components: int = 64
    ubm_iters: int = 20
    tv_rank: int = 32
    tv_iters: int = 10

    # networks
    model_type: str = "lstm"
    hidden: int = 64
    layers: int = 2
    context: int = 5
    learning_rate: float = 0.3
    epochs: int = 8
    vad_epochs: int = 4
    batch_size: int = 8
    clip_norm: float = 5.0

    # decoding and scoring
    bin: int = 1
    smooth: int = 1
    min_gap: int = 0
    min_speech: int = 0
    theta: float = 0.5
    tol: int = 10

    # artifacts, relative to workdir unless absolute
    corpus_dir: str = "corpus"
    model_dir: str = "models"
    hyp_dir: str = "hyp"

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.sample_rate > 0, "sample_rate must be positive"),
            (self.frame_length >= self.frame_shift > 0, "need frame_length >= frame_shift > 0"),
            (self.n_ceps <= self.n_mels, "n_ceps must not exceed n_mels"),
            (self.model_type in ("lstm", "mlp"), "model_type must be lstm or mlp"),
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (self.epochs >= 0 and self.vad_epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.bin >= 1, "bin must be >= 1"),
            (self.smooth >= 1, "smooth must be >= 1"),
            (self.min_gap >= 0 and self.min_speech >= 0, "merge thresholds must be >= 0"),
            (0.0 < self.theta < 1.0, "theta must lie in (0, 1)"),
            (self.tol >= 0, "tol must be >= 0"),
            (self.context >= 0, "context must be >= 0"),
            (self.ubm_components >= 1 and self.tv_rank >= 1, "UBM and TV sizes must be >= 1"),
            (self.hidden >= 1 and self.layers >= 1, "network sizes must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    # derived views
    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.workdir) / p

    def model_path(self, name: str) -> Path:
        return self.path("model_dir") / f"{name}.sdvd"

    def corpus(self) -> CorpusConfig:
        fields = {f.name for f in dataclasses.fields(CorpusConfig)}
        return CorpusConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in fields})

    def train(self, epochs: int | None = None) -> TrainConfig:
        epochs = self.epochs if epochs is None else epochs
        return TrainConfig(self.learning_rate, epochs, self.batch_size, self.seed, self.clip_norm)

    def updated(self, **overrides) -> "EngineConfig":
        return coerce(self, overrides)


def coerce(base: EngineConfig, raw: dict) -> EngineConfig:
    """New config with ``raw`` (string or typed values) applied on top of ``base``."""
    types = {f.name: f.type for f in dataclasses.fields(EngineConfig)}
    values = dataclasses.asdict(base)
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"unknown configuration key {key!r}")
        kind = {"int": int, "float": float, "str": str}[types[key]]
        try:
            values[key] = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {value!r} as {types[key]}") from None
    return EngineConfig(**values)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> EngineConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        raw = parse_config_text(p.read_text(encoding="utf-8"), str(p))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return coerce(EngineConfig(), raw)


def dump_config(cfg: EngineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
