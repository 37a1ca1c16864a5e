"""Run configuration: an INI file with one section per stage.

Grammar (``configparser`` dialect)::

    [section]
    key = value      ; or  key: value
    # full-line comments start with '#' or ';'

Sections are ``corpus``, ``spectral``, ``schedule``, ``train``,
``inference`` and ``paths``.  Every key has a default, so an empty file is
a valid config.  Unknown sections or keys are rejected.  Booleans accept
``true/false/yes/no/1/0``; ``noise_kinds`` and ``nfe_list`` are
comma-separated.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corpus import NOISE_KINDS, DatasetConfig
from .errors import ConfigError
from .model.train import TrainConfig
from .schedule import DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_N, DEFAULT_T_MIN, build_symmetric
from .spectral import SpectralParams

SNAPSHOT_NAME = "config.ini"


@dataclass(frozen=True)
class CorpusSection:
    train_count: int = 200
    eval_count: int = 80
    duration_s: float = 2.0
    seed: int = 0
    noise_kinds: tuple = NOISE_KINDS


@dataclass(frozen=True)
class SpectralSection:
    window_len: int = 512
    hop: int = 128
    compress_exponent: float = 0.5
    compress_scale: float = 0.15


@dataclass(frozen=True)
class ScheduleSection:
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX
    N: int = DEFAULT_N
    t_min: float = DEFAULT_T_MIN


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-4
    batch_size: int = 4
    steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop_frames: int = 256
    hidden: int = 16
    use_xT: bool = True
    checkpoint_every: int = 100


@dataclass(frozen=True)
class InferenceSection:
    N_infer: int = 5
    use_mask: bool = False
    mask_source: str = "predicted"
    spacing: str = "t"
    seed: int = 0
    workers: int = 1
    bench_clips: int = 10
    bench_duration_s: float = 10.0
    nfe_list: tuple = (50, 20, 10, 5, 2, 1)


@dataclass(frozen=True)
class PathsSection:
    workdir: str = "run"
    checkpoints: str = "checkpoints"


SECTIONS = {
    "corpus": CorpusSection,
    "spectral": SpectralSection,
    "schedule": ScheduleSection,
    "train": TrainSection,
    "inference": InferenceSection,
    "paths": PathsSection,
}

_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _parse(section, f, raw):
    raw = raw.strip()
    kind = type(f.default)
    try:
        if kind is bool:
            return _BOOL[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            elem = type(f.default[0]) if f.default else str
            return tuple(elem(s) for s in items)
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {f.name}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_mapping(cls, data):
        """Build from ``{section: {key: str}}``; unspecified keys keep defaults."""
        kwargs = {}
        for name, raw in data.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            sec_fields = {f.name: f for f in fields(SECTIONS[name])}
            vals = {}
            for key, text in raw.items():
                if key not in sec_fields:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                vals[key] = _parse(name, sec_fields[key], text)
            kwargs[name] = SECTIONS[name](**vals)
        out = cls(**kwargs)
        out.validate()
        return out

    @classmethod
    def loads(cls, text):
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cp.optionxform = str  # keys are case-sensitive (N, N_infer)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config syntax error: {exc}") from None
        return cls.from_mapping({s: dict(cp[s]) for s in cp.sections()})

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def dumps(self):
        lines = []
        for name in SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        """Hash of every numeric setting; the paths section is excluded so moved runs compare equal."""
        body = self.dumps().split("[paths]")[0]
        return hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def with_overrides(self, overrides):
        """Apply ``{"section.key": "value"}`` string overrides."""
        data = {name: {} for name in SECTIONS}
        for name in SECTIONS:
            sec = getattr(self, name)
            for f in fields(sec):
                data[name][f.name] = _format(getattr(sec, f.name))
        for dotted, value in overrides.items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            name, key = dotted.split(".", 1)
            if name not in data:
                raise ConfigError(f"unknown config section [{name}]")
            if key not in data[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            data[name][key] = str(value)
        return RunConfig.from_mapping(data)

    def with_seed(self, seed):
        """A single master seed drives data, training and inference."""
        return replace(
            self,
            corpus=replace(self.corpus, seed=seed),
            train=replace(self.train, seed=seed),
            inference=replace(self.inference, seed=seed),
        )

    # -- typed views --------------------------------------------------------

    def validate(self):
        self.dataset_config()
        self.spectral_params()
        self.train_config()
        inf = self.inference
        if inf.N_infer < 1:
            raise ConfigError("inference.N_infer must be >= 1")
        if inf.mask_source not in ("predicted", "oracle"):
            raise ConfigError("inference.mask_source must be 'predicted' or 'oracle'")
        if inf.spacing not in ("t", "sigma2"):
            raise ConfigError("inference.spacing must be 't' or 'sigma2'")
        if inf.workers < 1:
            raise ConfigError("inference.workers must be >= 1")
        if any(n < 1 for n in inf.nfe_list) or not inf.nfe_list:
            raise ConfigError("inference.nfe_list must hold positive integers")
        if self.train.checkpoint_every < 1:
            raise ConfigError("train.checkpoint_every must be >= 1")
        s = self.schedule
        if not (0 < s.beta_min <= s.beta_max) or s.N < 2 or not (0 < s.t_min < 0.5):
            raise ConfigError("schedule section is out of range")

    def dataset_config(self):
        c = self.corpus
        for kind in c.noise_kinds:
            if kind not in NOISE_KINDS:
                raise ConfigError(f"unknown noise kind {kind!r}")
        if not c.duration_s > 0:
            raise ConfigError("corpus.duration_s must be positive")
        return DatasetConfig(c.train_count, c.eval_count, c.duration_s, c.seed, tuple(c.noise_kinds))

    def spectral_params(self):
        s = self.spectral
        return SpectralParams(s.window_len, s.hop, s.compress_exponent, s.compress_scale)

    def build_schedule(self):
        s = self.schedule
        return build_symmetric(s.beta_min, s.beta_max, s.N, s.t_min)

    def train_config(self):
        t = self.train
        return TrainConfig(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            steps=t.steps,
            seed=t.seed,
            beta1=t.beta1,
            beta2=t.beta2,
            eps=t.eps,
            crop_frames=t.crop_frames,
            hidden=t.hidden,
            use_xT=t.use_xT,
        )


def config_text_for(train_config: TrainConfig):
    """Human-readable TrainConfig snapshot used as the checkpoint sidecar."""
    buf = io.StringIO()
    buf.write("[train]\n")
    for f in fields(train_config):
        buf.write(f"{f.name} = {_format(getattr(train_config, f.name))}\n")
    return buf.getvalue()
