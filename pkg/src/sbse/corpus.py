"""Audio clips, WAV I/O, synthetic speech/noise, SNR mixing and manifests."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError, ShapeError
from .seeding import derive_seed, make_rng

SAMPLE_RATE = 16000
EVAL_SNR_LEVELS = (-5, 0, 5, 10, 15, 20, 25, 30)
TRAIN_SNR_RANGE = (-5.0, 20.0)
NOISE_KINDS = ("white", "pink")

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError("audio samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    @property
    def power(self):
        return float(np.mean(self.samples**2))


# --------------------------------------------------------------------------
# WAV
# --------------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Read a mono 16 kHz RIFF/WAVE file (pcm16 or float32)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise OSError(f"{path}: truncated RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise OSError(f"{path}: truncated {cid.decode(errors='replace')!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and size >= 26:
                sub = struct.unpack("<H", body[24:26])[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise OSError(f"{path}: missing data chunk")
    tag, channels, rate, _, _, bits = fmt
    if channels != 1:
        raise FormatError(f"{path}: unsupported channel count {channels} (need 1)")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: unsupported sample rate {rate} Hz (need {SAMPLE_RATE})")
    if tag == _PCM and bits == 16:
        samples = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2") / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")
    return AudioClip(samples, rate)


def write_wav(clip: AudioClip, path, encoding="pcm16"):
    """Write ``clip`` as mono WAV; pcm16 hard-clips to [-1, 1]."""
    if encoding == "pcm16":
        q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        tag, bits, extra = _PCM, 16, b""
    elif encoding == "float32":
        q = clip.samples.astype("<f4")
        tag, bits = _IEEE_FLOAT, 32
        extra = struct.pack("<4sII", b"fact", 4, q.size)
    else:
        raise ConfigError(f"unknown WAV encoding {encoding!r}")
    payload = q.tobytes()
    block = bits // 8
    fmt = struct.pack(
        "<4sIHHIIHH", b"fmt ", 16, tag, 1, clip.sample_rate_hz,
        clip.sample_rate_hz * block, block, bits,
    )
    body = b"WAVE" + fmt + extra + struct.pack("<4sI", b"data", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", b"RIFF", len(body)) + body)


# --------------------------------------------------------------------------
# Synthesis
# --------------------------------------------------------------------------


def _num_samples(duration_s):
    if not duration_s > 0:
        raise ConfigError("duration_s must be positive")
    return int(round(duration_s * SAMPLE_RATE))


def synth_clean(duration_s, seed) -> AudioClip:
    """Harmonic-stack stand-in for voiced speech.

    A seeded fundamental in 80-300 Hz with 4-8 harmonics, a slow 2-8 Hz
    amplitude envelope and a few silent gaps, peak-normalized to 0.5.
    """
    n = _num_samples(duration_s)
    rng = make_rng(seed, "clean")
    t = np.arange(n) / SAMPLE_RATE

    f0 = rng.uniform(80.0, 300.0)
    n_harm = int(rng.integers(4, 9))
    # slow pitch drift keeps harmonics from sitting on exact bin centres
    drift = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * drift) / SAMPLE_RATE
    x = np.zeros(n)
    for k in range(1, n_harm + 2):
        amp = rng.uniform(0.3, 1.0) / k
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    env_rate = rng.uniform(2.0, 8.0)
    env = 0.5 * (1.0 + np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi)))
    env = env**1.5
    for _ in range(max(1, int(round(duration_s * rng.uniform(0.5, 1.5))))):
        start = rng.uniform(0.0, duration_s)
        width = rng.uniform(0.08, 0.3)
        env[(t >= start) & (t < start + width)] = 0.0
    x *= env

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak
    return AudioClip(x)


def synth_noise(duration_s, kind, seed) -> AudioClip:
    """White or pink (1/f power) Gaussian noise, RMS-normalized to 0.1."""
    n = _num_samples(duration_s)
    rng = make_rng(seed, "noise")
    w = rng.standard_normal(n)
    if kind == "white":
        x = w
    elif kind == "pink":
        spec = np.fft.rfft(w)
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        spec /= np.sqrt(f)
        spec[0] = 0.0
        x = np.fft.irfft(spec, n)
    else:
        raise ConfigError(f"unknown noise kind {kind!r}")
    x = x * (0.1 / np.sqrt(np.mean(x**2)))
    return AudioClip(x)


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db):
    """Scale ``noise`` so that clean/noise power is ``snr_db``; return (noisy, scaled_noise)."""
    if len(clean) != len(noise) or clean.sample_rate_hz != noise.sample_rate_hz:
        raise ShapeError(
            f"clean ({len(clean)} @ {clean.sample_rate_hz}) and noise "
            f"({len(noise)} @ {noise.sample_rate_hz}) differ"
        )
    p_clean, p_noise = clean.power, noise.power
    if p_clean == 0:
        raise DegenerateInputError("clean signal has zero power")
    if p_noise == 0:
        raise DegenerateInputError("noise has zero power")
    if not np.isfinite(snr_db):
        raise DegenerateInputError("snr_db must be finite")
    g = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = AudioClip(g * noise.samples, noise.sample_rate_hz)
    return AudioClip(clean.samples + scaled.samples, clean.sample_rate_hz), scaled


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureRecord:
    id: str
    clean_id: str
    noise_id: str
    noise_kind: str
    snr_db: float
    seed: int
    split: str

    def __post_init__(self):
        lo, hi = (-5.0, 30.0) if self.split == "eval" else TRAIN_SNR_RANGE
        if self.split not in ("train", "eval"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not lo <= self.snr_db <= hi:
            raise ConfigError(f"{self.id}: snr_db {self.snr_db} outside [{lo}, {hi}]")

    def to_dict(self):
        return {
            "id": self.id,
            "split": self.split,
            "clean_id": self.clean_id,
            "noise_id": self.noise_id,
            "noise_kind": self.noise_kind,
            "snr_db": self.snr_db,
            "seed": self.seed,
        }


@dataclass
class DatasetConfig:
    train_count: int = 200
    eval_count: int = 80
    duration_s: float = 2.0
    seed: int = 0
    noise_kinds: tuple = NOISE_KINDS


@dataclass
class DatasetManifest:
    records: list
    clip_duration_s: float
    seed: int = 0
    version: int = field(default=1)

    @property
    def counts(self):
        out = {"train": 0, "eval": 0}
        for r in self.records:
            out[r.split] += 1
        return out

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def by_id(self):
        return {r.id: r for r in self.records}

    def validate(self):
        seeds = [r.seed for r in self.records]
        if len(set(seeds)) != len(seeds):
            raise ConfigError("manifest seeds are not unique")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ConfigError("manifest record ids are not unique")

    def dumps(self):
        header = {
            "kind": "sbse-manifest",
            "version": self.version,
            "clip_duration_s": self.clip_duration_s,
            "seed": self.seed,
            "counts": self.counts,
        }
        lines = [json.dumps(header)]
        lines += [json.dumps(r.to_dict()) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise FormatError("empty manifest")
        header = json.loads(lines[0])
        if header.get("kind") != "sbse-manifest":
            raise FormatError("manifest header missing")
        records = [MixtureRecord(**json.loads(ln)) for ln in lines[1:]]
        m = cls(records, header["clip_duration_s"], header.get("seed", 0), header["version"])
        m.validate()
        return m

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise OSError(f"manifest not found: {path}")
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def make_dataset(config: DatasetConfig) -> DatasetManifest:
    """Lay out train/eval mixture records deterministically from ``config.seed``.

    Train SNRs are drawn per record from U[-5, 20] dB; eval records cycle
    through the eight levels -5..30 dB with equal counts.
    """
    if config.train_count <= 0 and config.eval_count <= 0:
        raise ConfigError("dataset config has zero train and eval counts")
    if config.train_count < 0 or config.eval_count < 0:
        raise ConfigError("record counts must be non-negative")
    if config.eval_count % len(EVAL_SNR_LEVELS):
        raise ConfigError(
            f"eval_count {config.eval_count} is not a multiple of {len(EVAL_SNR_LEVELS)} SNR levels"
        )
    if not config.noise_kinds:
        raise ConfigError("no noise kinds configured")

    records = []
    for i in range(config.train_count):
        rid = f"train-{i:05d}"
        seed = derive_seed(config.seed, "record", rid)
        rng = make_rng(seed, "layout")
        kind = config.noise_kinds[int(rng.integers(len(config.noise_kinds)))]
        snr = float(rng.uniform(*TRAIN_SNR_RANGE))
        records.append(MixtureRecord(rid, f"clean-{rid}", f"{kind}-{rid}", kind, snr, seed, "train"))

    per_level = config.eval_count // len(EVAL_SNR_LEVELS)
    for li, level in enumerate(EVAL_SNR_LEVELS):
        for j in range(per_level):
            rid = f"eval-{li * per_level + j:05d}"
            seed = derive_seed(config.seed, "record", rid)
            rng = make_rng(seed, "layout")
            kind = config.noise_kinds[int(rng.integers(len(config.noise_kinds)))]
            records.append(
                MixtureRecord(rid, f"clean-{rid}", f"{kind}-{rid}", kind, float(level), seed, "eval")
            )

    manifest = DatasetManifest(records, float(config.duration_s), int(config.seed))
    manifest.validate()
    return manifest


def render_record(record: MixtureRecord, duration_s):
    """Synthesize (clean, scaled_noise, noisy) for one record from its seed."""
    clean = synth_clean(duration_s, derive_seed(record.seed, "clean"))
    noise = synth_noise(duration_s, record.noise_kind, derive_seed(record.seed, "noise"))
    noisy, scaled = mix_at_snr(clean, noise, record.snr_db)
    return clean, scaled, noisy
