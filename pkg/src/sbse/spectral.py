"""STFT analysis/synthesis and power-law amplitude compression."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import SAMPLE_RATE, AudioClip
from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class SpectralParams:
    window_len: int = 512
    hop: int = 128
    compress_exponent: float = 0.5
    compress_scale: float = 0.15

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ConfigError("window_len and hop must be positive")
        if self.window_len % self.hop:
            raise ConfigError(f"hop {self.hop} does not divide window_len {self.window_len}")
        if not 0 < self.compress_exponent <= 1:
            raise ConfigError("compress_exponent must lie in (0, 1]")
        if not self.compress_scale > 0:
            raise ConfigError("compress_scale must be positive")

    @property
    def fft_size(self):
        return self.window_len

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    def window(self):
        """Periodic Hann window."""
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_len)


@dataclass
class ComplexSpectrogram:
    values: np.ndarray  # (bins, frames) complex128
    params: SpectralParams
    num_samples: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[0] != self.params.bins:
            raise ShapeError(
                f"spectrogram shape {self.values.shape} does not match {self.params.bins} bins"
            )
        if self.values.shape[1] < 1:
            raise ShapeError("spectrogram has zero frames")

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values):
        return replace(self, values=values)


def cola_deviation(params: SpectralParams):
    """Max relative deviation of the shifted squared-window sum from its mean."""
    w2 = params.window() ** 2
    total = np.zeros(params.hop)
    for start in range(0, params.window_len, params.hop):
        total += w2[start : start + params.hop]
    return float(np.max(np.abs(total - total.mean())) / total.mean())


def stft(clip: AudioClip, params: SpectralParams = SpectralParams()) -> ComplexSpectrogram:
    x = clip.samples
    n = x.size
    pad = params.window_len // 2
    if n < params.window_len or n <= pad:
        raise ShapeError(f"clip of {n} samples is shorter than window_len {params.window_len}")
    xp = np.pad(x, pad, mode="reflect")
    frames = (xp.size - params.window_len) // params.hop + 1
    idx = np.arange(params.window_len)[None, :] + params.hop * np.arange(frames)[:, None]
    seg = xp[idx] * params.window()[None, :]
    values = np.fft.rfft(seg, n=params.fft_size, axis=1).T
    return ComplexSpectrogram(values, params, n)


def istft(spec: ComplexSpectrogram, num_samples=None) -> AudioClip:
    """Least-squares overlap-add inverse (window-squared normalization)."""
    p = spec.params
    bins, frames = spec.values.shape
    if frames < 1:
        raise ShapeError("cannot invert a spectrogram with zero frames")
    if num_samples is None:
        num_samples = spec.num_samples
    pad = p.window_len // 2
    span = (frames - 1) * p.hop + p.window_len
    if num_samples is None:
        num_samples = span - 2 * pad
    w = p.window()
    seg = np.fft.irfft(spec.values.T, n=p.fft_size, axis=1)[:, : p.window_len] * w[None, :]

    out = np.zeros(span)
    norm = np.zeros(span)
    for i in range(frames):
        sl = slice(i * p.hop, i * p.hop + p.window_len)
        out[sl] += seg[i]
        norm[sl] += w**2
    nz = norm > 1e-10
    out[nz] /= norm[nz]

    y = out[pad : pad + num_samples]
    if y.size < num_samples:
        y = np.pad(y, (0, num_samples - y.size))
    return AudioClip(y, SAMPLE_RATE)


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise NumericError("spectrogram contains non-finite values")


def compress_values(values, params: SpectralParams):
    """c -> a * |c|**alpha * exp(i arg c) on a raw complex array."""
    _check_finite(values)
    mag = np.abs(values)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = params.compress_scale * mag[nz] ** (params.compress_exponent - 1.0)
    return values * scale


def decompress_values(values, params: SpectralParams):
    _check_finite(values)
    mag = np.abs(values)
    scale = np.zeros_like(mag)
    nz = mag > 0
    alpha = params.compress_exponent
    scale[nz] = (mag[nz] / params.compress_scale) ** (1.0 / alpha) / mag[nz]
    return values * scale


def compress(spec: ComplexSpectrogram, params: SpectralParams | None = None):
    return spec.with_values(compress_values(spec.values, params or spec.params))


def decompress(spec: ComplexSpectrogram, params: SpectralParams | None = None):
    return spec.with_values(decompress_values(spec.values, params or spec.params))


def magnitude(spec):
    values = spec.values if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    return np.abs(values)


def crop_frames(values, frames, start):
    """Fixed-length frame window; zero-pads on the right when too short."""
    n = values.shape[-1]
    if n <= frames:
        padw = [(0, 0)] * (values.ndim - 1) + [(0, frames - n)]
        return np.pad(values, padw)
    return values[..., start : start + frames]
