"""Waveform-to-waveform enhancement built from the library pieces."""

from __future__ import annotations

import numpy as np

from .bridge import reverse_enhance, score_target
from .corpus import AudioClip
from .model.nets import MaskNet, ScoreNet, mask_forward, oracle_gain, score_forward
from .schedule import InferenceGrid, NoiseSchedule
from .spectral import SpectralParams, compress_values, decompress_values, istft, stft


class OracleScore:
    """Exact score built from the clean compressed spectrogram (testing hook)."""

    kind = "oracle"

    def __init__(self, clean_compressed, schedule: NoiseSchedule):
        self.x0 = np.asarray(clean_compressed)
        self.schedule = schedule

    def __call__(self, x, t_index, mask=None):
        return score_target(x, self.x0, float(np.sqrt(self.schedule.sigma2[t_index])))


def make_score_fn(net, xT_compressed):
    if isinstance(net, ScoreNet):
        return lambda x, idx, m: score_forward(net, x, idx, xT_compressed, m)
    return net


def enhance_clip(
    noisy: AudioClip,
    score,
    schedule: NoiseSchedule,
    grid: InferenceGrid,
    params: SpectralParams,
    rng,
    mask_net: MaskNet | None = None,
    clean: AudioClip | None = None,
    mask_source="none",
):
    """stft -> compress -> (mask) -> reverse bridge -> decompress -> istft.

    ``score`` is a ScoreNet or any ``score_fn(x, t_index, mask)``; the string
    ``"oracle"`` builds :class:`OracleScore` from ``clean``.  ``mask_source``
    is ``"none"``, ``"predicted"`` (needs ``mask_net``) or ``"oracle"``
    (needs ``clean``).
    """
    X = stft(noisy, params)
    Xc = compress_values(X.values, params)
    if mask_source == "none":
        mask = None
    elif mask_source == "predicted":
        mask = mask_forward(mask_net, Xc)
    elif mask_source == "oracle":
        mask = oracle_gain(np.abs(stft(clean, params).values), np.abs(X.values))
    else:
        raise ValueError(f"unknown mask source {mask_source!r}")
    if isinstance(score, str) and score == "oracle":
        score = OracleScore(compress_values(stft(clean, params).values, params), schedule)
    x0 = reverse_enhance(Xc, make_score_fn(score, Xc), mask, schedule, grid, rng)
    out = X.with_values(decompress_values(x0, params))
    return AudioClip(istft(out, len(noisy)).samples, noisy.sample_rate_hz)
