"""Score network, mask network and the oracle ratio mask.

Both networks share one trunk: three 3x3 convolutions with a SiLU after
the first two and a residual connection around the second.  Parameters
live in a single flat fp64 vector; ``layout`` names the slices.

Score head.  The last convolution emits four channels ``(a, b, c_re,
c_im)`` per bin, combined as ``s = a * x_t + b * xT + c``.  Real per-bin
gains on the current state and on the noisy conditioning make mask-like
corrections cheap for a net this small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from ..schedule import DEFAULT_N, DEFAULT_T_MIN, symmetric_t_grid
from .layers import conv3_backward, conv3_forward, sigmoid, silu, silu_grad, time_embedding

EPS_MAG = 1e-12
G_MAX = 1.0


# --------------------------------------------------------------------------
# Oracle mask
# --------------------------------------------------------------------------


def oracle_gain(clean_mag, noisy_mag, eps=EPS_MAG, g_max=G_MAX):
    """|S| / |X| clipped to [0, g_max]; bins with |X| <= eps get 0."""
    clean_mag = np.asarray(clean_mag, dtype=np.float64)
    noisy_mag = np.asarray(noisy_mag, dtype=np.float64)
    if clean_mag.shape != noisy_mag.shape:
        raise ShapeError(f"oracle_gain: shapes {clean_mag.shape} and {noisy_mag.shape} differ")
    g = np.zeros_like(noisy_mag)
    ok = noisy_mag > eps
    g[ok] = clean_mag[ok] / noisy_mag[ok]
    return np.clip(g, 0.0, g_max)


# --------------------------------------------------------------------------
# Shared trunk
# --------------------------------------------------------------------------


def trunk_layout(c_in, hidden, c_out):
    return [
        ("w1", (9 * c_in, hidden)),
        ("b1", (hidden,)),
        ("w2", (9 * hidden, hidden)),
        ("b2", (hidden,)),
        ("w3", (9 * hidden, c_out)),
        ("b3", (c_out,)),
    ]


def unpack(params, layout):
    out, pos = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        out[name] = params[pos : pos + size].reshape(shape)
        pos += size
    return out


def layout_size(layout):
    return sum(int(np.prod(s)) for _, s in layout)


def init_params(layout, rng, out_scale=0.1):
    chunks = []
    for name, shape in layout:
        if name.startswith("b"):
            chunks.append(np.zeros(shape))
            continue
        w = rng.standard_normal(shape) / np.sqrt(shape[0])
        if name == "w3":
            w *= out_scale
        chunks.append(w)
    return np.concatenate([c.reshape(-1) for c in chunks])


def trunk_forward(p, feats):
    h1_pre, cols1 = conv3_forward(feats, p["w1"], p["b1"])
    h1, s1 = silu(h1_pre)
    h2_pre, cols2 = conv3_forward(h1, p["w2"], p["b2"])
    a2, s2 = silu(h2_pre)
    h2 = a2 + h1
    out, cols3 = conv3_forward(h2, p["w3"], p["b3"])
    cache = (feats.shape, (h1_pre, s1), h1.shape, cols1, cols2, (h2_pre, s2), cols3)
    return out, cache


def trunk_backward(p, cache, dout, layout):
    feats_shape, h1_pre, h_shape, cols1, cols2, h2_pre, cols3 = cache
    dh2, dw3, db3 = conv3_backward(dout, cols3, p["w3"], h_shape)
    dh2_pre = dh2 * silu_grad(*h2_pre)
    dh1, dw2, db2 = conv3_backward(dh2_pre, cols2, p["w2"], h_shape)
    dh1 = dh1 + dh2
    dh1_pre = dh1 * silu_grad(*h1_pre)
    _, dw1, db1 = conv3_backward(dh1_pre, cols1, p["w1"], feats_shape, need_dx=False)
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}
    return np.concatenate([grads[name].reshape(-1) for name, _ in layout])


# --------------------------------------------------------------------------
# Score network
# --------------------------------------------------------------------------


@dataclass
class ScoreNet:
    """s_theta(x_t, t, M) with optional noisy-spectrogram conditioning."""

    hidden: int = 16
    n_freqs: int = 2
    use_xT: bool = True
    N: int = DEFAULT_N
    t_min: float = DEFAULT_T_MIN
    params: np.ndarray = None
    t_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.hidden < 1 or self.hidden > 32:
            raise ConfigError("ScoreNet hidden width must lie in 1..32")
        self.t_table = symmetric_t_grid(self.N, self.t_min)
        if self.params is None:
            self.params = np.zeros(self.num_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.size != self.num_params:
            raise ShapeError(f"ScoreNet expects {self.num_params} params, got {self.params.size}")

    kind = "score"

    @property
    def in_channels(self):
        return 7 + 2 * self.n_freqs

    @property
    def layout(self):
        return trunk_layout(self.in_channels, self.hidden, 4)

    @property
    def num_params(self):
        return layout_size(self.layout)

    def arch(self):
        return {
            "kind": self.kind,
            "hidden": self.hidden,
            "n_freqs": self.n_freqs,
            "use_xT": self.use_xT,
            "N": self.N,
            "t_min": self.t_min,
        }

    @classmethod
    def initialized(cls, rng, **arch):
        net = cls(**arch)
        net.params = init_params(net.layout, rng)
        return net

    def with_params(self, params):
        return type(self)(**{k: v for k, v in self.arch().items() if k != "kind"}, params=params)


def _stack(x):
    x = np.asarray(x)
    return x[None] if x.ndim == 2 else x


def score_features(net: ScoreNet, x_t, t_index, xT, mask):
    x_t = _stack(x_t)
    B, F, T = x_t.shape
    xT = np.zeros_like(x_t) if (xT is None or not net.use_xT) else _stack(xT)
    if xT.shape != x_t.shape:
        raise ShapeError(f"score net: x_t {x_t.shape} and xT {xT.shape} differ")
    m = np.zeros((B, F, T)) if mask is None else _stack(mask).astype(np.float64)
    if m.shape != x_t.shape:
        raise ShapeError(f"score net: mask {m.shape} does not match x_t {x_t.shape}")
    t_index = np.broadcast_to(np.asarray(t_index, dtype=int), (B,))
    if np.any(t_index < 0) or np.any(t_index > net.N):
        raise ShapeError(f"t_index outside 0..{net.N}")
    emb = time_embedding(net.t_table[t_index], net.n_freqs)
    feats = np.empty((B, F, T, net.in_channels))
    feats[..., 0], feats[..., 1] = x_t.real, x_t.imag
    feats[..., 2], feats[..., 3] = xT.real, xT.imag
    feats[..., 4], feats[..., 5] = np.abs(x_t), np.abs(xT)
    feats[..., 6] = m
    feats[..., 7:] = emb[:, None, None, :]
    return feats, x_t, xT


def score_apply(net: ScoreNet, x_t, t_index, xT=None, mask=None):
    """Batched forward; returns (score, cache).  Inputs may be 2-D or 3-D."""
    p = unpack(net.params, net.layout)
    feats, x_t, xT = score_features(net, x_t, t_index, xT, mask)
    o, tcache = trunk_forward(p, feats)
    a, b = o[..., 0], o[..., 1]
    s = a * x_t + b * xT + (o[..., 2] + 1j * o[..., 3])
    return s, (p, tcache, x_t, xT)


def score_backward(net: ScoreNet, cache, ds):
    """Gradient of a real scalar w.r.t. params given ``ds = dL/dRe + i dL/dIm``."""
    p, tcache, x_t, xT = cache
    do = np.empty(x_t.shape + (4,))
    do[..., 0] = ds.real * x_t.real + ds.imag * x_t.imag
    do[..., 1] = ds.real * xT.real + ds.imag * xT.imag
    do[..., 2] = ds.real
    do[..., 3] = ds.imag
    return trunk_backward(p, tcache, do, net.layout)


def score_forward(net: ScoreNet, x_t, t_index, xT=None, mask=None):
    s, _ = score_apply(net, x_t, t_index, xT, mask)
    return s[0] if np.ndim(x_t) == 2 else s


# --------------------------------------------------------------------------
# Mask network
# --------------------------------------------------------------------------


@dataclass
class MaskNet:
    """Sigmoid gain predictor on the compressed noisy spectrogram."""

    hidden: int = 16
    params: np.ndarray = None

    kind = "mask"
    in_channels = 3

    def __post_init__(self):
        if self.hidden < 1 or self.hidden > 32:
            raise ConfigError("MaskNet hidden width must lie in 1..32")
        if self.params is None:
            self.params = np.zeros(self.num_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.size != self.num_params:
            raise ShapeError(f"MaskNet expects {self.num_params} params, got {self.params.size}")

    @property
    def layout(self):
        return trunk_layout(self.in_channels, self.hidden, 1)

    @property
    def num_params(self):
        return layout_size(self.layout)

    def arch(self):
        return {"kind": self.kind, "hidden": self.hidden}

    @classmethod
    def initialized(cls, rng, **arch):
        net = cls(**arch)
        net.params = init_params(net.layout, rng, out_scale=1.0)
        return net

    def with_params(self, params):
        return MaskNet(hidden=self.hidden, params=params)


def mask_features(noisy):
    x = _stack(noisy)
    feats = np.empty(x.shape + (3,))
    feats[..., 0] = np.abs(x)
    feats[..., 1], feats[..., 2] = x.real, x.imag
    return feats


def mask_apply(net: MaskNet, noisy):
    p = unpack(net.params, net.layout)
    feats = mask_features(noisy)
    logits, tcache = trunk_forward(p, feats)
    m = sigmoid(logits[..., 0])
    return m, (p, tcache, m)


def mask_backward(net: MaskNet, cache, dm):
    p, tcache, m = cache
    dlogit = (dm * m * (1.0 - m))[..., None]
    return trunk_backward(p, tcache, dlogit, net.layout)


def mask_forward(net: MaskNet, noisy_spec):
    """Predicted ratio mask in (0, 1) for a compressed noisy spectrogram."""
    values = getattr(noisy_spec, "values", noisy_spec)
    if not np.all(np.isfinite(values)):
        raise NumericError("mask_forward needs finite input")
    m, _ = mask_apply(net, values)
    return m[0] if np.ndim(values) == 2 else m
