"""Forward/backward primitives for the small convolutional nets.

Tensors are channels-last, ``(batch, bins, frames, channels)``.  Every
forward returns whatever the matching backward needs; nothing is stored
on module objects.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


def im2col3(x):
    """3x3 zero-padded patches of ``x`` as rows of a ``(B*H*W, C*9)`` matrix.

    Column order is (channel, bin offset, frame offset), matching weights
    of shape ``(C, 3, 3, C_out)`` flattened to ``(C*9, C_out)``.
    """
    C = x.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    return sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(-1, 9 * C)


def flip_weights(w):
    """Weights of the adjoint convolution, shape ``(C_out*9, C_in)``."""
    c_out = w.shape[1]
    w4 = w.reshape(-1, 3, 3, c_out)
    return np.ascontiguousarray(w4[:, ::-1, ::-1, :].transpose(3, 1, 2, 0)).reshape(9 * c_out, -1)


def conv3_forward(x, w, b):
    """'same' 3x3 convolution; ``w`` has shape ``(9*C_in, C_out)``."""
    cols = im2col3(x)
    out = cols @ w + b
    return out.reshape(x.shape[:3] + (w.shape[1],)), cols


def conv3_backward(dout, cols, w, x_shape, need_dx=True):
    d2 = dout.reshape(-1, w.shape[1])
    dw = cols.T @ d2
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dx = (im2col3(dout) @ flip_weights(w)).reshape(x_shape)
    return dx, dw, db


def sigmoid(x):
    return expit(x)


def silu(x):
    """Returns (silu(x), sigmoid(x)); the sigmoid is reused by silu_grad."""
    s = expit(x)
    return x * s, s


def silu_grad(x, s):
    return s * (1.0 + x * (1.0 - s))


def time_embedding(t, n_freqs):
    """Sinusoidal features of t in [0, 1]; shape ``(len(t), 2 * n_freqs)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 0.5 * np.pi * 2.0 ** np.arange(n_freqs)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
