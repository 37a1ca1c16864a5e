"""Versioned binary checkpoints for ScoreNet / MaskNet.

Layout (little endian)::

    8 bytes   magic  b"SBSECKPT"
    u32       format version
    u32       header length in bytes
    header    UTF-8 JSON: arch descriptor, step, array lengths
    f64[P]    parameter vector
    f64[P]    Adam first moment    (only when header["adam"] is true)
    f64[P]    Adam second moment   (idem)
    f64[L]    per-step training losses

A text sidecar ``<path>.cfg`` holds the TrainConfig snapshot.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import config_text_for
from .errors import FormatError, VersionError
from .model.nets import MaskNet, ScoreNet
from .model.train import Adam, TrainConfig, TrainState

MAGIC = b"SBSECKPT"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


def _arch_net(arch):
    arch = dict(arch)
    kind = arch.pop("kind", None)
    if kind == "score":
        return ScoreNet(**arch)
    if kind == "mask":
        return MaskNet(**arch)
    raise VersionError(f"unknown network kind {kind!r} in checkpoint")


def save_checkpoint(path, state: TrainState, config: TrainConfig | None = None):
    """Write ``state`` atomically (temp file + rename)."""
    net, opt = state.net, state.optimizer
    params = np.asarray(net.params, dtype=_F64)
    has_adam = opt is not None and opt.m is not None
    header = {
        "arch": net.arch(),
        "step": int(state.step),
        "n_params": int(params.size),
        "adam": bool(has_adam),
        "adam_t": int(opt.t) if opt is not None else 0,
        "adam_hparams": [opt.lr, opt.beta1, opt.beta2, opt.eps] if opt is not None else None,
        "n_losses": len(state.losses),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob)
        fh.write(params.tobytes())
        if has_adam:
            fh.write(np.asarray(opt.m, dtype=_F64).tobytes())
            fh.write(np.asarray(opt.v, dtype=_F64).tobytes())
        fh.write(np.asarray(state.losses, dtype=_F64).tobytes())
    os.replace(tmp, path)
    if config is not None:
        Path(str(path) + ".cfg").write_text(config_text_for(config), encoding="utf-8")
    return path


def _read_header(fh, path):
    head = fh.read(16)
    if len(head) < 16 or head[:8] != MAGIC:
        raise VersionError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", head[8:])
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint format {version}, expected {FORMAT_VERSION}")
    try:
        return json.loads(fh.read(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: corrupt checkpoint header") from None


def _read_f64(fh, n, path):
    raw = fh.read(n * 8)
    if len(raw) != n * 8:
        raise OSError(f"{path}: checkpoint is truncated")
    return np.frombuffer(raw, dtype=_F64).astype(np.float64)


def load_checkpoint(path, expect_kind=None, expect_arch=None) -> TrainState:
    """Read a checkpoint back into a TrainState.

    ``expect_kind`` / ``expect_arch`` guard against loading the wrong
    network; a mismatch raises VersionError.
    """
    path = Path(path)
    if not path.exists():
        raise OSError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        arch = header["arch"]
        if expect_kind is not None and arch.get("kind") != expect_kind:
            raise VersionError(f"{path}: holds a {arch.get('kind')!r} net, expected {expect_kind!r}")
        if expect_arch is not None:
            diff = {k: (arch.get(k), v) for k, v in expect_arch.items() if arch.get(k) != v}
            if diff:
                raise VersionError(f"{path}: architecture mismatch {diff}")
        n = header["n_params"]
        params = _read_f64(fh, n, path)
        m = v = None
        if header["adam"]:
            m, v = _read_f64(fh, n, path), _read_f64(fh, n, path)
        losses = _read_f64(fh, header["n_losses"], path).tolist()
    net = _arch_net(arch)
    if net.num_params != n:
        raise VersionError(f"{path}: {n} params do not fit arch {arch}")
    net = net.with_params(params)
    opt = None
    if header.get("adam_hparams") is not None:
        lr, b1, b2, eps = header["adam_hparams"]
        opt = Adam(lr, b1, b2, eps, m, v, header["adam_t"])
    return TrainState(net, opt, header["step"], losses)


def load_net(path, expect_kind=None, expect_arch=None):
    return load_checkpoint(path, expect_kind, expect_arch).net
