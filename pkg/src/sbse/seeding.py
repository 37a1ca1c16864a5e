"""Seed fan-out and Gaussian sampling.

All randomness flows through :func:`make_rng`, which returns a numpy
``Generator`` on the PCG64 bit generator.  Gaussian draws use numpy's
ziggurat sampler (``Generator.standard_normal``).  Both algorithms are
fixed for a given numpy major version, so every seeded quantity is
reproducible bit-for-bit on one platform at fp64.

Child seeds are derived from a master seed and any number of string or
integer keys by hashing with BLAKE2b (8-byte digest) over the
``repr`` of the key tuple::

    derive_seed(master, "record", "eval-00003") -> 64-bit unsigned int

This keeps per-record and per-step streams independent of iteration order,
which is what allows parallel synthesis and exact training resume.
"""

import hashlib

import numpy as np


def derive_seed(master, *keys):
    payload = repr((int(master),) + tuple(keys)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def make_rng(seed, *keys):
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.PCG64(int(seed)))


def complex_normal(rng, shape):
    """Circular complex Gaussian with unit total variance per entry.

    Real and imaginary parts are independent with variance 1/2 each.
    """
    z = rng.standard_normal((2,) + tuple(shape))
    return (z[0] + 1j * z[1]) * np.sqrt(0.5)
