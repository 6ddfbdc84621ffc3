"""Dense float64 array helpers and reproducible random streams.

All randomness in the package flows through RngStream so that a single
integer seed pins down every draw, on every platform, regardless of how
many optional stages run in between (child streams are derived from the
seed plus a structural key, not from consumption order).
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when two operands have incompatible shapes."""


def as_matrix(data, name="matrix"):
    """Coerce ``data`` to a 2-D float64 array, rejecting NaN/Inf.

    Returns a new array unless ``data`` already is a float64 ndarray.
    """
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def as_vector(data, name="vector"):
    """Coerce ``data`` to a 1-D float64 array, rejecting NaN/Inf."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return v


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply {a.shape} by {b.shape}: inner dimensions disagree"
        )
    return a @ b


class RngStream:
    """Seeded random stream with cheap, order-independent child streams.

    A stream is identified by ``(seed, key)`` where ``key`` is a tuple of
    integers describing *where* in the program the stream is used (e.g.
    ``(2, epoch, batch)``).  ``child(*key)`` appends to the key, so two
    call sites that fork different children never share state and never
    perturb each other, even when one of them is skipped entirely.
    """

    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in _key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        )

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"

    def child(self, *key):
        """Derive an independent stream for ``(seed, self.key + key)``."""
        return RngStream(self.seed, self.key + key)

    def rand_index(self, n):
        """One uniform index in ``[0, n-1]``; n=1 always yields 0."""
        if n < 1:
            raise ValueError(f"rand_index needs a pool of at least 1, got n={n}")
        return int(self._gen.integers(0, n))

    def indices(self, n, shape):
        """Array of independent uniform indices in ``[0, n-1]``."""
        if n < 1:
            raise ValueError(f"indices needs a pool of at least 1, got n={n}")
        return self._gen.integers(0, n, size=shape)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)
