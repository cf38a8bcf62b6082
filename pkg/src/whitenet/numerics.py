"""Deterministic numeric primitives: matrices, seeded RNG, basic statistics.

Matrices are plain 2-D float64 ``numpy.ndarray``s throughout the package;
this module only adds the shape/domain checking the rest of the code relies
on.  Randomness goes through :class:`RngState`, a thin wrapper over numpy's
Philox counter-based bit generator.  Philox is documented, keyed by the seed,
and produces the same stream on every platform; normal variates are derived
from its uniforms with the Box-Muller transform so the full sequence is
reproducible bit-for-bit.
"""

import numpy as np

from .errors import DomainError, ShapeError


def as_matrix(x, name="matrix"):
    """Coerce to a 2-D float64 array, rejecting anything else."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def matmul(a, b):
    """Matrix product with an explicit conformance check.

    Raises
    ------
    ShapeError
        If ``a.shape[1] != b.shape[0]``; the message names both shapes.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mean_var(x):
    """Arithmetic mean and population variance (divide by n) of a vector."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("mean_var of an empty vector")
    m = float(np.mean(x))
    v = float(np.mean((x - m) ** 2))
    return m, v


class RngState:
    """Seeded random stream: Philox counters underneath, Box-Muller normals.

    Each worker owns its own instance; drawing advances the internal counter.
    Identical seeds give identical sequences across platforms and runs.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, size=None, low=0.0, high=1.0):
        """Uniform draws in [low, high)."""
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size=None, sigma=1.0):
        """Zero-mean normal draws via Box-Muller on the uniform stream."""
        if sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {sigma}")
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = self._gen.random(pairs)
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        z *= sigma
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n):
        """Deterministic permutation of range(n)."""
        return self._gen.permutation(n)

    def child(self, stream):
        """Independent stream derived from (seed, stream); used per trajectory."""
        return RngState((self.seed * 1_000_003 + int(stream)) & 0x7FFF_FFFF_FFFF_FFFF)


def gaussian_sample(rng, n, sigma):
    """``n`` draws from N(0, sigma^2), advancing ``rng``."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    return rng.normal(size=(int(n),), sigma=sigma)
