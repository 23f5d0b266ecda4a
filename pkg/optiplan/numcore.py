"""
Dense linear algebra and seeded randomness shared by the forecasting and
QoT models.

Matrices are plain read-only float64 numpy arrays. Randomness comes from
`SeededRng`, a numpy `Generator` over the PCG64 bit generator seeded through
`SeedSequence`; that algorithm is fixed so generated files stay stable.
"""
import logging
import zlib
from typing import Sequence, Union

import numpy as np
from scipy import linalg

from optiplan import OptiplanException

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9
RNG_ALGORITHM = 'PCG64'

Matrix = np.ndarray


class NumcoreException(OptiplanException):
    pass


class NotSquare(NumcoreException):
    pass


class NotSymmetric(NumcoreException):
    pass


class NotPositiveDefinite(NumcoreException):
    pass


class DimensionMismatch(NumcoreException):
    pass


def as_matrix(data) -> Matrix:
    matrix = np.array(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch('Expected a 2-d matrix, got %d dimension(s)' % matrix.ndim)
    if not np.all(np.isfinite(matrix)):
        raise NumcoreException('Matrix entries must be finite')
    matrix.setflags(write=False)
    return matrix


def cholesky(a) -> Matrix:
    """
    Lower-triangular factor L with L·Lᵀ = a.

    :param a: symmetric positive-definite matrix. Asymmetry up to
        `SYMMETRY_TOL` (relative, Frobenius) is removed by averaging with the
        transpose; larger asymmetry is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare('Expected a square matrix, got shape %s' % (a.shape,))
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise NotSymmetric('Matrix is not symmetric within %g' % SYMMETRY_TOL)
    try:
        factor = linalg.cholesky((a + a.T) / 2.0, lower=True)
    except linalg.LinAlgError as err:
        raise NotPositiveDefinite(str(err))
    factor.setflags(write=False)
    return factor


def cho_solve_factor(factor: Matrix, b) -> np.ndarray:
    return linalg.cho_solve((factor, True), b)


def solve_psd(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim not in (1, 2) or b.shape[0] != a.shape[0]:
        raise DimensionMismatch('Cannot solve %s system with right-hand side %s' % (a.shape, b.shape))
    return cho_solve_factor(cholesky(a), b)


def _key_int(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    return int(key) % 2 ** 32


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """Child seed for (seed, keys); string keys are hashed with CRC-32."""
    sequence = np.random.SeedSequence(int(seed) % 2 ** 64, spawn_key=tuple(_key_int(k) for k in keys))
    return int(sequence.generate_state(1, np.uint64)[0])


class SeededRng:
    """
    Deterministic sample stream; identical seeds give identical streams.
    Not safe to share between concurrent jobs; use `spawn` instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) % 2 ** 64
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def spawn(self, *keys: Union[int, str]) -> 'SeededRng':
        return SeededRng(derive_seed(self.seed, *keys))

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=n)

    def normal(self, n: int) -> np.ndarray:
        return self._generator.standard_normal(size=n)

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: Union[int, Sequence]) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, items: Sequence, size=None, replace=True, p=None):
        return self._generator.choice(items, size=size, replace=replace, p=p)

    def __repr__(self):
        return 'SeededRng(seed=%d, algorithm=%s)' % (self.seed, RNG_ALGORITHM)


def normal_samples(rng: SeededRng, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError('n must be non-negative')
    return rng.normal(n)


def uniform_samples(rng: SeededRng, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError('n must be non-negative')
    return rng.uniform(n)
