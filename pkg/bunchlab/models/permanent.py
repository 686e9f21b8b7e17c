import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from bunchlab.config import Config
from bunchlab.errors import (
    ConsistencyError,
    DimensionError,
    DomainError,
    IndexOutOfRangeError,
    InputError,
    PrecisionError,
    SizeGuardError,
)
from bunchlab.models.matrixcore import require_square

logger = logging.getLogger(__name__)

# Gray-code steps evaluated per vectorized block; running sums are rebuilt
# exactly at every block start.
GRAY_CHUNK = 1 << 12

# Below this order minors are evaluated serially.
PARALLEL_MIN_N = 8

F_MATRIX_MAX_N = 18


@dataclass(frozen=True)
class PermanentValue:
    """
    A permanent stored as mantissa * 2**log2_scale.

    The mantissa modulus is kept in [1, 2) (or the value is exactly 0) so
    quantities like 1e64 survive without overflow.
    """
    value: complex
    log2_scale: int = 0

    @classmethod
    def from_complex(cls, z: complex, log2_scale: int = 0) -> "PermanentValue":
        z = complex(z)
        if z == 0:
            return cls(0j, 0)
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise PrecisionError(f"Permanent evaluation produced a non-finite value {z}")
        _, exponent = math.frexp(abs(z))
        shift = exponent - 1
        mantissa = complex(math.ldexp(z.real, -shift), math.ldexp(z.imag, -shift))
        return cls(mantissa, log2_scale + shift)

    def to_complex(self) -> complex:
        try:
            return complex(math.ldexp(self.value.real, self.log2_scale),
                           math.ldexp(self.value.imag, self.log2_scale))
        except OverflowError as e:
            raise PrecisionError(f"Permanent 2**{self.log2_scale} does not fit a double") from e

    @property
    def real(self) -> float:
        return self.to_complex().real

    def rescaled(self, factor: float, power: int = 1) -> "PermanentValue":
        """Value multiplied by factor**power, with the power of two kept apart."""
        mantissa, exponent = math.frexp(factor)
        return PermanentValue.from_complex(self.value * mantissa ** power,
                                           self.log2_scale + exponent * power)

    def log10_abs(self) -> float:
        if self.value == 0:
            return float("-inf")
        return math.log10(abs(self.value)) + self.log2_scale * math.log10(2.0)

    def __float__(self) -> float:
        return self.real


@lru_cache(maxsize=512)
def _gray_schedule(start: int, stop: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gray-code steps k in [start, stop).

    Returns the flipped bit index, +1/-1 for bit entering/leaving, and the
    parity sign (-1)**k.
    """
    ks = np.arange(start, stop, dtype=np.int64)
    lowbit = ks & -ks
    bits = np.frexp(lowbit.astype(np.float64))[1].astype(np.int64) - 1
    gray = ks ^ (ks >> 1)
    entering = ((gray >> bits) & 1).astype(bool)
    direction = np.where(entering, 1.0, -1.0)
    parity = np.where(ks & 1, -1.0, 1.0)
    for arr in (bits, direction, parity):
        arr.setflags(write=False)
    return bits, direction, parity


def _gray_members(k: int, width: int) -> list:
    gray = k ^ (k >> 1)
    return [b for b in range(width) if (gray >> b) & 1]


def _fsum_complex(parts_re: list, parts_im: list) -> complex:
    return complex(math.fsum(parts_re), math.fsum(parts_im))


def _ryser(a: np.ndarray) -> complex:
    n = a.shape[0]
    columns = a.T
    parts_re, parts_im = [], []
    total = 1 << n
    for start in range(1, total, GRAY_CHUNK):
        stop = min(start + GRAY_CHUNK, total)
        bits, direction, parity = _gray_schedule(start, stop)
        members = _gray_members(start - 1, n)
        row_sums = a[:, members].sum(axis=1) if members else np.zeros(n, dtype=np.complex128)
        running = row_sums + np.cumsum(columns[bits] * direction[:, None], axis=0)
        terms = np.prod(running, axis=1) * parity
        parts_re.append(math.fsum(terms.real))
        parts_im.append(math.fsum(terms.imag))
    result = _fsum_complex(parts_re, parts_im)
    return -result if n % 2 else result


def _glynn(a: np.ndarray) -> complex:
    n = a.shape[0]
    if n == 1:
        return complex(a[0, 0])
    free_rows = a[1:]
    column_sums = a.sum(axis=0)
    head = np.prod(column_sums)
    parts_re, parts_im = [head.real], [head.imag]
    total = 1 << (n - 1)
    for start in range(1, total, GRAY_CHUNK):
        stop = min(start + GRAY_CHUNK, total)
        bits, direction, parity = _gray_schedule(start, stop)
        flipped = _gray_members(start - 1, n - 1)
        base = column_sums - 2.0 * free_rows[flipped].sum(axis=0) if flipped else column_sums
        # flipping delta from +1 to -1 subtracts twice the row
        running = base - 2.0 * np.cumsum(free_rows[bits] * direction[:, None], axis=0)
        terms = np.prod(running, axis=1) * parity
        parts_re.append(math.fsum(terms.real))
        parts_im.append(math.fsum(terms.imag))
    return _fsum_complex(parts_re, parts_im) / float(total)


def _naive(a: np.ndarray) -> complex:
    n = a.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    terms = np.prod(a[np.arange(n), perms], axis=1)
    return complex(math.fsum(terms.real), math.fsum(terms.imag))


def _binary_prescale(a: np.ndarray) -> Tuple[np.ndarray, int]:
    """Divides by the power of two nearest max|a|; exact in floating point."""
    peak = float(np.max(np.abs(a)))
    if peak == 0.0:
        return a, 0
    exponent = math.frexp(peak)[1]
    return a * math.ldexp(1.0, -exponent), exponent


def _prepare(a, max_n: int, engine: str) -> np.ndarray:
    a = require_square(a)
    n = a.shape[0]
    if n > max_n:
        raise SizeGuardError(f"{engine} permanent limited to n <= {max_n}, got n = {n}")
    return a


def _evaluate(a: np.ndarray, kernel) -> PermanentValue:
    scaled, exponent = _binary_prescale(a)
    return PermanentValue.from_complex(kernel(scaled), a.shape[0] * exponent)


def perm_ryser(a) -> PermanentValue:
    """Permanent by Ryser's inclusion-exclusion formula in Gray-code order."""
    return _evaluate(_prepare(a, Config.PERM_MAX_N, "Ryser"), _ryser)


def perm_glynn(a) -> PermanentValue:
    """Permanent by Glynn's formula; independent cross-check of Ryser."""
    return _evaluate(_prepare(a, Config.PERM_MAX_N, "Glynn"), _glynn)


def perm_naive(a) -> PermanentValue:
    """Permanent by summing over all n! permutations."""
    return _evaluate(_prepare(a, Config.NAIVE_MAX_N, "Naive"), _naive)


ENGINES = {
    "ryser": perm_ryser,
    "glynn": perm_glynn,
    "naive": perm_naive,
}


def permanent(a, engine: str = "ryser") -> PermanentValue:
    try:
        evaluate = ENGINES[engine]
    except KeyError:
        raise InputError(f"Unknown permanent engine '{engine}', expected one of {sorted(ENGINES)}")
    return evaluate(a)


def engine_spread(values: Sequence[complex], floor: float = 0.0) -> float:
    """Largest pairwise |a - b| relative to the largest modulus (or floor)."""
    vals = np.asarray([complex(v) for v in values], dtype=np.complex128)
    if vals.size < 2:
        return 0.0
    scale = max(float(np.max(np.abs(vals))), floor)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(vals[:, None] - vals[None, :]))) / scale


def value_spread(values: Sequence[PermanentValue]) -> float:
    """engine_spread of PermanentValues brought to a common power of two."""
    top = max((v.log2_scale for v in values if v.value != 0), default=0)
    return engine_spread([complex(math.ldexp(v.value.real, v.log2_scale - top),
                                  math.ldexp(v.value.imag, v.log2_scale - top)) for v in values])


def _minor(a: np.ndarray, i: int, j: int) -> np.ndarray:
    return np.delete(np.delete(a, i, axis=0), j, axis=1)


def perm_minor(a, i: int, j: int) -> PermanentValue:
    """Permanent of a with row i and column j removed (1-based)."""
    a = _prepare(a, Config.PERM_MAX_N + 1, "Minor")
    n = a.shape[0]
    if n < 2:
        raise DimensionError("perm_minor needs n >= 2")
    if not (1 <= i <= n and 1 <= j <= n):
        raise IndexOutOfRangeError(f"Minor indices ({i}, {j}) outside 1..{n}")
    return perm_ryser(_minor(a, i - 1, j - 1))


def minor_permanents(a, workers: Optional[int] = None) -> np.ndarray:
    """
    Table of perm(A(i;j)) for all i, j.

    Minors are evaluated on one shared binary prescale and rescaled at the end.
    """
    a = _prepare(a, Config.PERM_MAX_N + 1, "Minor")
    n = a.shape[0]
    if n == 1:
        return np.ones((1, 1), dtype=np.complex128)

    scaled, exponent = _binary_prescale(a)
    index_pairs = [(i, j) for i in range(n) for j in range(n)]

    def evaluate(pair):
        return _ryser(_minor(scaled, *pair))

    workers = Config.workers() if workers is None else workers
    if n >= PARALLEL_MIN_N and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(evaluate, index_pairs))
    else:
        values = [evaluate(pair) for pair in index_pairs]

    table = np.asarray(values, dtype=np.complex128).reshape(n, n)
    shift = (n - 1) * exponent
    return np.ldexp(table.real, shift) + 1j * np.ldexp(table.imag, shift)


@dataclass(frozen=True)
class FMatrix:
    """F_ij = A_ij * perm(A(i;j)) together with perm(A)."""
    base: np.ndarray
    entries: np.ndarray
    perm: PermanentValue
    laplace_deviation: float

    @property
    def n(self) -> int:
        return self.base.shape[0]


def f_matrix(a, workers: Optional[int] = None, tol: float = None) -> FMatrix:
    """
    Builds the F-matrix of a Hermitian matrix and checks both Laplace expansions.

    Raises:
        ConsistencyError: a row or column sum misses perm(A) by more than tol (relative).
    """
    tol = Config.LAPLACE_TOL if tol is None else tol
    a = require_square(a)
    n = a.shape[0]
    if n < 2:
        raise DimensionError("f_matrix needs n >= 2")
    if n > F_MATRIX_MAX_N:
        raise SizeGuardError(f"f_matrix limited to n <= {F_MATRIX_MAX_N}, got n = {n}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > Config.HERMITIAN_TOL * scale:
        raise DomainError("f_matrix needs a Hermitian matrix")

    entries = a * minor_permanents(a, workers=workers)
    perm = perm_ryser(a)
    total = perm.to_complex()

    sums = np.concatenate([entries.sum(axis=1), entries.sum(axis=0)])
    reference = max(abs(total), float(np.max(np.abs(entries))))
    deviation = float(np.max(np.abs(sums - total))) / reference if reference else 0.0
    if deviation > tol:
        raise ConsistencyError(f"Laplace expansion deviates from perm by {deviation:.3e} (tol {tol:.1e})")
    logger.debug(f"F-matrix n={n}: perm={total:.6e}, Laplace deviation {deviation:.2e}")
    return FMatrix(base=a, entries=entries, perm=perm, laplace_deviation=deviation)
