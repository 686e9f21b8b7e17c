"""
Brute-force first-quantization simulator.

Each photon lives in C^m (x) C^L, indexed mode * L + internal. The input is
the symmetrized product state, every photon passes through U (x) 1_L and the
bunching probability is the squared norm after projecting every photon onto
the detected modes. Only meant for n <= 3.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from bunchlab.errors import DimensionError, DomainError, SizeGuardError
from bunchlab.models.interferometer import check_modes, check_unitary

logger = logging.getLogger(__name__)

MAX_PHOTONS = 3
MAX_MODES = 4
MAX_INTERNAL = 3


@dataclass
class FirstQuantState:
    n: int
    m: int
    L: int
    amplitudes: np.ndarray  # shape (m * L,) * n

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def symmetry_defect(self) -> float:
        """Largest change of the amplitudes under any relabelling of photons."""
        worst = 0.0
        for order in itertools.permutations(range(self.n)):
            worst = max(worst, float(np.max(np.abs(np.transpose(self.amplitudes, order) - self.amplitudes))))
        return worst


def symmetrized_input(m: int, internal_states: Sequence[Sequence[complex]]) -> FirstQuantState:
    """Photon i enters spatial mode i with internal state phi_i."""
    states = [np.asarray(v, dtype=np.complex128) for v in internal_states]
    n, L = len(states), states[0].size
    singles = []
    for mode, phi in enumerate(states):
        spatial = np.zeros(m, dtype=np.complex128)
        spatial[mode] = 1.0
        singles.append(np.kron(spatial, phi))

    amplitudes = np.zeros((m * L,) * n, dtype=np.complex128)
    for order in itertools.permutations(range(n)):
        amplitudes += reduce(np.multiply.outer, [singles[k] for k in order])
    return FirstQuantState(n, m, L, amplitudes / math.sqrt(math.factorial(n)))


def apply_interferometer(state: FirstQuantState, u: np.ndarray) -> FirstQuantState:
    single = np.kron(u, np.eye(state.L))
    amplitudes = state.amplitudes
    for axis in range(state.n):
        amplitudes = np.moveaxis(np.tensordot(single, amplitudes, axes=([1], [axis])), 0, axis)
    return FirstQuantState(state.n, state.m, state.L, amplitudes)


def project_modes(state: FirstQuantState, kappa: Sequence[int]) -> FirstQuantState:
    keep = np.isin(np.arange(state.m * state.L) // state.L, np.asarray(kappa) - 1).astype(np.float64)
    amplitudes = state.amplitudes
    for axis in range(state.n):
        shape = [1] * state.n
        shape[axis] = keep.size
        amplitudes = amplitudes * keep.reshape(shape)
    return FirstQuantState(state.n, state.m, state.L, amplitudes)


def simulate_bunching(u, internal_states: Sequence[Sequence[complex]], kappa: Sequence[int]) -> float:
    """Probability that every photon leaves through a mode in kappa."""
    u = check_unitary(u)
    m, n = u.shape[0], len(internal_states)
    if n < 1:
        raise DimensionError("Need at least one photon")
    lengths = {len(v) for v in internal_states}
    if len(lengths) != 1:
        raise DimensionError(f"Internal states have unequal lengths {sorted(lengths)}")
    L = lengths.pop()
    if n > MAX_PHOTONS or m > MAX_MODES or L > MAX_INTERNAL:
        raise SizeGuardError(
            f"Oracle limited to n <= {MAX_PHOTONS}, m <= {MAX_MODES}, L <= {MAX_INTERNAL}; got {n}, {m}, {L}"
        )
    if n > m:
        raise DomainError(f"{n} photons do not fit into {m} input modes")
    for index, phi in enumerate(internal_states, start=1):
        norm = np.linalg.norm(np.asarray(phi, dtype=np.complex128))
        if abs(norm - 1.0) > 1e-10:
            raise DomainError(f"Internal state {index} has norm {norm:.12g}")
    kappa = check_modes(kappa, m)

    state = symmetrized_input(m, internal_states)
    if abs(state.norm() - 1.0) > 1e-10:
        raise DomainError(f"Symmetrized input has norm {state.norm():.12g}")
    projected = project_modes(apply_interferometer(state, u), kappa)
    probability = projected.norm() ** 2
    logger.debug(f"Oracle n={n}, m={m}, L={L}, kappa={kappa}: P={probability:.15g}")
    return probability
