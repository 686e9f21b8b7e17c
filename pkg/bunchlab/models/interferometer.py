import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import qr

from bunchlab.errors import (
    ConsistencyError,
    DimensionError,
    DomainError,
    IndexOutOfRangeError,
)
from bunchlab.models.matrixcore import (
    as_cmatrix,
    hermitian_eigvalsh,
    psd_sqrt,
    require_square,
    unitarity_defect,
)

logger = logging.getLogger(__name__)

UNITARY_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9
# Residual norm below which a canonical vector is skipped during completion
COMPLETION_SKIP = 1e-8
# |U_ij| below this is already null for the Reck sweep
NULL_TOL = 1e-15


def check_unitary(u, name: str = "unitary") -> np.ndarray:
    u = require_square(u, name)
    defect = unitarity_defect(u)
    if defect > UNITARY_TOL:
        raise DomainError(f"{name} is not unitary (max |U^H U - 1| = {defect:.2e})")
    return u


def check_modes(kappa: Sequence[int], m: int) -> Tuple[int, ...]:
    modes = tuple(sorted(set(int(k) for k in kappa)))
    if not modes:
        raise DomainError("Output mode set is empty")
    if modes[0] < 1 or modes[-1] > m:
        raise IndexOutOfRangeError(f"Output modes {modes} outside 1..{m}")
    return modes


@dataclass(frozen=True)
class InterferometerScene:
    """Unitary u, photons in input modes 1..n, detection in output modes kappa."""
    u: np.ndarray
    n: int
    kappa: Tuple[int, ...]

    def __post_init__(self):
        u = check_unitary(self.u)
        m = u.shape[0]
        if not 1 <= self.n <= m:
            raise DomainError(f"Photon count n={self.n} outside 1..{m}")
        kappa = check_modes(self.kappa, m)
        if len(kappa) == m:
            raise DomainError("Output mode set must be a nontrivial subset, got all modes")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'kappa', kappa)

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def complement(self) -> Tuple[int, ...]:
        return tuple(k for k in range(1, self.m + 1) if k not in self.kappa)


@dataclass(frozen=True)
class BeamSplitter:
    """Two-mode element on 1-based modes (mode_a, mode_b)."""
    mode_a: int
    mode_b: int
    theta: float
    phi: float

    def block(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        e = complex(math.cos(self.phi), math.sin(self.phi))
        return np.array([[e * c, -s], [e * s, c]], dtype=np.complex128)


@dataclass
class BsNetwork:
    m: int
    elements: List[BeamSplitter]
    phases: np.ndarray
    reconstruction_error: float = field(default=0.0)

    @property
    def element_count(self) -> int:
        return len(self.elements)


def h_from_unitary(u, n: int, kappa: Sequence[int]) -> np.ndarray:
    """H_ij = sum over k in kappa of conj(U_ki) U_kj, for i, j in 1..n."""
    u = require_square(u)
    if not 1 <= n <= u.shape[0]:
        raise DomainError(f"Photon count n={n} outside 1..{u.shape[0]}")
    rows = np.asarray(check_modes(kappa, u.shape[0])) - 1
    block = u[rows, :n]
    h = block.conj().T @ block
    return (h + h.conj().T) / 2.0


def h_matrix(scene: InterferometerScene) -> np.ndarray:
    return h_from_unitary(scene.u, scene.n, scene.kappa)


def beam_splitter(m: int, mode_a: int, mode_b: int, theta: float, phi: float) -> np.ndarray:
    """m x m unitary acting as a two-mode element on 1-based modes a, b."""
    if not (1 <= mode_a <= m and 1 <= mode_b <= m) or mode_a == mode_b:
        raise IndexOutOfRangeError(f"Beam splitter modes ({mode_a}, {mode_b}) invalid for m={m}")
    out = np.eye(m, dtype=np.complex128)
    idx = np.array([mode_a - 1, mode_b - 1])
    out[np.ix_(idx, idx)] = BeamSplitter(mode_a, mode_b, theta, phi).block()
    return out


def haar_unitary(m: int, seed: Optional[int] = None) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a complex Ginibre matrix."""
    if m < 1:
        raise DimensionError(f"haar_unitary needs m >= 1, got {m}")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2.0)
    q, r = qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def embed_rows(m_block) -> Tuple[InterferometerScene, float]:
    """
    Embeds sqrt(gamma) * m_block as the top-left block of a unitary.

    gamma = 1 / sigma_max(m_block)**2. The top rows are completed on the right
    by the PSD root of 1 - gamma M M^H; the remaining rows come from modified
    Gram-Schmidt over canonical basis vectors.

    Returns:
        (scene with n = columns and kappa = the top rows, gamma)
    """
    mb = as_cmatrix(m_block, "embedded block")
    r, c = mb.shape
    if r > c:
        raise DimensionError(f"embed_rows needs rows <= columns, got {r}x{c}")

    gram = mb @ mb.conj().T
    spectrum = hermitian_eigvalsh(gram)
    if spectrum[0] <= 1e-12 * spectrum[-1]:
        raise DomainError(f"Block is rank deficient (Gram spectrum {spectrum[0]:.3e} .. {spectrum[-1]:.3e})")
    gamma = 1.0 / float(spectrum[-1])

    dim = r + c
    u = np.zeros((dim, dim), dtype=np.complex128)
    u[:r, :c] = math.sqrt(gamma) * mb
    u[:r, c:] = psd_sqrt(np.eye(r) - gamma * gram)
    _complete_rows(u, r)

    defect = unitarity_defect(u)
    if defect > UNITARY_TOL:
        raise ConsistencyError(f"Embedded unitary off by {defect:.2e}")
    logger.info(f"Embedded {r}x{c} block into {dim}x{dim} unitary, gamma={gamma:.6e}")
    return InterferometerScene(u=u, n=c, kappa=tuple(range(1, r + 1))), gamma


def _complete_rows(u: np.ndarray, filled: int) -> None:
    dim = u.shape[0]
    count = filled
    for idx in range(dim):
        if count == dim:
            break
        candidate = np.zeros(dim, dtype=np.complex128)
        candidate[idx] = 1.0
        # two passes of modified Gram-Schmidt
        for _ in range(2):
            for row in u[:count]:
                candidate -= np.vdot(row, candidate) * row
        norm = np.linalg.norm(candidate)
        if norm < COMPLETION_SKIP:
            logger.debug(f"Skipping canonical vector e{idx + 1} (residual {norm:.2e})")
            continue
        u[count] = candidate / norm
        count += 1
    if count < dim:
        raise ConsistencyError(f"Row completion stopped at {count} of {dim} rows")


def reck_decompose(u) -> BsNetwork:
    """
    Triangular decomposition into two-mode elements and output phases.

    Row i (last to second) is nulled left to right; U[i, j] is cancelled by
    mixing columns j and j+1. Then U = D T_K ... T_1 with T_1 the first
    element found.
    """
    work = check_unitary(u).copy()
    m = work.shape[0]
    elements: List[BeamSplitter] = []
    for i in range(m - 1, 0, -1):
        for j in range(i):
            x, y = work[i, j], work[i, j + 1]
            if abs(x) < NULL_TOL:
                continue
            theta = math.atan2(abs(x), abs(y))
            phi = float(np.angle(x) - (np.angle(y) if abs(y) > 0 else 0.0))
            element = BeamSplitter(j + 1, j + 2, theta, phi)
            cols = [j, j + 1]
            work[:, cols] = work[:, cols] @ element.block().conj().T
            work[i, j] = 0.0
            elements.append(element)

    phases = np.angle(np.diag(work))
    off_diagonal = float(np.max(np.abs(work - np.diag(np.diag(work)))))
    if off_diagonal > RECONSTRUCTION_TOL:
        raise ConsistencyError(f"Reck sweep left off-diagonal residue {off_diagonal:.2e}")

    network = BsNetwork(m=m, elements=elements, phases=phases)
    network.reconstruction_error = float(np.max(np.abs(reconstruct(network) - u)))
    if network.reconstruction_error > RECONSTRUCTION_TOL:
        raise ConsistencyError(f"Reck reconstruction error {network.reconstruction_error:.2e}")
    logger.info(f"Reck decomposition of {m} modes: {network.element_count} elements, "
                f"reconstruction error {network.reconstruction_error:.2e}")
    return network


def reconstruct(network: BsNetwork) -> np.ndarray:
    out = np.diag(np.exp(1j * np.asarray(network.phases, dtype=np.float64)))
    for element in reversed(network.elements):
        cols = [element.mode_a - 1, element.mode_b - 1]
        out[:, cols] = out[:, cols] @ element.block()
    return out


def cascade_rank_one(u1, out_mode: int, u2, n: Optional[int] = None) -> InterferometerScene:
    """
    Feeds output out_mode of u1 into the first input of u2.

    The composite has m1 + m2 - 1 modes; detection is on the m2 outputs of u2,
    which makes H rank one.
    """
    u1 = check_unitary(u1, "first interferometer")
    u2 = check_unitary(u2, "second interferometer")
    m1, m2 = u1.shape[0], u2.shape[0]
    if not 1 <= out_mode <= m1:
        raise IndexOutOfRangeError(f"out_mode {out_mode} outside 1..{m1}")
    m = m1 + m2 - 1

    first = np.eye(m, dtype=np.complex128)
    first[:m1, :m1] = u1
    modes = np.array([out_mode - 1] + list(range(m1, m)))
    second = np.eye(m, dtype=np.complex128)
    second[np.ix_(modes, modes)] = u2

    scene = InterferometerScene(u=second @ first, n=m1 if n is None else n,
                                kappa=tuple(int(k) + 1 for k in modes))
    spectrum = hermitian_eigvalsh(h_matrix(scene))
    if spectrum.size > 1 and spectrum[-1] > 0 and spectrum[-2] > 1e-10 * spectrum[-1]:
        raise ConsistencyError(f"Cascaded H is not rank one (second eigenvalue {spectrum[-2]:.2e})")
    return scene
