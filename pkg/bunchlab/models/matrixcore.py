import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from bunchlab.config import Config
from bunchlab.errors import ConvergenceError, DimensionError, DomainError

logger = logging.getLogger(__name__)

# Above this size the cyclic Jacobi sweep hands over to LAPACK.
JACOBI_MAX_DIM = 64

PIVOT_SKIP = 1e-18


def as_cmatrix(a, name: str = "matrix") -> np.ndarray:
    """Coerces input to a finite 2-D complex128 array."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def require_square(a, name: str = "matrix") -> np.ndarray:
    arr = as_cmatrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def hadamard(a, b) -> np.ndarray:
    """Entrywise product of two equally shaped matrices."""
    a = as_cmatrix(a, "left operand")
    b = as_cmatrix(b, "right operand")
    if a.shape != b.shape:
        raise DimensionError(f"Hadamard product needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def hermitian_embedding(a: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re, -Im], [Im, Re]] form of a Hermitian matrix."""
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def jacobi_eigh(a, tol: float = None, max_sweeps: int = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi eigensolver for real symmetric matrices.

    Args:
        a: Real symmetric matrix.
        tol: Sweeps stop once the off-diagonal Frobenius norm is below tol * ||a||_F.
        max_sweeps: Sweep limit before ConvergenceError.

    Returns:
        (eigenvalues ascending, eigenvectors as columns)
    """
    tol = Config.JACOBI_TOL if tol is None else tol
    max_sweeps = Config.JACOBI_MAX_SWEEPS if max_sweeps is None else max_sweeps

    work = np.array(a, dtype=np.float64)
    if work.ndim != 2 or work.shape[0] != work.shape[1] or work.shape[0] == 0:
        raise DimensionError(f"jacobi_eigh needs a non-empty square matrix, got shape {work.shape}")
    if not np.all(np.isfinite(work)):
        raise DomainError("jacobi_eigh input contains non-finite entries")
    work = (work + work.T) / 2.0
    n = work.shape[0]

    if n > JACOBI_MAX_DIM:
        logger.debug(f"Dimension {n} above {JACOBI_MAX_DIM}, using numpy.linalg.eigh")
        return np.linalg.eigh(work)

    vectors = np.eye(n)
    scale = np.linalg.norm(work)
    if scale == 0.0:
        return np.zeros(n), vectors
    # pivots this small cannot move the off-norm and overflow theta
    negligible = PIVOT_SKIP * scale

    for sweep in range(max_sweeps + 1):
        off = math.sqrt(2.0) * float(np.linalg.norm(np.triu(work, 1)))
        if off <= tol * scale:
            logger.debug(f"Jacobi converged after {sweep} sweeps (n={n})")
            break
        if sweep == max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off:.3e}, scale {scale:.3e})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if abs(apq) <= negligible:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = work[:, p].copy()
                col_q = work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                work[p, q] = work[q, p] = 0.0

                vec_p = vectors[:, p].copy()
                vec_q = vectors[:, q].copy()
                vectors[:, p] = c * vec_p - s * vec_q
                vectors[:, q] = s * vec_p + c * vec_q

    eigenvalues = np.diag(work).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], vectors[:, order]


def hermitian_eigvalsh(a) -> np.ndarray:
    """Ascending spectrum of a Hermitian matrix via its real embedding."""
    a = require_square(a)
    n = a.shape[0]
    herm = (a + a.conj().T) / 2.0
    if not np.any(herm.imag):
        return jacobi_eigh(herm.real)[0]
    doubled = jacobi_eigh(hermitian_embedding(herm))[0]
    # every eigenvalue appears twice in the embedding
    return doubled.reshape(n, 2).mean(axis=1)


def hermitian_function(a, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """f(A) for Hermitian A and a real spectral function f."""
    a = require_square(a)
    n = a.shape[0]
    herm = (a + a.conj().T) / 2.0
    eigenvalues, vectors = jacobi_eigh(hermitian_embedding(herm))
    lifted = (vectors * func(eigenvalues)) @ vectors.T
    result = lifted[:n, :n] + 1j * lifted[n:, :n]
    return (result + result.conj().T) / 2.0


@dataclass(frozen=True)
class HermitianCheckReport:
    is_hermitian: bool
    is_psd: bool
    max_asymmetry: float
    min_eigenvalue: float
    max_eigenvalue: float


def check_psd_hermitian(a, tol: float = None, psd_rel_tol: float = None) -> HermitianCheckReport:
    """
    Reports Hermiticity and positive semidefiniteness.

    Eigenvalues down to -psd_rel_tol * max|eigenvalue| count as zero.
    """
    tol = Config.HERMITIAN_TOL if tol is None else tol
    psd_rel_tol = Config.PSD_REL_TOL if psd_rel_tol is None else psd_rel_tol
    a = require_square(a)

    asymmetry = float(np.max(np.abs(a - a.conj().T)))
    eigenvalues = hermitian_eigvalsh(a)
    lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    spectral_scale = max(abs(lam_min), abs(lam_max))

    is_hermitian = asymmetry <= tol
    is_psd = is_hermitian and lam_min >= -psd_rel_tol * spectral_scale
    return HermitianCheckReport(is_hermitian, is_psd, asymmetry, lam_min, lam_max)


def sym_eig_max(a) -> Tuple[float, np.ndarray]:
    """
    Largest eigenvalue of Sym(Re a) with its unit eigenvector.

    The eigenvector is signed so its first component with modulus above
    1e-12 is positive.
    """
    a = require_square(a)
    sym = (a.real + a.real.T) / 2.0
    eigenvalues, vectors = jacobi_eigh(sym)
    lam = float(eigenvalues[-1])
    vec = vectors[:, -1].copy()
    vec /= np.linalg.norm(vec)

    leading = np.flatnonzero(np.abs(vec) > 1e-12)
    if leading.size and vec[leading[0]] < 0:
        vec = -vec

    residual = np.linalg.norm(sym @ vec - lam * vec)
    if residual > 1e-10 * max(np.linalg.norm(sym), np.finfo(float).tiny):
        raise ConvergenceError(f"Eigenpair residual {residual:.3e} too large")
    return lam, vec


def psd_sqrt(a, rel_tol: float = None) -> np.ndarray:
    """Unique PSD square root of a Hermitian PSD matrix."""
    rel_tol = Config.PSD_REL_TOL if rel_tol is None else rel_tol
    a = require_square(a)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > Config.HERMITIAN_TOL * scale:
        raise DomainError("psd_sqrt input is not Hermitian")

    eigenvalues = hermitian_eigvalsh(a)
    spectral_scale = float(np.max(np.abs(eigenvalues)))
    if eigenvalues[0] < -rel_tol * spectral_scale:
        raise DomainError(f"psd_sqrt input has negative eigenvalue {eigenvalues[0]:.3e}")
    if spectral_scale == 0.0:
        return np.zeros_like(a)
    return hermitian_function(a, lambda w: np.sqrt(np.clip(w, 0.0, None)))


def spectral_norm(a) -> float:
    """Largest singular value, from the smaller of the two Gram matrices."""
    a = as_cmatrix(a)
    rows, cols = a.shape
    gram = a @ a.conj().T if rows <= cols else a.conj().T @ a
    return math.sqrt(max(float(hermitian_eigvalsh(gram)[-1]), 0.0))


def gram_from_vectors(states: Sequence[Sequence[complex]], tol: float = 1e-10) -> np.ndarray:
    """
    Gram matrix S_ij = <phi_i|phi_j> of unit internal-state vectors.

    Raises:
        DimensionError: vectors of unequal length or no vectors.
        DomainError: a vector is not unit norm within tol.
    """
    if len(states) == 0:
        raise DimensionError("gram_from_vectors needs at least one vector")
    lengths = {len(v) for v in states}
    if len(lengths) != 1:
        raise DimensionError(f"Internal-state vectors have unequal lengths {sorted(lengths)}")
    vecs = np.asarray(states, dtype=np.complex128)
    if not np.all(np.isfinite(vecs)):
        raise DomainError("Internal-state vectors contain non-finite entries")
    norms = np.linalg.norm(vecs, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise DomainError(f"Internal-state vector {bad[0] + 1} has norm {norms[bad[0]]:.12g}, expected 1")
    return vecs.conj() @ vecs.T


def unitarity_defect(u) -> float:
    u = require_square(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
