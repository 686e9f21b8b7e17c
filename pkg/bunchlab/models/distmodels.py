"""
Distinguishability (Gram) matrix models.

Every model is a frozen pydantic spec tagged by ``kind``; ``compile_gram``
turns a spec into a validated PSD matrix with unit diagonal.
"""
import logging
import math
from collections import deque
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    ValidationError,
    model_validator,
)
from scipy.linalg import block_diag

from bunchlab.errors import DimensionError, DomainError
from bunchlab.models.matrixcore import (
    check_psd_hermitian,
    gram_from_vectors,
    psd_sqrt,
    require_square,
)
from bunchlab.utils.io_utils import MatrixFile

logger = logging.getLogger(__name__)

UnitInterval = Annotated[float, Field(ge=0.0, le=1.0)]

# Angular tolerance for phase consistency on cycles
PHASE_TOL = 1e-8


class _Spec(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class AllOnesSpec(_Spec):
    kind: Literal['all_ones'] = 'all_ones'
    n: int = Field(..., ge=1)

    def build(self) -> np.ndarray:
        return np.ones((self.n, self.n), dtype=np.complex128)


class IdentitySpec(_Spec):
    kind: Literal['identity'] = 'identity'
    n: int = Field(..., ge=1)

    def build(self) -> np.ndarray:
        return np.eye(self.n, dtype=np.complex128)


class XModelSpec(_Spec):
    """Every pair of photons overlaps by x**2."""
    kind: Literal['x_model'] = 'x_model'
    n: int = Field(..., ge=1)
    x: UnitInterval

    def build(self) -> np.ndarray:
        s = np.full((self.n, self.n), self.x * self.x, dtype=np.complex128)
        np.fill_diagonal(s, 1.0)
        return s


class XiModelSpec(_Spec):
    """Photon i carries weight x_i on a shared state; overlaps x_i x_j."""
    kind: Literal['xi_model'] = 'xi_model'
    x: List[UnitInterval] = Field(..., min_length=1)

    @property
    def n(self) -> int:
        return len(self.x)

    def build(self) -> np.ndarray:
        xs = np.asarray(self.x, dtype=np.float64)
        s = np.outer(xs, xs).astype(np.complex128)
        np.fill_diagonal(s, 1.0)
        return s


class TwoSetSpec(_Spec):
    """First k photons and last n-k photons, overlap x across the sets."""
    kind: Literal['two_set'] = 'two_set'
    k: int = Field(..., ge=1)
    n: int = Field(..., ge=2)
    x: UnitInterval

    @model_validator(mode='after')
    def check_split(self) -> "TwoSetSpec":
        if self.k >= self.n:
            raise ValueError(f"two_set needs 1 <= k < n, got k={self.k}, n={self.n}")
        return self

    def build(self) -> np.ndarray:
        s = np.ones((self.n, self.n), dtype=np.complex128)
        s[:self.k, self.k:] = self.x
        s[self.k:, :self.k] = self.x
        return s


class BlockInterpolatedSpec(_Spec):
    """Sets of identical photons; set i shares weight x_i on one common state."""
    kind: Literal['block_interpolated'] = 'block_interpolated'
    sizes: List[Annotated[int, Field(ge=1)]] = Field(..., min_length=1)
    x: List[UnitInterval] = Field(..., min_length=1)

    @model_validator(mode='after')
    def check_lengths(self) -> "BlockInterpolatedSpec":
        if len(self.sizes) != len(self.x):
            raise ValueError("block_interpolated needs one x per set")
        return self

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def build(self) -> np.ndarray:
        labels = np.repeat(np.arange(len(self.sizes)), self.sizes)
        xs = np.asarray(self.x, dtype=np.float64)[labels]
        s = np.outer(xs, xs).astype(np.complex128)
        s[labels[:, None] == labels[None, :]] = 1.0
        return s


class ExplicitSpec(_Spec):
    kind: Literal['explicit'] = 'explicit'
    matrix: MatrixFile

    @property
    def n(self) -> int:
        return self.matrix.rows

    def build(self) -> np.ndarray:
        return require_square(self.matrix.to_array(), "explicit Gram matrix")


class StatesSpec(_Spec):
    """Gram matrix of explicit internal-state vectors, one row per photon."""
    kind: Literal['states'] = 'states'
    re: List[List[float]] = Field(..., min_length=1)
    im: Optional[List[List[float]]] = None

    @property
    def n(self) -> int:
        return len(self.re)

    def vectors(self) -> np.ndarray:
        re = np.asarray(self.re, dtype=np.float64)
        im = np.zeros_like(re) if self.im is None else np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise DimensionError("states 're' and 'im' have different shapes")
        return re + 1j * im

    def build(self) -> np.ndarray:
        if len({len(row) for row in self.re}) != 1:
            raise DimensionError("states rows have unequal lengths")
        return gram_from_vectors(self.vectors())


class DelayProfile(_Spec):
    """Normalized arrival-time direction tau and delay strength d."""
    tau: List[float] = Field(..., min_length=1)
    d: float = Field(..., ge=0.0)
    sigma: float = Field(1.0, gt=0.0)

    @model_validator(mode='after')
    def check_unit_tau(self) -> "DelayProfile":
        norm = math.sqrt(math.fsum(t * t for t in self.tau))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"tau must be a unit vector, got norm {norm:.15g}")
        return self

    @property
    def n(self) -> int:
        return len(self.tau)

    @classmethod
    def from_times(cls, times: Sequence[float], sigma: float = 1.0) -> "DelayProfile":
        """Splits raw arrival times t into tau = t/|t| and d = |t|/(2 sigma)."""
        t = np.asarray(times, dtype=np.float64)
        norm = float(np.linalg.norm(t))
        if norm == 0.0:
            tau = np.full(t.size, 1.0 / math.sqrt(t.size))
        else:
            tau = t / norm
        tau = tau / np.linalg.norm(tau)
        return cls(tau=tau.tolist(), d=norm / (2.0 * sigma), sigma=sigma)


class TimeDelaySpec(DelayProfile):
    kind: Literal['time_delay'] = 'time_delay'

    def build(self) -> np.ndarray:
        return compile_time_delay(self)


class InterpolatedSpec(_Spec):
    """S = S_base (Hadamard) S^x for a base model and weights x."""
    kind: Literal['interpolated'] = 'interpolated'
    base: 'GramSpec'
    x: List[UnitInterval] = Field(..., min_length=1)

    @property
    def n(self) -> int:
        return len(self.x)

    def build(self) -> np.ndarray:
        base = compile_gram(self.base)
        if base.shape[0] != len(self.x):
            raise DimensionError(f"interpolated base has n={base.shape[0]} but {len(self.x)} weights")
        return base * XiModelSpec(x=self.x).build()


class DirectSumSpec(_Spec):
    """Mutually orthogonal sets of photons, one Gram block per set."""
    kind: Literal['direct_sum'] = 'direct_sum'
    blocks: List['GramSpec'] = Field(..., min_length=1)

    @property
    def n(self) -> int:
        return sum(block.n for block in self.blocks)

    def build(self) -> np.ndarray:
        return block_diag(*[compile_gram(block) for block in self.blocks]).astype(np.complex128)


GramSpec = Annotated[
    Union[
        AllOnesSpec,
        IdentitySpec,
        XModelSpec,
        XiModelSpec,
        TwoSetSpec,
        BlockInterpolatedSpec,
        ExplicitSpec,
        StatesSpec,
        TimeDelaySpec,
        InterpolatedSpec,
        DirectSumSpec,
    ],
    Field(discriminator='kind'),
]

InterpolatedSpec.model_rebuild()
DirectSumSpec.model_rebuild()

_GRAM_ADAPTER = TypeAdapter(GramSpec)


def parse_gram_spec(data) -> GramSpec:
    """Validates a tagged dict (or passes through an existing spec)."""
    if isinstance(data, BaseModel):
        return data
    try:
        return _GRAM_ADAPTER.validate_python(data)
    except ValidationError as e:
        logger.error(f"GramSpec failed validation: {e}")
        raise DomainError(f"Invalid GramSpec: {e}")


def validate_gram(s: np.ndarray, name: str = "Gram matrix") -> np.ndarray:
    s = require_square(s, name)
    report = check_psd_hermitian(s)
    if not report.is_psd:
        raise DomainError(
            f"{name} is not PSD Hermitian (asymmetry {report.max_asymmetry:.2e}, "
            f"min eigenvalue {report.min_eigenvalue:.3e})"
        )
    diagonal_error = float(np.max(np.abs(np.diag(s) - 1.0)))
    if diagonal_error > 1e-10:
        raise DomainError(f"{name} diagonal deviates from 1 by {diagonal_error:.2e}")
    return s


def compile_gram(spec) -> np.ndarray:
    """
    Compiles a GramSpec (or its dict form) to a validated n x n matrix.

    Raises:
        DomainError: invalid parameters or a result that is not a Gram matrix.
    """
    spec = parse_gram_spec(spec)
    s = spec.build()
    return validate_gram(s, f"{spec.kind} Gram matrix")


def compile_time_delay(profile: DelayProfile) -> np.ndarray:
    """S_ij = exp(-(tau_i - tau_j)**2 d**2)."""
    tau = np.asarray(profile.tau, dtype=np.float64)
    diff = tau[:, None] - tau[None, :]
    return np.exp(-(diff * diff) * profile.d ** 2).astype(np.complex128)


def compile_time_delay_from_times(times: Sequence[float], sigma: float = 1.0) -> np.ndarray:
    """Gaussian wave-packet overlaps exp(-(t_i - t_j)**2 / (2 sigma)**2) from raw times."""
    t = np.asarray(times, dtype=np.float64)
    diff = t[:, None] - t[None, :]
    return np.exp(-(diff * diff) / (2.0 * sigma) ** 2).astype(np.complex128)


def gauge_transform(s, thetas: Sequence[float]) -> np.ndarray:
    """S_ij -> exp(i(theta_j - theta_i)) S_ij."""
    s = require_square(s)
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 1 or thetas.size != s.shape[0]:
        raise DimensionError(f"Need {s.shape[0]} gauge angles, got {thetas.size}")
    phases = np.exp(1j * thetas)
    return s * np.outer(phases.conj(), phases)


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.angle(np.exp(1j * angle))


def nonneg_class_test(h, tol: float = None) -> Tuple[bool, Optional[np.ndarray]]:
    """
    Decides whether a gauge transformation makes h entrywise nonnegative.

    Entries with |h_ij| <= tol are phase wildcards. Angles are fixed along a
    BFS spanning forest and every remaining edge must be phase consistent.

    Returns:
        (member, thetas) with thetas None when h is not a member.
    """
    h = require_square(h)
    n = h.shape[0]
    magnitude = np.abs(h)
    tol = 1e-12 * float(np.max(magnitude)) if tol is None else tol
    edges = magnitude > tol
    phases = np.angle(h)

    thetas = np.zeros(n)
    visited = np.zeros(n, dtype=bool)
    for root in range(n):
        if visited[root]:
            continue
        visited[root] = True
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(edges[i] & ~visited):
                thetas[j] = thetas[i] - phases[i, j]
                visited[j] = True
                queue.append(j)

    residual = _wrap(phases + thetas[None, :] - thetas[:, None])
    inconsistent = edges & (np.abs(residual) > PHASE_TOL)
    if np.any(inconsistent):
        i, j = np.argwhere(inconsistent)[0]
        logger.debug(f"Phase inconsistency on edge ({i + 1}, {j + 1}): {residual[i, j]:.3e} rad")
        return False, None
    return True, _wrap(thetas)


def orthogonal_sets(sizes: Sequence[int]) -> DirectSumSpec:
    """Sets of identical photons, mutually orthogonal across sets."""
    return DirectSumSpec(blocks=[AllOnesSpec(n=size) for size in sizes])


def three_set(sizes: Sequence[int], x: float, y: float, z: float) -> StatesSpec:
    """
    Three sets of identical photons with real pairwise set overlaps.

    x, y, z are the overlaps between sets (1,2), (1,3) and (2,3). The overlap
    triple must itself form a PSD Gram matrix.
    """
    if len(sizes) != 3 or min(sizes) < 1:
        raise DimensionError("three_set needs three positive set sizes")
    overlaps = np.array([[1.0, x, y], [x, 1.0, z], [y, z, 1.0]], dtype=np.complex128)
    if not check_psd_hermitian(overlaps).is_psd:
        raise DomainError(f"Set overlaps ({x}, {y}, {z}) do not form a Gram matrix")
    # columns of the square root realise the overlaps
    root = psd_sqrt(overlaps)
    states = np.repeat(root.T, sizes, axis=0)
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    return StatesSpec(re=states.real.tolist(), im=states.imag.tolist())
