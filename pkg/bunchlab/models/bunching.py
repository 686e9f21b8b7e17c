import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

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
from bunchlab.models.distmodels import DelayProfile, compile_time_delay, validate_gram
from bunchlab.models.interferometer import InterferometerScene, h_from_unitary
from bunchlab.models.matrixcore import (
    check_psd_hermitian,
    gram_from_vectors,
    require_square,
    sym_eig_max,
)
from bunchlab.models.permanent import (
    engine_spread,
    f_matrix,
    minor_permanents,
    perm_glynn,
    perm_ryser,
)

logger = logging.getLogger(__name__)

# Relative floor below which a perm(H (.) S) counts as noise
NOISE_FLOOR = 1e-9
# Engines are compared against at least this absolute scale
PROBABILITY_FLOOR = 1e-13

QUAD_FIT_WINDOW = 0.05
QUAD_FIT_POINTS = 11
GOLDEN_WIDTH = 1e-6


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _require_psd(a, name: str) -> np.ndarray:
    a = require_square(a, name)
    scale = max(1.0, float(np.max(np.abs(a))))
    report = check_psd_hermitian(a, tol=Config.HERMITIAN_TOL * scale)
    if not report.is_psd:
        raise DomainError(
            f"{name} must be PSD Hermitian (asymmetry {report.max_asymmetry:.2e}, "
            f"min eigenvalue {report.min_eigenvalue:.3e})"
        )
    return a


def _require_h(h) -> np.ndarray:
    h = require_square(h, "H")
    scale = max(1.0, float(np.max(np.abs(h))))
    report = check_psd_hermitian(h, tol=Config.HERMITIAN_TOL * scale)
    if not report.is_psd:
        raise DomainError(f"H must be PSD Hermitian (min eigenvalue {report.min_eigenvalue:.3e})")
    top = report.max_eigenvalue
    if top > 1.0 + 1e-10:
        raise DomainError(f"H spectrum must lie in [0, 1], largest eigenvalue {top:.12g}")
    return h


def _matching(h: np.ndarray, s: np.ndarray) -> None:
    if h.shape != s.shape:
        raise DimensionError(f"H is {h.shape[0]}x{h.shape[1]} but S is {s.shape[0]}x{s.shape[1]}")


# ---------------------------------------------------------------------------
# Bunching probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BunchingResult:
    probability: float
    h_used: np.ndarray
    s_used: np.ndarray
    engine_agreement: float


def _certified_perm(g: np.ndarray) -> Tuple[complex, float]:
    """perm(g) from Ryser, certified by Glynn."""
    ryser = perm_ryser(g).to_complex()
    glynn = perm_glynn(g).to_complex()
    spread = engine_spread([ryser, glynn], floor=PROBABILITY_FLOOR)
    if spread > Config.ENGINE_TOL:
        raise PrecisionError(f"Ryser and Glynn disagree by {spread:.2e} (tol {Config.ENGINE_TOL:.1e})")
    if abs(ryser.imag) > NOISE_FLOOR * abs(ryser.real) + PROBABILITY_FLOOR:
        raise PrecisionError(f"perm(H (.) S) has imaginary part {ryser.imag:.3e}")
    return ryser, spread


def _as_probability(value: float) -> float:
    if value < -1e-10 or value > 1.0 + 1e-10:
        raise PrecisionError(f"Bunching probability {value:.12g} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def bunching_prob(h, s) -> BunchingResult:
    """P = perm(H (.) S) for PSD H with spectrum in [0, 1] and Gram matrix S."""
    h = _require_h(h)
    s = validate_gram(s, "S")
    _matching(h, s)
    value, spread = _certified_perm(h * s)
    return BunchingResult(_as_probability(value.real), h, s, spread)


def single_mode_bunching(scene: InterferometerScene, s, k: int) -> Tuple[float, float, float]:
    """
    Probability that all photons leave through output mode k.

    Returns:
        (probability, distinguishable-particle probability, perm(S))
    """
    s = validate_gram(s, "S")
    if s.shape[0] != scene.n:
        raise DimensionError(f"S has dimension {s.shape[0]}, scene has n={scene.n}")
    if not 1 <= k <= scene.m:
        raise IndexOutOfRangeError(f"Output mode {k} outside 1..{scene.m}")
    classical = float(np.prod(np.abs(scene.u[k - 1, :scene.n]) ** 2))
    perm_s = perm_ryser(s).real
    prob = classical * perm_s

    reference = bunching_prob(h_from_unitary(scene.u, scene.n, [k]), s).probability
    if abs(reference - prob) > 1e-10 * max(abs(prob), PROBABILITY_FLOOR):
        raise ConsistencyError(f"Single-mode formula {prob:.12g} disagrees with perm(H (.) S) {reference:.12g}")
    return prob, classical, perm_s


# ---------------------------------------------------------------------------
# Mixed internal states
# ---------------------------------------------------------------------------

ENSEMBLE_KINDS = ('uniform', 'shared_basis', 'rank_two', 'general_product')


@dataclass(frozen=True)
class MixedEnsemble:
    """Convex combination of pure-state Gram matrices."""
    components: Tuple[Tuple[float, np.ndarray], ...]
    kind: str = 'general_product'

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise InputError(f"Unknown ensemble kind '{self.kind}'")
        if not self.components:
            raise DomainError("Ensemble has no components")
        weights = [w for w, _ in self.components]
        if min(weights) < 0:
            raise DomainError("Ensemble weights must be nonnegative")
        total = math.fsum(weights)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"Ensemble weights sum to {total:.15g}, expected 1")
        if len({s.shape for _, s in self.components}) != 1:
            raise DimensionError("Ensemble components have different dimensions")

    @property
    def n(self) -> int:
        return self.components[0][1].shape[0]

    def average_gram(self) -> np.ndarray:
        return sum(w * s for w, s in self.components)


def product_ensemble(per_photon: Sequence[Sequence[Tuple[float, Sequence[complex]]]],
                     kind: str = 'general_product') -> MixedEnsemble:
    """
    Expands a product of per-photon mixtures into pure terms.

    per_photon[a] lists (weight, unit state vector) pairs for photon a.
    """
    if not per_photon:
        raise DimensionError("Ensemble needs at least one photon")
    terms = math.prod(len(options) for options in per_photon)
    if terms > Config.MIXED_MAX_TERMS:
        raise SizeGuardError(f"Ensemble expands to {terms} terms (limit {Config.MIXED_MAX_TERMS})")

    components = []
    for choice in itertools.product(*[range(len(options)) for options in per_photon]):
        weight = math.prod(per_photon[a][c][0] for a, c in enumerate(choice))
        if weight == 0.0:
            continue
        states = [per_photon[a][c][1] for a, c in enumerate(choice)]
        components.append((weight, gram_from_vectors(states)))
    logger.debug(f"{kind} ensemble: {len(components)} nonzero terms of {terms}")
    return MixedEnsemble(tuple(components), kind)


def uniform_ensemble(alphas: Sequence[float], n: int) -> MixedEnsemble:
    """n photons, each in rho = sum_k alpha_k |k><k|."""
    basis = np.eye(len(alphas), dtype=np.complex128)
    options = [(float(a), basis[k]) for k, a in enumerate(alphas)]
    return product_ensemble([options] * n, kind='uniform')


def shared_basis_ensemble(alpha_rows: Sequence[Sequence[float]]) -> MixedEnsemble:
    """Photon a in rho_a = sum_k alpha_rows[a][k] |k><k| over one shared basis."""
    width = len(alpha_rows[0])
    if any(len(row) != width for row in alpha_rows):
        raise DimensionError("All photons need spectra over the same basis")
    basis = np.eye(width, dtype=np.complex128)
    return product_ensemble(
        [[(float(a), basis[k]) for k, a in enumerate(row)] for row in alpha_rows],
        kind='shared_basis',
    )


def rank_two_ensemble(alphas: Sequence[float], x: float) -> MixedEnsemble:
    """Photon i in alpha_i |phi1><phi1| + (1 - alpha_i) |phi2><phi2| with <phi1|phi2> = x."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"Overlap x={x} outside [0, 1]")
    phi1 = np.array([1.0, 0.0], dtype=np.complex128)
    phi2 = np.array([x, math.sqrt(1.0 - x * x)], dtype=np.complex128)
    return product_ensemble([[(float(a), phi1), (1.0 - float(a), phi2)] for a in alphas],
                            kind='rank_two')


def bunching_prob_mixed(h, ensemble: MixedEnsemble) -> BunchingResult:
    """P = sum_j w_j perm(H (.) S_j)."""
    h = _require_h(h)
    if h.shape[0] != ensemble.n:
        raise DimensionError(f"H has n={h.shape[0]}, ensemble has n={ensemble.n}")
    parts, worst = [], 0.0
    for weight, s in ensemble.components:
        value, spread = _certified_perm(h * s)
        parts.append(weight * value.real)
        worst = max(worst, spread)
    return BunchingResult(_as_probability(math.fsum(parts)), h, ensemble.average_gram(), worst)


# ---------------------------------------------------------------------------
# Parametrized families and derivatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixFamily:
    """G(x) with its entrywise derivative dG/dx."""
    name: str
    value: Callable[[float], np.ndarray]
    derivative: Callable[[float], np.ndarray]


def x_model_family(h) -> MatrixFamily:
    h = require_square(h, "H")
    eye = np.eye(h.shape[0])
    off = 1.0 - eye
    return MatrixFamily(
        'x_model',
        lambda x: h * (x * x * off + eye),
        lambda x: h * (2.0 * x * off),
    )


def xi_model_family(h, x: Sequence[float], i: int) -> MatrixFamily:
    """x-vector model with coordinate i (0-based) as the free parameter."""
    h = require_square(h, "H")
    base = np.asarray(x, dtype=np.float64)
    if base.size != h.shape[0]:
        raise DimensionError(f"Need {h.shape[0]} weights, got {base.size}")
    if not 0 <= i < base.size:
        raise IndexOutOfRangeError(f"Coordinate {i} outside 0..{base.size - 1}")

    def weights(t: float) -> np.ndarray:
        xs = base.copy()
        xs[i] = t
        return xs

    def value(t: float) -> np.ndarray:
        xs = weights(t)
        s = np.outer(xs, xs)
        np.fill_diagonal(s, 1.0)
        return h * s

    def derivative(t: float) -> np.ndarray:
        xs = weights(t)
        ds = np.zeros((xs.size, xs.size))
        ds[i, :] += xs
        ds[:, i] += xs
        ds[i, i] = 0.0
        return h * ds

    return MatrixFamily(f'xi_model[{i}]', value, derivative)


def two_set_family(h, k: int) -> MatrixFamily:
    h = require_square(h, "H")
    n = h.shape[0]
    if not 1 <= k < n:
        raise DomainError(f"two_set needs 1 <= k < n, got k={k}, n={n}")
    mask = np.zeros((n, n))
    mask[:k, k:] = 1.0
    mask[k:, :k] = 1.0
    return MatrixFamily(
        'two_set',
        lambda x: h * (1.0 - mask + x * mask),
        lambda x: h * mask,
    )


def time_delay_family(h, tau: Sequence[float]) -> MatrixFamily:
    h = require_square(h, "H")
    tau = np.asarray(tau, dtype=np.float64)
    if tau.size != h.shape[0]:
        raise DimensionError(f"tau has length {tau.size}, H has n={h.shape[0]}")
    diff2 = (tau[:, None] - tau[None, :]) ** 2

    def value(d: float) -> np.ndarray:
        return h * np.exp(-diff2 * d * d)

    return MatrixFamily(
        'time_delay',
        value,
        lambda d: -2.0 * diff2 * d * value(d),
    )


def _finite_difference(family: MatrixFamily, x: float, step: float) -> float:
    def f(t: float) -> float:
        return perm_ryser(family.value(t)).real

    wide = (f(x + step) - f(x - step)) / (2.0 * step)
    narrow = (f(x + step / 2) - f(x - step / 2)) / step
    return (4.0 * narrow - wide) / 3.0


def perm_derivative(family: MatrixFamily, x: float, validate: bool = True,
                    step: float = 1e-5, rel_tol: float = 1e-6) -> float:
    """
    d/dx perm(G(x)) = sum_ij dG_ij/dx perm(G(i;j)).

    With validate set, the value is checked against a Richardson-extrapolated
    central difference. The allowed gap is rel_tol * |derivative| plus a
    rounding floor of 1e-9 * |perm(G(x))|.
    """
    g = family.value(x)
    dg = family.derivative(x)
    analytic = complex(np.sum(dg * minor_permanents(g))).real
    if validate:
        numeric = _finite_difference(family, x, step)
        floor = 1e-9 * abs(perm_ryser(g).real)
        gap = abs(numeric - analytic)
        if gap > rel_tol * abs(analytic) + floor:
            raise PrecisionError(
                f"{family.name} derivative at {x}: analytic {analytic:.12g} vs finite difference {numeric:.12g}"
            )
    return analytic


def delay_derivative(h, profile: DelayProfile) -> Tuple[float, float]:
    """
    First derivative of perm(H (.) S(d)) in d and the second derivative at d = 0.

    first = 4d (tau^T Re F^G tau - perm G); second = 4 (tau^T Re F^H tau - perm H).
    """
    h = _require_psd(h, "H")
    tau = np.asarray(profile.tau, dtype=np.float64)
    if tau.size != h.shape[0]:
        raise DimensionError(f"tau has length {tau.size}, H has n={h.shape[0]}")

    def curvature(fm) -> float:
        return float(tau @ fm.entries.real @ tau) - fm.perm.real

    at_zero = f_matrix(h)
    second = 4.0 * curvature(at_zero)
    if profile.d == 0.0:
        return 0.0, second
    at_d = f_matrix(h * compile_time_delay(profile))
    return 4.0 * profile.d * curvature(at_d), second


# ---------------------------------------------------------------------------
# Anomaly criterion and violation scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnomalyReport:
    perm_g: float
    lambda_max_r: float
    tau_max: np.ndarray
    criterion_margin: float
    anomalous: bool
    laplace_deviation: float = 0.0

    @property
    def ratio(self) -> float:
        return self.lambda_max_r / self.perm_g if self.perm_g else float('nan')

    @property
    def n(self) -> int:
        return self.tau_max.size


def anomaly_criterion(g, validate: bool = True) -> AnomalyReport:
    """
    Compares the top eigenvalue of Sym(Re F^g) with perm(g).

    A positive margin means a small common-direction time delay raises the
    bunching probability.
    """
    g = _require_psd(g, "G") if validate else require_square(g, "G")
    fm = f_matrix(g)
    perm = fm.perm.real
    # eigenproblem on F / perm keeps entries near unit scale
    scale = perm if perm > 0 else 1.0
    relative, tau = sym_eig_max(fm.entries / scale)
    lam = relative * scale
    margin = lam - perm
    anomalous = margin > NOISE_FLOOR * abs(perm)
    logger.debug(f"Anomaly criterion n={g.shape[0]}: lambda={lam:.6e}, perm={perm:.6e}, anomalous={anomalous}")
    return AnomalyReport(perm, lam, tau, margin, bool(anomalous), fm.laplace_deviation)


def perturbative_ratio(report: AnomalyReport, d) -> np.ndarray:
    """Second-order prediction R(d) = 1 + 2 (lambda/perm - 1) d**2."""
    d = np.asarray(d, dtype=np.float64)
    return 1.0 + 2.0 * (report.ratio - 1.0) * d * d


@dataclass
class ViolationScan:
    d: np.ndarray
    ratio: np.ndarray
    perm_hs: np.ndarray
    perm_h: float
    d_max: float
    r_max: float
    perm_at_max: float
    quad_coeff: float
    tau: np.ndarray = field(repr=False, default=None)


def _golden_max(f: Callable[[float], float], lo: float, hi: float, width: float) -> Tuple[float, float]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    return x, f(x)


def violation_scan(h, tau: Sequence[float], d_grid: Optional[Sequence[float]] = None,
                   workers: Optional[int] = None, progress: bool = False) -> ViolationScan:
    """
    Tabulates R(d) = perm(H (.) S_tau(d)) / perm(H) over a grid of delays.

    The grid maximum is refined by golden-section search within one grid step
    on either side; the small-d coefficient c of R = 1 + c d**2 is a least
    squares fit over d in [0, 0.05].
    """
    h = _require_psd(h, "H")
    profile = DelayProfile(tau=list(tau), d=0.0)
    if profile.n != h.shape[0]:
        raise DimensionError(f"tau has length {profile.n}, H has n={h.shape[0]}")
    if d_grid is None:
        d_grid = np.linspace(0.0, Config.SCAN_D_MAX, Config.SCAN_POINTS)
    grid = np.unique(np.asarray(d_grid, dtype=np.float64))
    if grid.size == 0 or grid[0] < 0:
        raise DomainError("Delay grid must be nonempty and nonnegative")

    tau_vec = np.asarray(profile.tau)
    diff2 = (tau_vec[:, None] - tau_vec[None, :]) ** 2
    perm_h = _certified_perm(h)[0].real
    if perm_h <= 0:
        raise DomainError("perm(H) vanishes; the violation ratio is undefined")

    def gram_at(d: float) -> np.ndarray:
        return h * np.exp(-diff2 * d * d)

    def perm_at(d: float) -> float:
        return perm_ryser(gram_at(d)).real

    def ratio_at(d: float) -> float:
        return perm_at(d) / perm_h

    workers = Config.workers() if workers is None else workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        values = pool.map(perm_at, grid)
        if progress:
            values = tqdm(values, total=grid.size, desc="Delay scan", unit="pt")
        perm_hs = np.fromiter(values, dtype=np.float64, count=grid.size)
    ratios = perm_hs / perm_h

    k = int(np.argmax(ratios))
    # grid points are Ryser only; Glynn certifies the endpoints and the peak
    for d in sorted({float(grid[0]), float(grid[k]), float(grid[-1])}):
        _certified_perm(gram_at(d))

    d_max, r_max = float(grid[k]), float(ratios[k])
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if hi > lo:
        refined, r_refined = _golden_max(ratio_at, lo, hi, GOLDEN_WIDTH)
        if r_refined >= r_max:
            d_max, r_max = refined, r_refined
    perm_at_max = _certified_perm(gram_at(d_max))[0].real
    r_max = perm_at_max / perm_h

    fit_d = np.linspace(0.0, QUAD_FIT_WINDOW, QUAD_FIT_POINTS)
    fit_r = np.array([ratio_at(d) for d in fit_d])
    quad_coeff = float(np.linalg.lstsq((fit_d ** 2)[:, None], fit_r - 1.0, rcond=None)[0][0])

    logger.info(f"Violation scan over {grid.size} points: d_max={d_max:.6f}, R_max={r_max:.6f}, c={quad_coeff:.6f}")
    return ViolationScan(grid, ratios, perm_hs, perm_h, d_max, r_max, perm_at_max, quad_coeff, tau_vec)


# ---------------------------------------------------------------------------
# Inequality checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    model: str
    samples: int
    min_derivative: float
    violations: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


MONOTONE_MODELS = ('x_model', 'xi_model', 'two_set')


def monotonicity_check(model: str, h, samples: int, seed: Optional[int] = None,
                       k: Optional[int] = None, validate: bool = True) -> MonotonicityReport:
    """
    Samples d perm(H (.) S)/dx at random parameter points of a family that
    is known to be nondecreasing; any clearly negative value is counted.
    """
    if model not in MONOTONE_MODELS:
        raise InputError(f"Monotonicity is defined for {MONOTONE_MODELS}, got '{model}'")
    h = _require_psd(h, "H")
    n = h.shape[0]
    rng = np.random.default_rng(seed)
    threshold = -1e-9 * max(1.0, abs(perm_ryser(h).real))

    lowest, violations = math.inf, 0
    for _ in range(samples):
        x = float(rng.uniform(0.0, 1.0))
        if model == 'x_model':
            family = x_model_family(h)
        elif model == 'xi_model':
            family = xi_model_family(h, rng.uniform(0.0, 1.0, n), int(rng.integers(n)))
        else:
            family = two_set_family(h, k if k is not None else max(1, n // 2))
        value = perm_derivative(family, x, validate=validate)
        lowest = min(lowest, value)
        if value < threshold:
            violations += 1
            logger.warning(f"{model}: negative derivative {value:.3e} at x={x:.6f}")
    return MonotonicityReport(model, samples, lowest, violations, threshold)


def marcus_bound(h) -> Tuple[float, float]:
    """(prod H_ii, perm H); the first never exceeds the second for PSD H."""
    h = _require_psd(h, "H")
    return float(np.prod(np.diag(h).real)), perm_ryser(h).real


def lieb_block_bound(h, k: int) -> Tuple[float, float]:
    """(perm H11 * perm H22, perm H) for the split after the first k indices."""
    h = _require_psd(h, "H")
    n = h.shape[0]
    if not 1 <= k < n:
        raise DomainError(f"Block split needs 1 <= k < n, got k={k}, n={n}")
    lower = perm_ryser(h[:k, :k]).real * perm_ryser(h[k:, k:]).real
    return lower, perm_ryser(h).real
