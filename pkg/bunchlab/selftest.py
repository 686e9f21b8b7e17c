"""
Seeded randomized suites run by the hidden ``selftest`` subcommand.

Each suite returns a SuiteResult; the summary never contains timings so two
runs with the same seed print identical reports.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np
from tqdm import tqdm

from bunchlab.errors import BunchlabError
from bunchlab.models.bunching import (
    anomaly_criterion,
    bunching_prob,
    bunching_prob_mixed,
    delay_derivative,
    lieb_block_bound,
    marcus_bound,
    perm_derivative,
    rank_two_ensemble,
    shared_basis_ensemble,
    time_delay_family,
    uniform_ensemble,
)
from bunchlab.models.counterexample import M_R, M_I, conjecture_search
from bunchlab.models.distmodels import (
    DelayProfile,
    XModelSpec,
    XiModelSpec,
    TwoSetSpec,
    compile_gram,
    gauge_transform,
    orthogonal_sets,
)
from bunchlab.models.interferometer import (
    haar_unitary,
    h_from_unitary,
    reck_decompose,
)
from bunchlab.models.matrixcore import gram_from_vectors
from bunchlab.models.oracle import simulate_bunching
from bunchlab.models.permanent import engine_spread, perm_glynn, perm_naive, perm_ryser

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    trials: int = 0
    failures: int = 0
    worst: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, violation: float, limit: float) -> None:
        self.trials += 1
        self.worst = max(self.worst, violation)
        if violation > limit:
            self.failures += 1


@dataclass
class SelftestSummary:
    seed: int
    quick: bool
    suites: List[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)


# --- random instances ---

def random_unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_scene_h(rng: np.random.Generator, n: int, extra_modes: int = 2) -> np.ndarray:
    """H of a Haar interferometer with a random nontrivial detection set."""
    m = n + extra_modes
    u = haar_unitary(m, seed=int(rng.integers(2 ** 32)))
    size = int(rng.integers(1, m))
    kappa = sorted(rng.choice(m, size=size, replace=False) + 1)
    return h_from_unitary(u, n, kappa)


def random_gram(rng: np.random.Generator, n: int) -> np.ndarray:
    return gram_from_vectors(random_unit_vectors(rng, n, int(rng.integers(1, n + 2))))


def _excess(lower: float, upper: float) -> float:
    """Relative amount by which lower exceeds upper."""
    return (lower - upper) / max(abs(upper), 1e-300)


# --- suites ---

def engine_agreement(rng, trials: int) -> SuiteResult:
    result = SuiteResult("engine_agreement", detail="Ryser/Glynn/naive spread <= 1e-10")
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        values = [perm_ryser(a).to_complex(), perm_glynn(a).to_complex(), perm_naive(a).to_complex()]
        result.record(engine_spread(values), 1e-10)
    return result


def oracle_equivalence(rng, trials: int) -> SuiteResult:
    result = SuiteResult("oracle_equivalence", detail="first quantization vs perm(H (.) S) <= 1e-10")
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(max(n, 2), 5))
        L = int(rng.integers(1, 4))
        u = haar_unitary(m, seed=int(rng.integers(2 ** 32)))
        kappa = sorted(rng.choice(m, size=int(rng.integers(1, m)), replace=False) + 1)
        states = random_unit_vectors(rng, n, L)
        expected = bunching_prob(h_from_unitary(u, n, kappa), gram_from_vectors(states)).probability
        result.record(abs(simulate_bunching(u, states, kappa) - expected), 1e-10)
    return result


def inequality_properties(rng, trials: int) -> SuiteResult:
    """perm(H (.) S) <= perm(H) on every family where it is known to hold."""
    result = SuiteResult("inequality_properties", detail="known bounds hold within 1e-9 relative")
    for _ in range(trials):
        n = int(rng.integers(2, 6))
        h = random_scene_h(rng, n)
        perm_h = perm_ryser(h).real
        x = float(rng.uniform())
        k = int(rng.integers(1, n))
        sizes = [k, n - k]
        grams = [
            compile_gram(XModelSpec(n=n, x=x)),
            compile_gram(XiModelSpec(x=rng.uniform(0, 1, n).tolist())),
            compile_gram(TwoSetSpec(k=k, n=n, x=x)),
            compile_gram(orthogonal_sets(sizes)),
            random_gram(rng, n) * compile_gram(XiModelSpec(x=rng.uniform(0, 1, n).tolist())),
        ]
        if n <= 3:
            grams.append(random_gram(rng, n))
        for s in grams:
            result.record(_excess(perm_ryser(h * s).real, perm_h), 1e-9)

        # rank-one H factorizes
        v = random_unit_vectors(rng, 1, n)[0] * rng.uniform(0.1, 1.0)
        rank_one = np.outer(v.conj(), v)
        s = random_gram(rng, n)
        expected = float(np.prod(np.diag(rank_one).real)) * perm_ryser(s).real
        result.record(abs(perm_ryser(rank_one * s).real - expected) / max(expected, 1e-300), 1e-10)

        # gauge class of an entrywise nonnegative H
        b = np.abs(rng.standard_normal((n, n)))
        nonneg = b.T @ b
        nonneg = gauge_transform(nonneg / np.max(np.linalg.eigvalsh(nonneg)), rng.uniform(0, 2 * math.pi, n))
        result.record(_excess(perm_ryser(nonneg * random_gram(rng, n)).real, perm_ryser(nonneg).real), 1e-9)

        result.record(_excess(*marcus_bound(h)), 1e-9)
        result.record(_excess(*lieb_block_bound(h, k)), 1e-9)

        alphas = rng.dirichlet(np.ones(int(rng.integers(1, 4))))
        ensembles = [
            uniform_ensemble(alphas.tolist(), n),
            shared_basis_ensemble(rng.dirichlet(np.ones(alphas.size), size=n).tolist()),
            rank_two_ensemble(rng.uniform(0, 1, n).tolist(), x),
        ]
        for ensemble in ensembles:
            result.record(_excess(bunching_prob_mixed(h, ensemble).probability, perm_h), 1e-9)
    return result


def derivative_consistency(rng, trials: int, max_n: int) -> SuiteResult:
    result = SuiteResult("derivative_consistency", detail="closed form vs generic vs finite difference <= 1e-6")
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        h = random_scene_h(rng, n)
        tau = rng.standard_normal(n)
        tau /= np.linalg.norm(tau)
        d = float(rng.uniform(0.1, 1.0))
        profile = DelayProfile(tau=tau.tolist(), d=d)
        first, _ = delay_derivative(h, profile)
        generic = perm_derivative(time_delay_family(h, profile.tau), d, validate=True)
        result.record(abs(first - generic) / max(abs(generic), 1e-12 * perm_ryser(h).real), 1e-6)
    return result


def structural_checks(rng, trials: int, max_modes: int, max_ones: int) -> SuiteResult:
    result = SuiteResult("structural", detail="complement identity, Reck round trip, all-ones boundary")
    for _ in range(trials):
        m = int(rng.integers(2, max_modes + 1))
        u = haar_unitary(m, seed=int(rng.integers(2 ** 32)))
        n = int(rng.integers(1, m + 1))
        kappa = sorted(rng.choice(m, size=int(rng.integers(1, m)), replace=False) + 1)
        rest = [k for k in range(1, m + 1) if k not in kappa]
        total = h_from_unitary(u, n, kappa) + h_from_unitary(u, n, rest)
        result.record(float(np.max(np.abs(total - np.eye(n)))), 1e-10)
        result.record(reck_decompose(u).reconstruction_error, 1e-9)

    for n in range(2, max_ones + 1):
        report = anomaly_criterion(np.ones((n, n)))
        result.record(abs(report.criterion_margin) / math.factorial(n), 1e-9)
    return result


def search_sanity(rng, trials: int, seed: int, with_counterexample: bool) -> SuiteResult:
    result = SuiteResult("search_sanity", detail="no anomaly for n = 3; perturbed counterexample stays anomalous")
    for sampler in ("haar_gram", "wishart", "low_rank(2)"):
        report = conjecture_search(3, trials, sampler=sampler, seed=seed)
        result.record(report.max_relative_margin, 1e-9)
    if with_counterexample:
        around = np.array(M_R) + 1j * np.array(M_I)
        report = conjecture_search(16, 2, sampler="low_rank(2)", seed=seed, around=around, epsilon=1e-6)
        result.trials += 1
        if report.positive_count != report.trials:
            result.failures += 1
    return result


def run_selftest(seed: int = 0, quick: bool = False, progress: bool = True) -> SelftestSummary:
    """Runs all suites from a single seed; quick mode shrinks every trial count."""
    plan: List[tuple] = [
        ("engine_agreement", lambda rng: engine_agreement(rng, 60 if quick else 500)),
        ("oracle_equivalence", lambda rng: oracle_equivalence(rng, 20 if quick else 200)),
        ("inequality_properties", lambda rng: inequality_properties(rng, 20 if quick else 1000)),
        ("derivative_consistency", lambda rng: derivative_consistency(rng, 5 if quick else 100, 5 if quick else 8)),
        ("structural", lambda rng: structural_checks(rng, 20 if quick else 200, 8 if quick else 18, 6 if quick else 10)),
        ("search_sanity", lambda rng: search_sanity(rng, 200 if quick else 10000, seed, not quick)),
    ]
    summary = SelftestSummary(seed=seed, quick=quick)
    for index, (name, suite) in enumerate(tqdm(plan, desc="Selftest", unit="suite", disable=not progress)):
        rng = np.random.default_rng([seed, index])
        started = time.perf_counter()
        try:
            outcome = suite(rng)
        except BunchlabError as e:
            logger.error(f"Suite {name} aborted: {e}")
            outcome = SuiteResult(name, trials=1, failures=1, detail=f"aborted: {e}")
        logger.info(f"Suite {name}: {outcome.trials} checks, {outcome.failures} failures, "
                    f"{time.perf_counter() - started:.1f}s")
        summary.suites.append(outcome)
    return summary
