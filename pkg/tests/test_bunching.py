import math
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bunchlab.config import Config
from bunchlab.errors import (
    DimensionError,
    DomainError,
    InputError,
    PrecisionError,
    SizeGuardError,
)
from bunchlab.models import bunching as bunching_module
from bunchlab.models.bunching import (
    MixedEnsemble,
    anomaly_criterion,
    bunching_prob,
    bunching_prob_mixed,
    delay_derivative,
    lieb_block_bound,
    marcus_bound,
    monotonicity_check,
    perm_derivative,
    perturbative_ratio,
    product_ensemble,
    rank_two_ensemble,
    shared_basis_ensemble,
    single_mode_bunching,
    time_delay_family,
    two_set_family,
    uniform_ensemble,
    violation_scan,
    x_model_family,
    xi_model_family,
)
from bunchlab.models.distmodels import DelayProfile, XModelSpec, compile_gram
from bunchlab.models.interferometer import InterferometerScene, haar_unitary, h_matrix
from bunchlab.models.permanent import perm_ryser


# --- Bunching probabilities ---

def test_hom_bunching(hom_h):
    assert bunching_prob(hom_h, np.ones((2, 2))).probability == pytest.approx(0.5)
    assert bunching_prob(hom_h, np.eye(2)).probability == pytest.approx(0.25)


def test_bunching_reports_engine_agreement(random_scene, random_gram):
    scene = random_scene(4)
    result = bunching_prob(h_matrix(scene), random_gram(4))
    assert 0.0 <= result.probability <= 1.0
    assert result.engine_agreement <= Config.ENGINE_TOL
    assert result.h_used.shape == (4, 4)


def test_bunching_validates_inputs(hom_h):
    with pytest.raises(DimensionError):
        bunching_prob(hom_h, np.eye(3))
    with pytest.raises(DomainError):
        bunching_prob(2.5 * hom_h, np.eye(2))
    with pytest.raises(DomainError):
        bunching_prob(hom_h, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DomainError):
        bunching_prob(np.array([[0.5, 0.5], [0.0, 0.5]]), np.eye(2))


def test_bunching_engine_disagreement_is_precision_error(mocker, hom_h):
    mocker.patch.object(bunching_module, "engine_spread", return_value=1.0)
    with pytest.raises(PrecisionError):
        bunching_prob(hom_h, np.ones((2, 2)))


def test_single_mode_bunching_factorizes():
    u = haar_unitary(5, seed=4)
    scene = InterferometerScene(u=u, n=3, kappa=(2,))
    s = compile_gram(XModelSpec(n=3, x=0.6))
    prob, classical, perm_s = single_mode_bunching(scene, s, 2)
    assert classical == pytest.approx(np.prod(np.abs(u[1, :3]) ** 2))
    assert prob == pytest.approx(classical * perm_s)
    assert perm_s == pytest.approx(perm_ryser(s).real)


def test_identity_gram_gives_distinguishable_probability(random_scene):
    scene = random_scene(4)
    h = h_matrix(scene)
    assert bunching_prob(h, np.eye(4)).probability == pytest.approx(np.prod(np.diag(h).real), rel=1e-12)


# --- Mixed ensembles ---

def test_uniform_ensemble_matches_average(random_scene):
    h = h_matrix(random_scene(3))
    ensemble = uniform_ensemble([0.5, 0.5], 3)
    assert ensemble.n == 3
    assert len(ensemble.components) == 8
    expected = sum(w * perm_ryser(h * s).real for w, s in ensemble.components)
    assert bunching_prob_mixed(h, ensemble).probability == pytest.approx(expected)
    assert bunching_prob_mixed(h, ensemble).probability <= perm_ryser(h).real + 1e-12


def test_pure_ensemble_equals_pure_probability(hom_h):
    ensemble = uniform_ensemble([1.0], 2)
    assert bunching_prob_mixed(hom_h, ensemble).probability == pytest.approx(0.5)


def test_shared_basis_and_rank_two_ensembles(random_scene):
    h = h_matrix(random_scene(3))
    perm_h = perm_ryser(h).real
    shared = shared_basis_ensemble([[0.7, 0.3], [0.4, 0.6], [1.0, 0.0]])
    assert shared.kind == 'shared_basis'
    # zero-weight options are dropped
    assert len(shared.components) == 4
    assert bunching_prob_mixed(h, shared).probability <= perm_h + 1e-12
    rank_two = rank_two_ensemble([0.2, 0.9, 0.5], 0.4)
    assert_allclose(np.diag(rank_two.average_gram()), 1.0)
    assert bunching_prob_mixed(h, rank_two).probability <= perm_h + 1e-12


def test_ensemble_validation(mocker):
    with pytest.raises(DomainError):
        MixedEnsemble(((0.5, np.eye(2)),))
    with pytest.raises(InputError):
        MixedEnsemble(((1.0, np.eye(2)),), kind='thermal')
    with pytest.raises(DimensionError):
        MixedEnsemble(((0.5, np.eye(2)), (0.5, np.eye(3))))
    with pytest.raises(DomainError):
        rank_two_ensemble([0.5], 1.5)
    mocker.patch.object(Config, "MIXED_MAX_TERMS", 4)
    with pytest.raises(SizeGuardError):
        uniform_ensemble([0.5, 0.5], 3)


def test_product_ensemble_weights():
    e0, e1 = [1.0, 0.0], [0.0, 1.0]
    ensemble = product_ensemble([[(0.25, e0), (0.75, e1)], [(1.0, e0)]])
    weights = sorted(w for w, _ in ensemble.components)
    assert weights == pytest.approx([0.25, 0.75])


# --- Families and derivatives ---

@pytest.mark.parametrize("make_family", [
    lambda h: x_model_family(h),
    lambda h: xi_model_family(h, [0.3, 0.8, 0.5, 0.9], 2),
    lambda h: two_set_family(h, 2),
    lambda h: time_delay_family(h, np.array([0.5, -0.5, 0.5, -0.5])),
])
def test_perm_derivative_matches_finite_difference(random_scene, make_family):
    h = h_matrix(random_scene(4))
    family = make_family(h)
    value = perm_derivative(family, 0.6, validate=True)
    assert np.isfinite(value)


def test_perm_derivative_flags_wrong_derivative(random_scene):
    h = h_matrix(random_scene(3))
    family = x_model_family(h)
    broken = bunching_module.MatrixFamily("broken", family.value, lambda x: 3.0 * family.derivative(x))
    with pytest.raises(PrecisionError):
        perm_derivative(broken, 0.5)


def test_x_model_derivative_closed_form():
    # perm of the x-model Gram matrix for n = 2 is 1 + x**4
    family = x_model_family(np.ones((2, 2)))
    assert perm_derivative(family, 0.5) == pytest.approx(4 * 0.5 ** 3)


def test_delay_derivative_agrees_with_generic_formula(random_scene):
    h = h_matrix(random_scene(5))
    tau = np.array([0.1, -0.7, 0.3, 0.5, -0.2])
    tau /= np.linalg.norm(tau)
    profile = DelayProfile(tau=tau.tolist(), d=0.4)
    first, second = delay_derivative(h, profile)
    generic = perm_derivative(time_delay_family(h, tau), 0.4)
    assert first == pytest.approx(generic, rel=1e-8)
    assert np.isfinite(second)


def test_delay_derivative_vanishes_at_zero(random_scene):
    h = h_matrix(random_scene(4))
    tau = [0.5, 0.5, -0.5, -0.5]
    first, second = delay_derivative(h, DelayProfile(tau=tau, d=0.0))
    assert first == 0.0
    assert abs(perm_derivative(time_delay_family(h, tau), 0.0, validate=False)) < 1e-14
    report = anomaly_criterion(h)
    tau_max_second = delay_derivative(h, DelayProfile(tau=report.tau_max.tolist(), d=0.0))[1]
    assert tau_max_second == pytest.approx(4.0 * report.criterion_margin, rel=1e-8, abs=1e-14)
    assert second <= tau_max_second + 1e-12


def test_monotonicity_on_physical_scenes(random_scene):
    h = h_matrix(random_scene(4))
    for model in ('x_model', 'xi_model', 'two_set'):
        report = monotonicity_check(model, h, samples=5, seed=3)
        assert report.passed
        assert report.samples == 5
    with pytest.raises(InputError):
        monotonicity_check('time_delay', h, samples=1)


# --- Anomaly criterion ---

def test_all_ones_is_boundary_case():
    for n in range(2, 7):
        report = anomaly_criterion(np.ones((n, n)))
        assert report.perm_g == pytest.approx(math.factorial(n))
        assert abs(report.criterion_margin) <= 1e-9 * math.factorial(n)
        assert not report.anomalous
        assert report.ratio == pytest.approx(1.0)


def test_small_scenes_are_never_anomalous(random_scene):
    for n in (2, 3):
        report = anomaly_criterion(h_matrix(random_scene(n)))
        assert not report.anomalous
        assert report.n == n
        assert np.linalg.norm(report.tau_max) == pytest.approx(1.0)


def test_anomaly_criterion_needs_psd():
    with pytest.raises(DomainError):
        anomaly_criterion(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_perturbative_ratio_is_quadratic():
    report = anomaly_criterion(np.ones((3, 3)))
    assert_allclose(perturbative_ratio(report, [0.0, 0.1]), [1.0, 1.0], atol=1e-9)


# --- Inequality checks ---

def test_marcus_and_lieb(random_scene):
    h = h_matrix(random_scene(5))
    lower, perm_h = marcus_bound(h)
    assert lower <= perm_h * (1 + 1e-12)
    lower, perm_h = lieb_block_bound(h, 2)
    assert lower <= perm_h * (1 + 1e-12)
    with pytest.raises(DomainError):
        lieb_block_bound(h, 5)


# --- Violation scan ---

def test_violation_scan_small_scene(random_scene):
    h = h_matrix(random_scene(3))
    tau = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    scan = violation_scan(h, tau, d_grid=np.linspace(0.0, 1.0, 21), workers=2)
    assert scan.ratio[0] == pytest.approx(1.0)
    assert scan.d.size == 21
    # no anomaly for three photons: the curve never rises above 1
    assert scan.r_max == pytest.approx(1.0, abs=1e-9)
    assert scan.quad_coeff <= 1e-9


def test_violation_scan_rejects_bad_grid(random_scene):
    h = h_matrix(random_scene(2))
    tau = [2 ** -0.5, -(2 ** -0.5)]
    with pytest.raises(DomainError):
        violation_scan(h, tau, d_grid=[-1.0, 0.0])
    with pytest.raises(DimensionError):
        violation_scan(h, [1.0], d_grid=[0.0])


def test_violation_scan_certifies_with_glynn(mocker, random_scene):
    h = h_matrix(random_scene(3))
    tau = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    glynn = mocker.spy(bunching_module, "perm_glynn")
    violation_scan(h, tau, d_grid=np.linspace(0.0, 1.0, 11), workers=1)
    # perm(H), both endpoints, the grid peak (d = 0 here) and the refined maximum
    assert glynn.call_count >= 3


def test_violation_scan_engine_disagreement(mocker, random_scene):
    h = h_matrix(random_scene(3))
    tau = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    mocker.patch.object(bunching_module, "engine_spread", return_value=1.0)
    with pytest.raises(PrecisionError):
        violation_scan(h, tau, d_grid=np.linspace(0.0, 1.0, 5), workers=1)


@pytest.mark.slow
def test_full_scan_single_threaded(counterexample):
    started = time.perf_counter()
    scan = violation_scan(counterexample.h, counterexample.tau_max,
                          d_grid=np.linspace(0.0, 2.0, 2001), workers=1)
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    assert scan.d_max == pytest.approx(0.6201, abs=1e-3)
    assert scan.r_max == pytest.approx(1.0123, abs=5e-4)
    assert scan.perm_at_max == pytest.approx(6.3568e-8, rel=5e-4)
    assert scan.quad_coeff == pytest.approx(0.0595, abs=1.2e-3)
