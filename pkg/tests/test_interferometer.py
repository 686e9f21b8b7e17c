import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bunchlab.errors import DimensionError, DomainError, IndexOutOfRangeError
from bunchlab.models.interferometer import (
    BsNetwork,
    InterferometerScene,
    beam_splitter,
    cascade_rank_one,
    embed_rows,
    h_from_unitary,
    h_matrix,
    haar_unitary,
    reck_decompose,
    reconstruct,
)
from bunchlab.models.matrixcore import check_psd_hermitian, hermitian_eigvalsh, unitarity_defect


# --- Scenes and H ---

def test_hom_h_matrix(hom_h):
    assert_allclose(hom_h, 0.5 * np.ones((2, 2)), atol=1e-15)


def test_scene_validation(hom_unitary):
    with pytest.raises(DomainError):
        InterferometerScene(u=2 * hom_unitary, n=2, kappa=(1,))
    with pytest.raises(DomainError):
        InterferometerScene(u=hom_unitary, n=3, kappa=(1,))
    with pytest.raises(DomainError):
        InterferometerScene(u=hom_unitary, n=2, kappa=(1, 2))
    with pytest.raises(IndexOutOfRangeError):
        InterferometerScene(u=hom_unitary, n=2, kappa=(3,))
    with pytest.raises(DomainError):
        InterferometerScene(u=hom_unitary, n=2, kappa=())


def test_scene_normalizes_kappa(hom_unitary):
    u = haar_unitary(4, seed=3)
    scene = InterferometerScene(u=u, n=2, kappa=(3, 1, 3))
    assert scene.kappa == (1, 3)
    assert scene.complement() == (2, 4)
    assert scene.m == 4


def test_h_is_psd_with_unit_bounded_spectrum(random_scene):
    for n in range(1, 6):
        h = h_matrix(random_scene(n))
        report = check_psd_hermitian(h)
        assert report.is_psd
        assert report.max_eigenvalue <= 1.0 + 1e-12


def test_complement_identity(random_scene):
    for n in range(1, 6):
        scene = random_scene(n)
        total = h_matrix(scene) + h_from_unitary(scene.u, n, scene.complement())
        assert_allclose(total, np.eye(n), atol=1e-12)


# --- Sampling and elements ---

def test_haar_unitary_is_unitary_and_seeded():
    u = haar_unitary(7, seed=11)
    assert unitarity_defect(u) < 1e-13
    assert_allclose(haar_unitary(7, seed=11), u)
    assert not np.allclose(haar_unitary(7, seed=12), u)
    with pytest.raises(DimensionError):
        haar_unitary(0)


def test_beam_splitter_embeds_two_modes():
    u = beam_splitter(4, 2, 4, math.pi / 4, 0.3)
    assert unitarity_defect(u) < 1e-14
    assert u[0, 0] == 1.0 and u[2, 2] == 1.0
    assert abs(u[1, 3]) == pytest.approx(2 ** -0.5)
    with pytest.raises(IndexOutOfRangeError):
        beam_splitter(3, 1, 1, 0.1, 0.0)
    with pytest.raises(IndexOutOfRangeError):
        beam_splitter(3, 1, 4, 0.1, 0.0)


# --- Embedding ---

def test_embed_rows_reproduces_scaled_gram(rng):
    block = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    scene, gamma = embed_rows(block)
    assert scene.m == 7
    assert scene.kappa == (1, 2)
    assert gamma == pytest.approx(1.0 / np.linalg.norm(block, 2) ** 2, rel=1e-10)
    assert_allclose(h_matrix(scene), gamma * block.conj().T @ block, atol=1e-12)
    assert hermitian_eigvalsh(h_matrix(scene))[-1] == pytest.approx(1.0, abs=1e-12)


def test_embed_rows_rejects_rank_deficient_and_tall():
    with pytest.raises(DomainError):
        embed_rows(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))
    with pytest.raises(DimensionError):
        embed_rows(np.ones((3, 2)))


# --- Reck ---

def test_reck_identity_has_no_elements():
    network = reck_decompose(np.eye(4))
    assert network.element_count == 0
    assert_allclose(network.phases, 0.0)


def test_reck_single_splitter(hom_unitary):
    network = reck_decompose(hom_unitary)
    assert network.element_count == 1
    assert network.reconstruction_error < 1e-12


@pytest.mark.parametrize("m", [2, 3, 6, 10])
def test_reck_round_trip(m):
    u = haar_unitary(m, seed=m)
    network = reck_decompose(u)
    assert network.element_count == m * (m - 1) // 2
    assert_allclose(reconstruct(network), u, atol=1e-9)
    assert all(1 <= e.mode_a < e.mode_b <= m for e in network.elements)


def test_reck_rejects_non_unitary():
    with pytest.raises(DomainError):
        reck_decompose(np.ones((3, 3)))


def test_reconstruct_hand_built_network():
    network = BsNetwork(m=2, elements=[], phases=np.array([0.0, math.pi]))
    assert_allclose(reconstruct(network), np.diag([1.0, -1.0]), atol=1e-15)


# --- Cascades ---

def test_cascade_gives_rank_one_h():
    u1, u2 = haar_unitary(3, seed=1), haar_unitary(4, seed=2)
    scene = cascade_rank_one(u1, 2, u2)
    assert scene.m == 6
    assert scene.n == 3
    assert scene.kappa == (2, 4, 5, 6)
    h = h_matrix(scene)
    # all light routed into u2 comes from output 2 of u1
    assert_allclose(h, np.outer(u1[1].conj(), u1[1]), atol=1e-12)


def test_cascade_validates_mode():
    with pytest.raises(IndexOutOfRangeError):
        cascade_rank_one(haar_unitary(2, seed=0), 3, haar_unitary(2, seed=1))
