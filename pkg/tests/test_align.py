import warnings

import numpy as np
import pytest
from scipy.stats import ortho_group

from dynjoint.align import (
    LatentPositionFrame,
    frames_at,
    pca_project,
    posterior_mean_positions,
    procrustes_rotate,
    procrustes_rotation,
    rank_deficient,
)
from dynjoint.errors import RankDeficiencyWarning, ShapeMismatch

from conftest import make_archive


def test_identity_when_equal():
    Z = np.random.default_rng(0).standard_normal((6, 3))
    O = procrustes_rotation(Z, Z)
    np.testing.assert_allclose(O, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(procrustes_rotate(LatentPositionFrame(2, Z), Z).Z, Z, atol=1e-12)


def test_orbit_recovery():
    rng = np.random.default_rng(1)
    for _ in range(50):
        Z0 = rng.standard_normal((10, 4))
        Q = ortho_group.rvs(4, random_state=rng)
        out = procrustes_rotate(Z0 @ Q.T, Z0)
        assert np.max(np.abs(out.Z - Z0)) < 1e-8


def test_gram_invariance():
    rng = np.random.default_rng(2)
    Z, Z0 = rng.standard_normal((2, 12, 3))
    out = procrustes_rotate(Z, Z0).Z
    assert np.max(np.abs(out @ out.T - Z @ Z.T)) < 1e-10


def test_randomized_optimality():
    rng = np.random.default_rng(3)
    Z, Z0 = rng.standard_normal((2, 15, 4))
    best = np.linalg.norm(Z @ procrustes_rotation(Z, Z0) - Z0)
    for _ in range(1000):
        Q = ortho_group.rvs(4, random_state=rng)
        assert np.linalg.norm(Z @ Q - Z0) > best - 1e-10


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        procrustes_rotation(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ShapeMismatch):
        LatentPositionFrame(0, np.zeros(3))
    with pytest.raises(ValueError):
        LatentPositionFrame(0, np.full((2, 2), np.nan))


def test_posterior_mean_identical_draws():
    arc = make_archive(Q=4, J=5, Rz=3, seed=0)
    arc.zeta[:] = arc.zeta[:1]
    out = posterior_mean_positions(arc, 2)
    np.testing.assert_allclose(out.Z, arc.zeta[0, :, :, 2], atol=1e-12)


def test_posterior_mean_rotation_orbit():
    rng = np.random.default_rng(4)
    arc = make_archive(Q=30, J=6, Rz=3, seed=1)
    ref = arc.zeta[0, :, :, 1].copy()
    for q in range(1, 30):
        arc.zeta[q, :, :, 1] = ref @ ortho_group.rvs(3, random_state=rng)
    out = posterior_mean_positions(arc, 1)
    assert np.max(np.abs(out.Z - ref)) < 1e-6
    assert frames_at(arc, 1).shape == (30, 6, 3)
    # each rotated draw keeps its Gram matrix
    for Z in frames_at(arc, 1):
        R = procrustes_rotate(Z, ref).Z
        assert np.max(np.abs(R @ R.T - Z @ Z.T)) < 1e-10


def test_pca_two_column_frame_up_to_signs():
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 2)))
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    frame = Q * np.array([3.0, 1.0])
    frame -= frame.mean(axis=0)
    out = pca_project(frame)
    for c in range(2):
        assert np.allclose(out[:, c], frame[:, c], atol=1e-10) or np.allclose(out[:, c], -frame[:, c], atol=1e-10)


def test_pca_ordering_and_eckart_young():
    rng = np.random.default_rng(6)
    Z = rng.standard_normal((10, 4)) * np.array([3.0, 2.0, 1.0, 0.5])
    P = pca_project(Z)
    var = P.var(axis=0)
    assert var[0] >= var[1]
    X = Z - Z.mean(axis=0)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    # rebuild from the projection and its own loadings
    V = np.linalg.lstsq(P, X, rcond=None)[0]
    err = np.linalg.norm(X - P @ V) ** 2
    assert abs(err - np.sum(s[2:] ** 2)) < 1e-10


def test_pca_rank_deficiency_warns():
    Z = np.outer(np.arange(5.0), [1.0, 2.0, 0.5])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pca_project(Z)
    assert any(issubclass(w.category, RankDeficiencyWarning) for w in caught)
    assert rank_deficient(Z)
    with pytest.raises(ShapeMismatch):
        pca_project(np.zeros((4, 1)))
