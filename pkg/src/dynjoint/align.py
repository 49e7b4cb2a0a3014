"""Procrustes alignment of shared latent positions and 2-D projection."""
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficiencyWarning, ShapeMismatch


@dataclass
class LatentPositionFrame:
    t_idx: int
    Z: np.ndarray  # (J, R)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 2:
            raise ShapeMismatch("latent frame must be a J x R matrix")
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("latent frame has non-finite entries")


def _matrix(frame):
    return frame.Z if isinstance(frame, LatentPositionFrame) else np.asarray(frame, dtype=np.float64)


def procrustes_rotation(Z, Z0):
    """Orthogonal O minimizing ||Z O - Z0||_F (reflections allowed)."""
    Z, Z0 = _matrix(Z), _matrix(Z0)
    if Z.shape != Z0.shape:
        raise ShapeMismatch(f"frames differ in shape: {Z.shape} vs {Z0.shape}")
    U, _, Vt = np.linalg.svd(Z.T @ Z0)
    return U @ Vt


def procrustes_rotate(Z, Z0):
    """Rotate ``Z`` onto ``Z0``; returns a frame carrying ``Z``'s time index."""
    O = procrustes_rotation(Z, Z0)
    t_idx = Z.t_idx if isinstance(Z, LatentPositionFrame) else -1
    return LatentPositionFrame(t_idx, _matrix(Z) @ O)


def frames_at(archive, t_idx):
    """Shared positions zeta_j(t) for every draw: (Q, J, R)."""
    return archive.zeta[:, :, :, t_idx]


def posterior_mean_positions(archive, t_idx):
    """Average of all draws after rotating each onto the first draw."""
    frames = frames_at(archive, t_idx)
    if frames.shape[0] == 0:
        raise ValueError("empty archive")
    ref = frames[0]
    total = np.zeros_like(ref)
    for Z in frames:
        total += Z @ procrustes_rotation(Z, ref)
    return LatentPositionFrame(int(t_idx), total / frames.shape[0])


def pca_project(frame, tol=1e-10):
    """Centered frame projected on its two leading right singular vectors.

    Each loading vector is signed so its largest-magnitude entry is positive.
    Warns with :class:`RankDeficiencyWarning` when the second singular value
    is below ``tol``.
    """
    Z = _matrix(frame)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ShapeMismatch("PCA projection needs at least two latent dimensions")
    X = Z - Z.mean(axis=0)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    V = Vt[:2].T.copy()
    for c in range(2):
        if V[np.argmax(np.abs(V[:, c])), c] < 0:
            V[:, c] = -V[:, c]
    if s.size < 2 or s[1] < tol:
        warnings.warn("second singular value is numerically zero", RankDeficiencyWarning)
    return X @ V


def rank_deficient(frame, tol=1e-10):
    Z = _matrix(frame)
    s = np.linalg.svd(Z - Z.mean(axis=0), compute_uv=False)
    return bool(s.size < 2 or s[1] < tol)
