"""Graph-Fourier trigger-pattern analysis.

A kNN graph Laplacian per cloud, its eigendecomposition, a per-cloud
spectral signal (spatial mean of the transformed coordinates), residual
signals between benign and triggered clouds, and normalized residual
energy over six frequency bands (UL, L, LM, HM, H, UH).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, knn
from .errors import EigenFailure, SizeMismatch, ZeroResidual

BAND_NAMES = ("UL", "L", "LM", "HM", "H", "UH")
# Frequency-index fenceposts at the reference cloud size of 1024 points:
# band 1 covers [1, 8], band k covers (post_{k-1}, post_k].
REFERENCE_POSTS = (1, 8, 32, 128, 256, 512, 1024)
REFERENCE_N = 1024


def graph_laplacian(cloud: PointCloud, k: int = 10) -> np.ndarray:
    """Combinatorial Laplacian D - A of the union-symmetrized kNN graph."""
    idx = knn(cloud, k)
    n = cloud.n
    adj = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    adj[rows, idx.ravel()] = 1.0
    adj = np.maximum(adj, adj.T)
    lap = np.diag(adj.sum(axis=1)) - adj
    return lap


@dataclass
class GraphSpectrum:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns, sign-fixed
    signal: np.ndarray  # spatial mean of the transformed coordinates


def gft(cloud: PointCloud, k: int = 10) -> GraphSpectrum:
    """Eigendecompose the cloud's Laplacian and transform its coordinates.

    Eigenvector signs are fixed so the largest-magnitude entry (first on
    ties) is positive, making the transform reproducible.
    """
    lap = graph_laplacian(cloud, k)
    try:
        eigenvalues, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc))
    anchor = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[anchor, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    signal = (vecs.T @ cloud.points).mean(axis=1)
    return GraphSpectrum(eigenvalues=eigenvalues, eigenvectors=vecs, signal=signal)


def residual_spectrum(
    cloud: PointCloud,
    triggered: PointCloud,
    k: int = 10,
    stabilize: bool = True,
) -> np.ndarray:
    """Difference of the two clouds' spectral signals.

    Each cloud is transformed on its own graph.  Because eigenvectors of
    two different graphs are only defined up to sign (and rotation within
    eigenspaces), the default compares per-index magnitudes; stabilize=
    False subtracts the sign-fixed raw signals instead.
    """
    if cloud.n != triggered.n:
        raise SizeMismatch(f"{cloud.n} vs {triggered.n} points")
    s_clean = gft(cloud, k).signal
    s_trig = gft(triggered, k).signal
    if stabilize:
        return np.abs(s_clean) - np.abs(s_trig)
    return s_clean - s_trig


@dataclass
class BandProfile:
    fractions: np.ndarray  # six nonnegative values summing to one
    posts: tuple[int, ...]

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(BAND_NAMES, self.fractions)}


def band_posts(n: int) -> tuple[int, ...]:
    """Reference fenceposts rescaled proportionally to the cloud size."""
    posts = [1]
    for p in REFERENCE_POSTS[1:]:
        scaled = int(round(p * n / REFERENCE_N))
        posts.append(max(posts[-1] + 1, scaled))
    if posts[-1] != n:
        posts[-1] = n
    return tuple(posts)


def band_profile(residual: np.ndarray, posts: tuple[int, ...] | None = None) -> BandProfile:
    """Normalized absolute residual mass inside each band."""
    residual = np.asarray(residual, dtype=np.float64)
    n = residual.size
    if posts is None:
        posts = band_posts(n)
    if posts[-1] > n:
        raise ValueError(f"fencepost {posts[-1]} exceeds signal length {n}")
    mag = np.abs(residual)
    total = mag.sum()
    if total == 0.0:
        raise ZeroResidual("residual signal is identically zero")
    fractions = np.empty(len(posts) - 1)
    # 1-indexed frequencies: band 1 is [1, posts[1]], band k is
    # (posts[k-1], posts[k]]
    fractions[0] = mag[0 : posts[1]].sum()
    for b in range(1, len(posts) - 1):
        fractions[b] = mag[posts[b] : posts[b + 1]].sum()
    return BandProfile(fractions=fractions / total, posts=tuple(posts))
