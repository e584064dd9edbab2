"""Point-set discrepancies: Chamfer, Hausdorff, exact and sliced Wasserstein.

Conventions: Chamfer is the sum over both sides of the mean *squared*
nearest-neighbor distance; Hausdorff is unsquared; exact Wasserstein is the
mean squared cost of the optimal assignment (W2^2); sliced Wasserstein is
the average 1D W2^2 over random unit directions.  All values are
non-negative and symmetric in their two arguments.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cloud import PointCloud
from .errors import EmptyCloud, SizeLimit, SizeMismatch
from .rng import SeededRng

WASSERSTEIN_MAX_POINTS = 4096


def _as_points(x) -> np.ndarray:
    pts = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    if pts.size == 0:
        raise EmptyCloud("metric input is empty")
    return pts


def _exact_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances by explicit differences.

    Slower than the inner-product expansion but exact near zero, which
    the identity-of-indiscernibles guarantee requires.
    """
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def chamfer(x, y) -> float:
    """Mean squared nearest-neighbor distance, summed over both directions."""
    xp, yp = _as_points(x), _as_points(y)
    d2 = _exact_sq_dists(xp, yp)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def hausdorff(x, y) -> float:
    """Worst-case nearest-neighbor distance (unsquared)."""
    xp, yp = _as_points(x), _as_points(y)
    d2 = _exact_sq_dists(xp, yp)
    worst = max(d2.min(axis=1).max(), d2.min(axis=0).max())
    return float(np.sqrt(worst))


def wasserstein_exact(x, y) -> float:
    """W2^2 via the optimal assignment between equally sized sets."""
    xp, yp = _as_points(x), _as_points(y)
    if len(xp) != len(yp):
        raise SizeMismatch(f"{len(xp)} vs {len(yp)} points")
    if len(xp) > WASSERSTEIN_MAX_POINTS:
        raise SizeLimit(f"exact matching capped at {WASSERSTEIN_MAX_POINTS} points")
    cost = _exact_sq_dists(xp, yp)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def sample_unit_directions(n_dirs: int, rng: SeededRng) -> np.ndarray:
    """(n_dirs, 3) uniform directions on the unit sphere."""
    gen = rng.generator()
    v = gen.normal(size=(n_dirs, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    bad = norms[:, 0] < 1e-12
    while bad.any():
        v[bad] = gen.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = norms[:, 0] < 1e-12
    return v / norms


def sliced_wasserstein(
    x, y, n_proj: int = 128, rng: SeededRng | None = None, directions=None
) -> float:
    """Average 1D W2^2 between sorted projections over random directions.

    Pass `directions` to pin the projection set explicitly; otherwise
    n_proj directions are drawn from rng.
    """
    xp, yp = _as_points(x), _as_points(y)
    if len(xp) != len(yp):
        raise SizeMismatch(f"{len(xp)} vs {len(yp)} points")
    if directions is None:
        if n_proj < 1:
            raise ValueError("n_proj must be >= 1")
        if rng is None:
            raise ValueError("need rng when directions are not given")
        directions = sample_unit_directions(n_proj, rng)
    directions = np.asarray(directions, dtype=np.float64)
    px = np.sort(xp @ directions.T, axis=0)
    py = np.sort(yp @ directions.T, axis=0)
    return float(np.mean((px - py) ** 2))
