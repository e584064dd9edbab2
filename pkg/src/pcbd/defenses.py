"""Augmentation defenses, outlier removal, low-pass filtering, and
gradient-based trigger detection (radial saliency and activation maps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, _pairwise_sq_dists, rotate_euler
from .errors import AllPointsRemoved, UntrainedModel
from .rng import SeededRng
from .sht import SmoothingConfig, lowpass_filter

AUG_VARIANTS = ("R", "R3", "Scaling", "Translation", "Dropout", "Jitter", "SOR")

# Desk-calibrated ball-count filtering: the reference rule (50 neighbors
# inside radius 0.1 at n=1024) removes every point of a unit-scale surface
# cloud, whose 0.1-neighborhoods hold only ~2.5 points.  The neighbor
# threshold keeps the reference 50*n/1024 scaling; the default radius is
# widened so dense-surface points clear the threshold while isolated
# corner clusters (whose neighborhoods stay mate-only) do not.
SOR_RADIUS = 0.5
SOR_MIN_NEIGHBORS_AT_1024 = 50.0


@dataclass(frozen=True)
class AugmentationSpec:
    variant: str
    seed: int = 0
    max_angle_deg: float = 10.0  # R / R3
    scale_lo: float = 0.95
    scale_hi: float = 1.05
    translate_extent: float = 0.05
    dropout_max: float = 0.2
    sigma: float = 0.02  # Jitter
    sor_radius: float = SOR_RADIUS
    sor_min_neighbors: float | None = None

    def __post_init__(self):
        if self.variant not in AUG_VARIANTS:
            raise ValueError(f"unknown augmentation {self.variant!r}")
        if not 0.0 <= self.dropout_max < 1.0:
            raise ValueError("dropout_max must lie in [0, 1)")
        if self.scale_lo > self.scale_hi:
            raise ValueError("scale_lo must be <= scale_hi")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "max_angle_deg": self.max_angle_deg,
            "scale_lo": self.scale_lo,
            "scale_hi": self.scale_hi,
            "translate_extent": self.translate_extent,
            "dropout_max": self.dropout_max,
            "sigma": self.sigma,
            "sor_radius": self.sor_radius,
            "sor_min_neighbors": self.sor_min_neighbors,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AugmentationSpec":
        return cls(**raw)


def augment(
    cloud: PointCloud, spec: AugmentationSpec, rng: SeededRng | None = None
) -> PointCloud:
    """Apply one augmentation; the point count is always preserved."""
    if rng is None:
        rng = SeededRng(spec.seed)
    gen = rng.generator()
    v = spec.variant
    if v == "R":
        angle = gen.uniform(-spec.max_angle_deg, spec.max_angle_deg)
        return rotate_euler(cloud, (0.0, 0.0, angle))
    if v == "R3":
        angles = gen.uniform(-spec.max_angle_deg, spec.max_angle_deg, size=3)
        return rotate_euler(cloud, tuple(angles))
    if v == "Scaling":
        return PointCloud(cloud.points * gen.uniform(spec.scale_lo, spec.scale_hi))
    if v == "Translation":
        offset = gen.uniform(-spec.translate_extent, spec.translate_extent, size=3)
        return PointCloud(cloud.points + offset)
    if v == "Dropout":
        frac = gen.uniform(0.0, spec.dropout_max)
        n_drop = int(round(frac * cloud.n))
        if n_drop == 0:
            return cloud.copy()
        drop = gen.choice(cloud.n, size=n_drop, replace=False)
        keep = np.setdiff1d(np.arange(cloud.n), drop)
        refill = gen.choice(keep, size=n_drop, replace=True)
        pts = cloud.points.copy()
        pts[drop] = cloud.points[refill]
        return PointCloud(pts)
    if v == "Jitter":
        if spec.sigma == 0.0:
            return cloud.copy()
        return PointCloud(
            cloud.points + gen.normal(0.0, spec.sigma, size=cloud.points.shape)
        )
    if v == "SOR":
        filtered = sor(cloud, spec.sor_radius, spec.sor_min_neighbors)
        short = cloud.n - filtered.n
        if short == 0:
            return filtered
        refill = gen.integers(0, filtered.n, size=short)
        return PointCloud(np.vstack([filtered.points, filtered.points[refill]]))
    raise ValueError(f"unknown augmentation {v!r}")


def ball_neighbor_counts(points: np.ndarray, radius: float) -> np.ndarray:
    """Self-excluded neighbor counts within the given radius."""
    d2 = _pairwise_sq_dists(points, points)
    counts = (d2 <= radius * radius).sum(axis=1) - 1
    return counts


def sor(
    cloud: PointCloud,
    radius: float = SOR_RADIUS,
    min_neighbors: float | None = None,
) -> PointCloud:
    """Remove points with too few neighbors inside their radius ball.

    The threshold defaults to 50*n/1024 and scales with the cloud size;
    order of the surviving points is preserved.
    """
    if min_neighbors is None:
        min_neighbors = SOR_MIN_NEIGHBORS_AT_1024 * cloud.n / 1024.0
    counts = ball_neighbor_counts(cloud.points, radius)
    keep = counts >= min_neighbors
    if not keep.any():
        raise AllPointsRemoved(
            f"threshold {min_neighbors:.1f} at radius {radius} rejects all "
            f"{cloud.n} points"
        )
    return PointCloud(cloud.points[keep])


def lpf_defense(
    cloud: PointCloud, l_cut: int = 16, config: SmoothingConfig | None = None
) -> PointCloud:
    """Low-pass the radial field; may return fewer points (cell merges)."""
    if config is None:
        config = SmoothingConfig()
    return lowpass_filter(cloud, l_cut, config)


# ---------------------------------------------------------------------------
# gradient-based detection
# ---------------------------------------------------------------------------

@dataclass
class SaliencyResult:
    values: np.ndarray  # per-point significance
    top_indices: np.ndarray  # round(fraction*n) indices, most significant first
    fraction: float
    alpha: float


def saliency(
    model,
    cloud: PointCloud,
    label: int,
    alpha: float = 1.0,
    fraction: float = 0.02,
) -> SaliencyResult:
    """Loss sensitivity to pulling each point toward the origin.

    With rho = r^{-alpha}, the significance is dLoss/drho =
    -(r^{alpha+1}/alpha) * (unit_radial . dLoss/dx).  Positive values mean
    the loss rises when the point moves inward, i.e. the point supports
    the given label.  Clouds should be centroid-normalized first.
    """
    if not getattr(model, "trained", False):
        raise UntrainedModel("saliency needs a trained victim")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    grad = model.input_gradient(cloud, label)
    r = np.linalg.norm(cloud.points, axis=1)
    safe = r > 1e-12
    radial = np.zeros(cloud.n)
    radial[safe] = np.einsum(
        "ij,ij->i", cloud.points[safe] / r[safe, None], grad[safe]
    )
    values = np.zeros(cloud.n)
    values[safe] = -(r[safe] ** (alpha + 1.0) / alpha) * radial[safe]
    n_top = int(round(fraction * cloud.n))
    order = np.argsort(-values, kind="stable")
    return SaliencyResult(
        values=values,
        top_indices=order[:n_top],
        fraction=fraction,
        alpha=alpha,
    )


@dataclass
class CamResult:
    values: np.ndarray  # nonnegative per-point activation
    channel_weights: np.ndarray  # class response per feature channel
    class_index: int
    counterfactual: bool


def grad_cam(
    model, cloud: PointCloud, class_index: int, counterfactual: bool = False
) -> CamResult:
    """Activation map: channel weights from the class logit's gradient on
    the per-point features, re-applied to the features, then ReLU.

    The counterfactual flag negates the gradients before aggregation,
    highlighting regions competing with the class evidence.
    """
    if not getattr(model, "trained", False):
        raise UntrainedModel("activation maps need a trained victim")
    from . import nn

    features = model.pointwise_features(cloud.points)
    logits = model.head_from_features(features)
    k = logits.value.shape[-1]
    if not 0 <= class_index < k:
        raise ValueError(f"class index {class_index} outside [0, {k})")
    onehot = np.zeros(k)
    onehot[class_index] = 1.0
    picked = nn.scale(nn.mean_all(nn.mul(logits, nn.Var(onehot))), float(k))
    picked.backward()
    w = features.grad  # (n, c) response of the logit to each feature entry
    if counterfactual:
        w = -w
    channel_w = w.sum(axis=0)
    values = np.maximum(features.value @ channel_w, 0.0)
    return CamResult(values=values, channel_weights=channel_w,
                     class_index=class_index, counterfactual=counterfactual)
