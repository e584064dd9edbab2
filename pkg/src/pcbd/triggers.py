"""Trigger implanting functions behind one uniform interface.

Variants: "iba" (autoencoder reconstruction, optionally smoothed with
intensity t), "ball" (corner cluster replacing a fraction of the points),
"rotation" (rigid Euler rotation), "jitter" (per-point Gaussian noise).
Every variant preserves the point count and is bit-deterministic given
(spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ae import AEModel, implant_iba
from .cloud import PointCloud, rotate_euler
from .errors import FractionTooSmall
from .rng import SeededRng
from .sht import SmoothingConfig, homotopy

VARIANTS = ("iba", "ball", "rotation", "jitter")


@dataclass(frozen=True)
class TriggerSpec:
    variant: str
    seed: int = 0
    # iba
    smoothing_t: float | None = None
    smoothing_n_max: int = 100
    # ball cluster
    center: tuple[float, float, float] = (-0.9, -0.9, -0.9)
    radius: float = 0.1
    fraction: float = 0.02
    # rotation
    angles: tuple[float, float, float] = (0.0, 0.0, 10.0)
    # jitter
    sigma: float = 0.02

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown trigger variant {self.variant!r}")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must lie in (0, 1)")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.smoothing_t is not None and not 0.0 <= self.smoothing_t <= 1.0:
            raise ValueError("smoothing t must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "smoothing_t": self.smoothing_t,
            "smoothing_n_max": self.smoothing_n_max,
            "center": list(self.center),
            "radius": self.radius,
            "fraction": self.fraction,
            "angles": list(self.angles),
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TriggerSpec":
        raw = dict(raw)
        for key in ("center", "angles"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def ball_cluster(
    cloud: PointCloud,
    center=(-0.9, -0.9, -0.9),
    radius: float = 0.1,
    fraction: float = 0.02,
    rng: SeededRng = SeededRng(0),
) -> PointCloud:
    """Replace round(fraction*n) uniformly chosen points with points drawn
    uniformly inside the ball B(center, radius); the rest stay verbatim."""
    n = cloud.n
    m = int(round(fraction * n))
    if m < 1:
        raise FractionTooSmall(f"fraction {fraction} selects no points of n={n}")
    gen = rng.generator()
    replace_idx = gen.choice(n, size=m, replace=False)
    dirs = gen.normal(size=(m, 3))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    radii = radius * gen.random(m) ** (1.0 / 3.0)
    pts = cloud.points.copy()
    pts[replace_idx] = np.asarray(center) + dirs * radii[:, None]
    return PointCloud(pts)


def rotation_trigger(cloud: PointCloud, angles=(0.0, 0.0, 10.0)) -> PointCloud:
    return rotate_euler(cloud, angles)


def jitter_trigger(
    cloud: PointCloud, sigma: float = 0.02, rng: SeededRng = SeededRng(0)
) -> PointCloud:
    if sigma == 0.0:
        return cloud.copy()
    gen = rng.generator()
    return PointCloud(cloud.points + gen.normal(0.0, sigma, size=cloud.points.shape))


def apply_trigger(
    spec: TriggerSpec,
    cloud: PointCloud,
    ae_model: AEModel | None = None,
    instance: int = 0,
) -> PointCloud:
    """Dispatch to the variant; iba needs the trained autoencoder.

    `instance` decorrelates the random draws of stochastic variants across
    the entries of a dataset while keeping the whole mapping a pure
    function of (spec, instance).
    """
    rng = SeededRng(spec.seed).derive(instance)
    if spec.variant == "iba":
        if ae_model is None:
            raise ValueError("iba trigger requires the autoencoder model")
        t = spec.smoothing_t
        if t is None or t == 1.0:
            return implant_iba(ae_model, cloud)
        cfg = SmoothingConfig(n_max=spec.smoothing_n_max, seed=rng.stream)
        return homotopy(lambda c: implant_iba(ae_model, c), cloud, t, cfg)
    if spec.variant == "ball":
        return ball_cluster(cloud, spec.center, spec.radius, spec.fraction, rng)
    if spec.variant == "rotation":
        return rotation_trigger(cloud, spec.angles)
    if spec.variant == "jitter":
        return jitter_trigger(cloud, spec.sigma, rng)
    raise ValueError(f"unknown trigger variant {spec.variant!r}")
