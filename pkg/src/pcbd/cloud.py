"""Point-cloud data model, normalization, sampling, transforms, and I/O.

Clouds are (n, 3) float64 arrays wrapped in PointCloud.  All operations are
pure: they never mutate their inputs and are deterministic given a
SeededRng.  Coordinates are dimensionless; normalized clouds live in the
[-1, 1]^3 cube with their centroid at the origin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DegenerateCloud,
    KTooLarge,
    ParseError,
    SizeMismatch,
)
from .rng import SeededRng

NORM_TOL = 1e-9


class PointCloud:
    """An ordered set of n 3D points."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("cloud contains non-finite coordinates")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy())

    def max_abs(self) -> float:
        return float(np.abs(self.points).max())

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return self.max_abs() <= 1.0 + tol

    def __repr__(self) -> str:
        return f"PointCloud(n={self.n})"


@dataclass
class LabeledDataset:
    """Clouds with integer class labels; all clouds share one point count."""

    clouds: list[PointCloud]
    labels: np.ndarray
    k: int
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.clouds) != len(self.labels):
            raise SizeMismatch(
                f"{len(self.clouds)} clouds vs {len(self.labels)} labels"
            )
        if len(self.clouds) == 0:
            raise SizeMismatch("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")
        n0 = self.clouds[0].n
        for i, c in enumerate(self.clouds):
            if c.n != n0:
                raise SizeMismatch(f"cloud {i} has {c.n} points, expected {n0}")

    @property
    def n_points(self) -> int:
        return self.clouds[0].n

    def __len__(self) -> int:
        return len(self.clouds)

    def entries(self) -> Iterator[tuple[PointCloud, int]]:
        for cloud, label in zip(self.clouds, self.labels):
            yield cloud, int(label)

    def stacked(self) -> np.ndarray:
        """All clouds as one (N, n, 3) array."""
        return np.stack([c.points for c in self.clouds])


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Center at the centroid, then scale isotropically to max-abs 1."""
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.abs(pts).max()
    if scale < 1e-12:
        raise DegenerateCloud("all points coincide")
    return PointCloud(pts / scale)


def resample_to_n(cloud: PointCloud, n_target: int, rng: SeededRng) -> PointCloud:
    """Return exactly n_target points drawn from the cloud.

    Downsampling keeps a uniform subset in original order; upsampling keeps
    every original point and appends uniform draws with replacement.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    n = cloud.n
    if n_target == n:
        return cloud.copy()
    gen = rng.generator()
    if n > n_target:
        idx = np.sort(gen.choice(n, size=n_target, replace=False))
    else:
        extra = gen.integers(0, n, size=n_target - n)
        idx = np.concatenate([np.arange(n), extra])
    return PointCloud(cloud.points[idx])


def knn(cloud: PointCloud, k: int) -> np.ndarray:
    """(n, k) indices of each point's k nearest neighbors, self excluded.

    Ties break toward the lower index so the table is reproducible.
    """
    n = cloud.n
    if k >= n:
        raise KTooLarge(f"k={k} but cloud has only {n} points")
    d2 = _pairwise_sq_dists(cloud.points, cloud.points)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k])


def rotate_euler(cloud: PointCloud, angles_deg: Sequence[float]) -> PointCloud:
    """Rotate by R_z(gamma) . R_y(beta) . R_x(alpha), angles in degrees."""
    rot = euler_matrix(angles_deg)
    return PointCloud(cloud.points @ rot.T)


def euler_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    a, b, g = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(|a|, |b|) squared Euclidean distances, clipped at zero."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------
#
# Invented shape families that give a toy classifier a learnable task.
# Every family keeps its surface well away from the cube corner near
# (-0.9, -0.9, -0.9) even after per-instance scaling and z-rotation, so
# that corner-cluster triggers remain density outliers there.

DEFAULT_FAMILIES = (
    "sphere",
    "box",
    "cylinder",
    "cone",
    "torus",
    "ellipsoid",
    "cross",
    "pyramid",
)


def _sample_sphere_dirs(gen, count):
    v = gen.normal(size=(count, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # resample the (measure-zero) degenerate draws
    bad = norms[:, 0] < 1e-12
    while bad.any():
        v[bad] = gen.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = norms[:, 0] < 1e-12
    return v / norms


def _surface_sphere(gen, count):
    return _sample_sphere_dirs(gen, count)


def _surface_ellipsoid(gen, count, semi=(1.0, 0.78, 0.55)):
    a, b, c = semi
    pts = np.empty((count, 3))
    got = 0
    m_max = max(a * b, a * c, b * c)
    while got < count:
        u = _sample_sphere_dirs(gen, 2 * (count - got) + 8)
        # area-element weight of the sphere->ellipsoid map
        m = np.sqrt(
            (u[:, 0] * b * c) ** 2 + (u[:, 1] * a * c) ** 2 + (u[:, 2] * a * b) ** 2
        )
        keep = gen.random(len(u)) * m_max < m
        sel = u[keep][: count - got]
        pts[got : got + len(sel)] = sel * np.array(semi)
        got += len(sel)
    return pts


def _surface_box(gen, count, semi=(1.0, 0.5, 0.25)):
    sx, sy, sz = semi
    areas = np.array([sy * sz, sx * sz, sx * sy])  # faces normal to x, y, z
    probs = areas / areas.sum()
    axis = gen.choice(3, size=count, p=probs)
    side = gen.choice([-1.0, 1.0], size=count)
    uv = gen.uniform(-1.0, 1.0, size=(count, 2))
    pts = np.empty((count, 3))
    for i, (ax, s) in enumerate(zip(axis, side)):
        others = [j for j in range(3) if j != ax]
        pts[i, ax] = s * semi[ax]
        pts[i, others[0]] = uv[i, 0] * semi[others[0]]
        pts[i, others[1]] = uv[i, 1] * semi[others[1]]
    return pts


def _surface_cylinder(gen, count, radius=1.0, half_h=0.5):
    lateral = 2 * np.pi * radius * (2 * half_h)
    caps = 2 * np.pi * radius**2
    on_side = gen.random(count) < lateral / (lateral + caps)
    phi = gen.uniform(0, 2 * np.pi, size=count)
    pts = np.empty((count, 3))
    # lateral wall
    z = gen.uniform(-half_h, half_h, size=count)
    pts[on_side] = np.c_[
        radius * np.cos(phi[on_side]),
        radius * np.sin(phi[on_side]),
        z[on_side],
    ]
    # caps, uniform in the disk
    m = ~on_side
    r = radius * np.sqrt(gen.random(int(m.sum())))
    top = gen.choice([-1.0, 1.0], size=int(m.sum()))
    pts[m] = np.c_[r * np.cos(phi[m]), r * np.sin(phi[m]), top * half_h]
    return pts


def _surface_cone(gen, count, radius=1.0, z_base=-0.4, z_apex=0.85):
    h = z_apex - z_base
    slant = np.sqrt(radius**2 + h**2)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    on_side = gen.random(count) < lateral / (lateral + base)
    phi = gen.uniform(0, 2 * np.pi, size=count)
    # sqrt law makes both the disk and the unrolled cone sheet uniform
    r = radius * np.sqrt(gen.random(count))
    z = np.where(on_side, z_apex - (r / radius) * h, z_base)
    return np.c_[r * np.cos(phi), r * np.sin(phi), z]


def _surface_torus(gen, count, ring=0.72, tube=0.28):
    pts = np.empty((count, 3))
    got = 0
    while got < count:
        m = 2 * (count - got) + 8
        phi = gen.uniform(0, 2 * np.pi, size=m)
        psi = gen.uniform(0, 2 * np.pi, size=m)
        # area element ~ ring + tube*cos(psi); rejection keeps it uniform
        keep = gen.random(m) * (ring + tube) < ring + tube * np.cos(psi)
        phi, psi = phi[keep][: count - got], psi[keep][: count - got]
        rad = ring + tube * np.cos(psi)
        sel = np.c_[rad * np.cos(phi), rad * np.sin(phi), tube * np.sin(psi)]
        pts[got : got + len(sel)] = sel
        got += len(sel)
    return pts


def _surface_cross(gen, count, half_w=1.0, half_h=0.8):
    on_first = gen.random(count) < 0.5
    u = gen.uniform(-half_w, half_w, size=count)
    v = gen.uniform(-half_h, half_h, size=count)
    pts = np.zeros((count, 3))
    pts[on_first, 1] = u[on_first]
    pts[~on_first, 0] = u[~on_first]
    pts[:, 2] = v
    return pts


def _surface_pyramid(gen, count, base=(1.0, 0.5), z_base=-0.35, apex_z=0.8):
    bx, by = base
    apex = np.array([0.0, 0.0, apex_z])
    corners = np.array(
        [[-bx, -by, z_base], [bx, -by, z_base], [bx, by, z_base], [-bx, by, z_base]]
    )
    tris = [(corners[i], corners[(i + 1) % 4], apex) for i in range(4)]
    tri_areas = [
        0.5 * np.linalg.norm(np.cross(b - a, c - a)) for a, b, c in tris
    ]
    areas = np.array([4.0 * bx * by] + tri_areas)
    which = gen.choice(5, size=count, p=areas / areas.sum())
    pts = np.empty((count, 3))
    for i, w in enumerate(which):
        if w == 0:
            pts[i] = [
                gen.uniform(-bx, bx),
                gen.uniform(-by, by),
                z_base,
            ]
        else:
            a, b, c = tris[w - 1]
            r1, r2 = gen.random(), gen.random()
            s1 = np.sqrt(r1)
            pts[i] = (1 - s1) * a + s1 * (1 - r2) * b + s1 * r2 * c
    return pts


_FAMILY_SAMPLERS = {
    "sphere": _surface_sphere,
    "box": _surface_box,
    "cylinder": _surface_cylinder,
    "cone": _surface_cone,
    "torus": _surface_torus,
    "ellipsoid": _surface_ellipsoid,
    "cross": _surface_cross,
    "pyramid": _surface_pyramid,
}


def synth_cloud(family: str, n: int, rng: SeededRng) -> PointCloud:
    """One normalized cloud sampled on the family surface.

    Applies a per-instance isotropic scale in [0.8, 1.2], a mild per-axis
    stretch in [0.92, 1.08], and a uniform z-rotation before normalizing.
    The stretch is kept mild so no family's surface wanders into the
    corner region used by cluster triggers.
    """
    if family not in _FAMILY_SAMPLERS:
        raise ValueError(f"unknown shape family {family!r}")
    if n < 16:
        raise ValueError("need n >= 16")
    gen = rng.generator()
    pts = _FAMILY_SAMPLERS[family](gen, n)
    scale = gen.uniform(0.8, 1.2) * gen.uniform(0.92, 1.08, size=3)
    pts = pts * scale
    theta = gen.uniform(0.0, 360.0)
    cloud = PointCloud(pts)
    cloud = rotate_euler(cloud, (0.0, 0.0, theta))
    return normalize_unit_cube(cloud)


def synth_dataset(
    classes: Sequence[str],
    per_class: int,
    n: int,
    rng: SeededRng,
    split: str = "train",
) -> LabeledDataset:
    """Labeled dataset of per_class clouds for each listed family."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    clouds: list[PointCloud] = []
    labels: list[int] = []
    for label, family in enumerate(classes):
        for i in range(per_class):
            sub = rng.derive(label * 1_000_003 + i)
            clouds.append(synth_cloud(family, n, sub))
            labels.append(label)
    return LabeledDataset(clouds, np.array(labels), k=len(classes), split=split)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def save_xyz(cloud: PointCloud, path) -> None:
    """Plain text, one 'x y z' triple per line, full float64 precision."""
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def load_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", line=lineno)
            try:
                triple = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric field in {stripped!r}", line=lineno)
            if not all(np.isfinite(triple)):
                raise ParseError("non-finite coordinate", line=lineno)
            rows.append(triple)
    if not rows:
        raise ParseError("file contains no points")
    return PointCloud(np.array(rows))


DATASET_MANIFEST = "manifest.json"


def save_dataset(dataset: LabeledDataset, directory) -> None:
    """Manifest (JSON) plus one .xyz file per cloud."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    width = len(str(len(dataset) - 1))
    for i, (cloud, label) in enumerate(dataset.entries()):
        name = f"cloud_{i:0{width}d}.xyz"
        save_xyz(cloud, directory / name)
        entries.append({"file": name, "label": label})
    manifest = {
        "schema": "pcbd-dataset-v1",
        "k": dataset.k,
        "split": dataset.split,
        "n_points": dataset.n_points,
        "entries": entries,
    }
    with open(directory / DATASET_MANIFEST, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    try:
        with open(directory / DATASET_MANIFEST, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read dataset manifest: {exc}")
    if manifest.get("schema") != "pcbd-dataset-v1":
        raise ParseError(f"unknown dataset schema {manifest.get('schema')!r}")
    clouds = []
    labels = []
    for entry in manifest["entries"]:
        clouds.append(load_xyz(directory / entry["file"]))
        labels.append(int(entry["label"]))
    return LabeledDataset(
        clouds, np.array(labels), k=int(manifest["k"]), split=manifest["split"]
    )
