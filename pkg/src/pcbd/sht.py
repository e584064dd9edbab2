"""Spherical-harmonic trigger smoothing and the low-pass primitive.

A cloud is converted to a sparse radial field on an equiangular grid: each
point occupies one (theta, phi) cell and stores its signed offset r - 1
from the unit sphere.  Harmonic analysis of that field supports two modes:

* "fit" (default): ridge-regularized least squares on the occupied cells
  only.  For max order L with (L+1)^2 >= occupied cells this interpolates
  the field, so surface reconstruction and the homotopy have near-zero
  error at the cells that matter.
* "quadrature": the plain masked inner product against the conjugated
  basis with sin(theta) quadrature weights.  Exact for dense smooth
  fields; heavily attenuated for sparse masks, kept for comparison.

Synthesis truncates the expansion at the max order.  The homotopy blends
two spectra linearly and mixes the two location masks by uniform
subsampling; its endpoints return the input clouds verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .cloud import PointCloud, resample_to_n
from .errors import OrderTooHigh, PointAtOrigin, SizeLimit
from .rng import SeededRng

FIT_MAX_CELLS = 4096
DEFAULT_RIDGE = 1e-8


@dataclass(frozen=True)
class GridSpec:
    """Equiangular grid: rows over [0, pi], columns over [0, 2pi)."""

    n_theta: int = 181
    n_phi: int = 360

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")

    @property
    def d_theta(self) -> float:
        return np.pi / (self.n_theta - 1)

    @property
    def d_phi(self) -> float:
        return 2.0 * np.pi / self.n_phi

    def thetas(self) -> np.ndarray:
        return np.linspace(0.0, np.pi, self.n_theta)

    def phis(self) -> np.ndarray:
        return np.arange(self.n_phi) * self.d_phi

    def cell_of(self, thetas: np.ndarray, phis: np.ndarray):
        """Nearest grid cell for each (theta, phi) pair."""
        ti = np.clip(np.rint(thetas / self.d_theta).astype(int), 0, self.n_theta - 1)
        pj = np.rint(phis / self.d_phi).astype(int) % self.n_phi
        return ti, pj

    def directions(self, ti: np.ndarray, pj: np.ndarray) -> np.ndarray:
        th = ti * self.d_theta
        ph = pj * self.d_phi
        st = np.sin(th)
        return np.c_[st * np.cos(ph), st * np.sin(ph), np.cos(th)]


@dataclass
class SphericalField:
    """Masked radial offsets on a grid; values are zero off the mask."""

    values: np.ndarray
    mask: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        shape = (self.grid.n_theta, self.grid.n_phi)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != shape or self.mask.shape != shape:
            raise ValueError(f"field arrays must have shape {shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("field contains non-finite values")
        if np.any(self.values[~self.mask] != 0.0):
            raise ValueError("field must be zero off the mask")

    @property
    def occupied(self) -> int:
        return int(self.mask.sum())


@dataclass
class HarmonicSpectrum:
    """Coefficients c_l^m for 0 <= l <= n_max, |m| <= l.

    Stored densely as (n_max+1, 2*n_max+1) complex with column offset
    n_max, i.e. coeffs[l, n_max + m].
    """

    n_max: int
    coeffs: np.ndarray

    def __post_init__(self):
        expect = (self.n_max + 1, 2 * self.n_max + 1)
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != expect:
            raise ValueError(f"coefficient array must have shape {expect}")

    @classmethod
    def zeros(cls, n_max: int) -> "HarmonicSpectrum":
        return cls(n_max, np.zeros((n_max + 1, 2 * n_max + 1), dtype=np.complex128))

    def get(self, l: int, m: int) -> complex:
        if abs(m) > l or l > self.n_max:
            raise IndexError(f"(l={l}, m={m}) outside the spectrum")
        return complex(self.coeffs[l, self.n_max + m])

    def count(self) -> int:
        return (self.n_max + 1) ** 2

    def is_conjugate_symmetric(self, tol: float = 1e-12) -> bool:
        L = self.n_max
        for m in range(1, L + 1):
            lhs = self.coeffs[:, L - m]
            rhs = ((-1) ** m) * np.conj(self.coeffs[:, L + m])
            if np.abs(lhs - rhs).max() > tol:
                return False
        return np.abs(self.coeffs[:, L].imag).max() <= tol


@dataclass(frozen=True)
class SmoothingConfig:
    """Parameters of the smoothing pipeline."""

    n_max: int = 100
    grid: GridSpec = GridSpec()
    seed: int = 0
    mode: str = "fit"  # "fit" or "quadrature"
    collision: str = "nearest_sphere"  # or "nearest_origin"
    ridge: float = DEFAULT_RIDGE
    spline_scale: float = 0.5

    def __post_init__(self):
        if self.mode not in ("fit", "quadrature"):
            raise ValueError(f"unknown analysis mode {self.mode!r}")
        if self.collision not in ("nearest_sphere", "nearest_origin"):
            raise ValueError(f"unknown collision rule {self.collision!r}")
        _check_order(self.grid, self.n_max)


def _check_order(grid: GridSpec, n_max: int):
    if grid.n_theta < n_max + 1:
        raise OrderTooHigh(
            f"grid has {grid.n_theta} latitude rows; order {n_max} needs "
            f">= {n_max + 1}"
        )
    if grid.n_phi < 2 * n_max + 1:
        raise OrderTooHigh(
            f"grid has {grid.n_phi} longitude columns; order {n_max} needs "
            f">= {2 * n_max + 1}"
        )


# ---------------------------------------------------------------------------
# quadrature weights
# ---------------------------------------------------------------------------

_THETA_WEIGHT_CACHE: dict[tuple[int, str], np.ndarray] = {}


def theta_weights(grid: GridSpec, scheme: str = "fourier") -> np.ndarray:
    """Latitude quadrature weights for the analysis inner product.

    "trapezoid" is the plain per-cell sin(theta)*dtheta.  "fourier"
    (default) solves the cosine-moment system sum_t w_t cos(k theta_t) =
    int_0^pi cos(k theta) sin(theta) dtheta for k < n_theta, so the rule
    integrates every integrand band-limited below the grid Nyquist
    exactly; the weights agree with sin(theta)*dtheta to O(dtheta^2) but
    remove the endpoint error that otherwise leaks into high orders.
    """
    key = (grid.n_theta, scheme)
    cached = _THETA_WEIGHT_CACHE.get(key)
    if cached is not None:
        return cached
    th = grid.thetas()
    if scheme == "trapezoid":
        w = np.sin(th) * grid.d_theta
    elif scheme == "fourier":
        t = grid.n_theta
        k = np.arange(t)
        moments = np.zeros(t)
        even = k % 2 == 0
        moments[even] = 2.0 / (1.0 - k[even] ** 2)
        vander = np.cos(np.outer(k, th))
        w = np.linalg.solve(vander, moments)
    else:
        raise ValueError(f"unknown quadrature scheme {scheme!r}")
    _THETA_WEIGHT_CACHE[key] = w
    return w


# ---------------------------------------------------------------------------
# basis evaluation
# ---------------------------------------------------------------------------

def normalized_assoc_legendre(n_max: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre block, shape (L+1, L+1, len(x)).

    Entry [l, m] equals sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(x) with the
    Condon-Shortley phase, computed by the stable three-term recurrence.
    Entries with m > l are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    L = n_max
    p = np.zeros((L + 1, L + 1, x.size))
    p[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L + 1):
        p[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * p[m - 1, m - 1]
    for m in range(L):
        p[m + 1, m] = np.sqrt(2 * m + 3.0) * x * p[m, m]
    for m in range(L + 1):
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    return p


def legendre_sum_kernel(
    n_max: int, cos_gamma: np.ndarray, order_gains: np.ndarray | None = None
) -> np.ndarray:
    """Kernel sum_{l<=L} g_l (2l+1)/(4pi) P_l(cos gamma); g_l default 1."""
    c = np.clip(np.asarray(cos_gamma, dtype=np.float64), -1.0, 1.0)
    g = np.ones(n_max + 1) if order_gains is None else order_gains
    p_prev = np.ones_like(c)
    out = g[0] * p_prev / (4.0 * np.pi)
    if n_max == 0:
        return out
    p_cur = c.copy()
    out = out + g[1] * 3.0 * p_cur / (4.0 * np.pi)
    for l in range(2, n_max + 1):
        p_next = ((2 * l - 1) * c * p_cur - (l - 1) * p_prev) / l
        out += g[l] * (2 * l + 1) * p_next / (4.0 * np.pi)
        p_prev, p_cur = p_cur, p_next
    return out


def spline_order_gains(
    n_max: int, n_nodes: int, scale: float = 1.0
) -> np.ndarray:
    """Per-order gains of the smoothing-spline fit.

    Orders up to roughly scale*sqrt(n_nodes) pass unchanged; higher orders
    are damped quartically, so the fitted surface is the smoothest
    expansion through the samples instead of a kernel spike train.  The
    reference order never exceeds n_max, hence small-order fits are
    unaffected.
    """
    l_ref = min(
        n_max, max(4, int(np.ceil(scale * np.sqrt(max(n_nodes, 1)))))
    )
    l = np.arange(n_max + 1, dtype=np.float64)
    ratio = (l * (l + 1.0)) / (l_ref * (l_ref + 1.0))
    return 1.0 / (1.0 + ratio**2)


# ---------------------------------------------------------------------------
# field conversion
# ---------------------------------------------------------------------------

def to_spherical_field(
    cloud: PointCloud, grid: GridSpec = GridSpec(), collision: str = "nearest_sphere"
) -> SphericalField:
    """Project each point to its angular cell; cell value is r - 1.

    Cell collisions keep one point: the one closest to the unit sphere
    (smallest |r-1|) by default, or the smallest radius with
    collision="nearest_origin".
    """
    pts = cloud.points
    r = np.linalg.norm(pts, axis=1)
    if np.any(r < 1e-12):
        raise PointAtOrigin("a point sits at the origin")
    theta = np.arccos(np.clip(pts[:, 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
    ti, pj = grid.cell_of(theta, phi)
    if collision == "nearest_sphere":
        priority = np.abs(r - 1.0)
    elif collision == "nearest_origin":
        priority = r
    else:
        raise ValueError(f"unknown collision rule {collision!r}")
    # stable sort: cell id, then priority, then the original index
    cell_id = ti * grid.n_phi + pj
    order = np.lexsort((np.arange(len(r)), priority, cell_id))
    cid_sorted = cell_id[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = cid_sorted[1:] != cid_sorted[:-1]
    keep = order[first]
    values = np.zeros((grid.n_theta, grid.n_phi))
    mask = np.zeros((grid.n_theta, grid.n_phi), dtype=bool)
    values[ti[keep], pj[keep]] = r[keep] - 1.0
    mask[ti[keep], pj[keep]] = True
    return SphericalField(values, mask, grid)


def field_to_cloud(field: SphericalField) -> PointCloud:
    """Cartesian recovery p = direction(theta, phi) * (1 + f) per true cell."""
    ti, pj = np.nonzero(field.mask)
    if len(ti) == 0:
        raise ValueError("field has an empty mask")
    radii = 1.0 + field.values[ti, pj]
    return PointCloud(field.grid.directions(ti, pj) * radii[:, None])


# ---------------------------------------------------------------------------
# analysis / synthesis
# ---------------------------------------------------------------------------

def dsht(
    field: SphericalField, n_max: int = 100, weights: str = "fourier"
) -> HarmonicSpectrum:
    """Masked quadrature transform against the conjugated basis.

    Per-cell weight is the latitude quadrature weight (see theta_weights)
    times dphi.  The field is real, so coefficients are computed for
    m >= 0 and the negative orders are filled by conjugate symmetry,
    which then holds exactly.
    """
    grid = field.grid
    _check_order(grid, n_max)
    f = np.where(field.mask, field.values, 0.0)
    # longitude sums G[t, m] = sum_j f[t, j] exp(-i m phi_j) via FFT
    g = np.fft.fft(f, axis=1)[:, : n_max + 1]
    th = grid.thetas()
    w = theta_weights(grid, weights) * grid.d_phi
    p = normalized_assoc_legendre(n_max, np.cos(th))
    coeffs = np.zeros((n_max + 1, 2 * n_max + 1), dtype=np.complex128)
    wg = w[:, None] * g
    for m in range(n_max + 1):
        # c[l, m] = sum_t p[l, m, t] * w_t * G[t, m]
        coeffs[m:, n_max + m] = p[m:, m] @ wg[:, m]
    for m in range(1, n_max + 1):
        coeffs[:, n_max - m] = ((-1) ** m) * np.conj(coeffs[:, n_max + m])
    return HarmonicSpectrum(n_max, coeffs)


def fit_spectrum(
    field: SphericalField,
    n_max: int = 100,
    ridge: float = DEFAULT_RIDGE,
    spline_scale: float = 1.0,
) -> HarmonicSpectrum:
    """Smoothing-spline analysis on the occupied cells.

    Minimizes the data misfit at the occupied cells plus a roughness
    penalty that grows quartically with the order (see spline_order_gains)
    through the (real) kernel Gram matrix of the occupied directions, so
    the cost is cubic in the cell count, not in the coefficient count.
    With (n_max+1)^2 >= occupied cells the fit interpolates the field
    values while extending smoothly between them.
    """
    grid = field.grid
    _check_order(grid, n_max)
    ti, pj = np.nonzero(field.mask)
    n_occ = len(ti)
    if n_occ == 0:
        return HarmonicSpectrum.zeros(n_max)
    if n_occ > FIT_MAX_CELLS:
        raise SizeLimit(
            f"fit mode supports up to {FIT_MAX_CELLS} occupied cells, got {n_occ}"
        )
    f = field.values[ti, pj]
    dirs = grid.directions(ti, pj)
    gains = spline_order_gains(n_max, n_occ, spline_scale)
    gram = legendre_sum_kernel(n_max, dirs @ dirs.T, gains)
    lam = ridge * gram[np.diag_indices(n_occ)].mean()
    alpha = np.linalg.solve(gram + lam * np.eye(n_occ), f)
    # c_{l,m} = g_l * sum_p alpha_p conj(Y_{l,m}(p))
    th = ti * grid.d_theta
    ph = pj * grid.d_phi
    p = normalized_assoc_legendre(n_max, np.cos(th))
    coeffs = np.zeros((n_max + 1, 2 * n_max + 1), dtype=np.complex128)
    for m in range(n_max + 1):
        weights = alpha * np.exp(-1j * m * ph)
        coeffs[m:, n_max + m] = gains[m:] * (p[m:, m] @ weights)
    for m in range(1, n_max + 1):
        coeffs[:, n_max - m] = ((-1) ** m) * np.conj(coeffs[:, n_max + m])
    return HarmonicSpectrum(n_max, coeffs)


def analyze(
    field: SphericalField,
    n_max: int = 100,
    mode: str = "fit",
    ridge: float = DEFAULT_RIDGE,
    spline_scale: float = 1.0,
) -> HarmonicSpectrum:
    if mode == "fit":
        return fit_spectrum(field, n_max, ridge, spline_scale)
    if mode == "quadrature":
        return dsht(field, n_max)
    raise ValueError(f"unknown analysis mode {mode!r}")


def isht(spectrum: HarmonicSpectrum, grid: GridSpec = GridSpec()) -> SphericalField:
    """Truncated synthesis on the full grid (mask all true).

    Asserts that the imaginary residue of a conjugate-symmetric spectrum
    stays below 1e-9.
    """
    L = spectrum.n_max
    th = grid.thetas()
    p = normalized_assoc_legendre(L, np.cos(th))
    h = np.zeros((grid.n_theta, grid.n_phi), dtype=np.complex128)
    for m in range(-L, L + 1):
        col = spectrum.coeffs[:, L + m]
        vals = p[abs(m) :, abs(m)].T @ col[abs(m) :]
        if m < 0:
            vals = vals * ((-1) ** m)  # Y_l^{-m} carries (-1)^m conj(P part)
        h[:, m % grid.n_phi] += vals
    surface = np.fft.ifft(h, axis=1) * grid.n_phi
    if spectrum.is_conjugate_symmetric(tol=1e-9):
        resid = np.abs(surface.imag).max()
        if resid > 1e-9:
            raise AssertionError(f"imaginary residue {resid:.3e} exceeds 1e-9")
    return SphericalField(
        surface.real, np.ones((grid.n_theta, grid.n_phi), dtype=bool), grid
    )


def synth_at_cells(
    spectrum: HarmonicSpectrum, grid: GridSpec, ti: np.ndarray, pj: np.ndarray
) -> np.ndarray:
    """Evaluate the truncated expansion at specific cells (real part).

    Requires a conjugate-symmetric spectrum (real underlying field), which
    lets the m < 0 half fold into twice the real part of the m > 0 half.
    """
    L = spectrum.n_max
    th = ti * grid.d_theta
    ph = pj * grid.d_phi
    p = normalized_assoc_legendre(L, np.cos(th))
    out = np.zeros(len(ti), dtype=np.complex128)
    for m in range(L + 1):
        col = spectrum.coeffs[m:, L + m]
        h = col @ p[m:, m]
        term = h * np.exp(1j * m * ph)
        out += term if m == 0 else 2.0 * term.real
    return out.real


def interpolate_spectra(
    a: HarmonicSpectrum, b: HarmonicSpectrum, t: float
) -> HarmonicSpectrum:
    """(1-t) a + t b, coefficient-wise."""
    if a.n_max != b.n_max:
        raise ValueError("spectra have different max orders")
    return HarmonicSpectrum(a.n_max, (1.0 - t) * a.coeffs + t * b.coeffs)


def spectrum_to_rows(spectrum: HarmonicSpectrum) -> list[tuple[int, int, float, float]]:
    """(l, m, re, im) rows for export, l-major then m ascending."""
    rows = []
    L = spectrum.n_max
    for l in range(L + 1):
        for m in range(-l, l + 1):
            c = spectrum.coeffs[l, L + m]
            rows.append((l, m, float(c.real), float(c.imag)))
    return rows


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def reproduce(cloud: PointCloud, config: SmoothingConfig = SmoothingConfig()) -> PointCloud:
    """Field -> spectrum -> surface -> original mask -> Cartesian recovery."""
    field = to_spherical_field(cloud, config.grid, config.collision)
    spec = analyze(field, config.n_max, config.mode, config.ridge,
                   config.spline_scale)
    ti, pj = np.nonzero(field.mask)
    vals = synth_at_cells(spec, config.grid, ti, pj)
    radii = 1.0 + vals
    return PointCloud(config.grid.directions(ti, pj) * radii[:, None])


def mix_masks(
    mask_x: np.ndarray, mask_g: np.ndarray, t: float, rng: SeededRng
) -> np.ndarray:
    """Union of a (1-t) subsample of mask_x and a t subsample of mask_g."""
    if mask_x.shape != mask_g.shape:
        raise ValueError("masks must share one grid spec")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return mask_x.copy()
    if t == 1.0:
        return mask_g.copy()
    gen = rng.generator()
    out = np.zeros_like(mask_x)
    for mask, frac in ((mask_x, 1.0 - t), (mask_g, t)):
        cells = np.flatnonzero(mask.ravel())
        take = int(round(frac * len(cells)))
        if take > 0:
            chosen = gen.choice(cells, size=take, replace=False)
            out.ravel()[chosen] = True
    return out


def homotopy(
    trigger: Callable[[PointCloud], PointCloud],
    cloud: PointCloud,
    t: float,
    config: SmoothingConfig = SmoothingConfig(),
) -> PointCloud:
    """Intermediate cloud between the input (t=0) and its triggered
    version (t=1); the endpoints are returned verbatim."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return cloud.copy()
    triggered = trigger(cloud)
    if t == 1.0:
        return triggered
    f_x = to_spherical_field(cloud, config.grid, config.collision)
    f_g = to_spherical_field(triggered, config.grid, config.collision)
    c_x = analyze(f_x, config.n_max, config.mode, config.ridge,
                  config.spline_scale)
    c_g = analyze(f_g, config.n_max, config.mode, config.ridge,
                  config.spline_scale)
    c_t = interpolate_spectra(c_x, c_g, t)
    base = SeededRng(config.seed)
    mask_t = mix_masks(f_x.mask, f_g.mask, t, base.derive(0))
    ti, pj = np.nonzero(mask_t)
    if len(ti) == 0:
        raise ValueError("mixed mask is empty")
    vals = synth_at_cells(c_t, config.grid, ti, pj)
    mixed = PointCloud(config.grid.directions(ti, pj) * (1.0 + vals)[:, None])
    return resample_to_n(mixed, cloud.n, base.derive(1))


def lowpass_filter(
    cloud: PointCloud, l_cut: int, config: SmoothingConfig = SmoothingConfig()
) -> PointCloud:
    """Zero all orders above l_cut, then recover on the original mask."""
    if l_cut > config.n_max:
        raise OrderTooHigh(f"l_cut={l_cut} exceeds max order {config.n_max}")
    if l_cut < 0:
        raise ValueError("l_cut must be >= 0")
    field = to_spherical_field(cloud, config.grid, config.collision)
    spec = analyze(field, config.n_max, config.mode, config.ridge,
                   config.spline_scale)
    trimmed = spec.coeffs.copy()
    trimmed[l_cut + 1 :, :] = 0.0
    spec_cut = HarmonicSpectrum(config.n_max, trimmed)
    ti, pj = np.nonzero(field.mask)
    vals = synth_at_cells(spec_cut, config.grid, ti, pj)
    return PointCloud(config.grid.directions(ti, pj) * (1.0 + vals)[:, None])
