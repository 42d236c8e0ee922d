"""Phase-binned marginal construction and filtered back-projection.

Free harmonic evolution rotates phase space, so sampling the position at
oscillator phase theta = omega t mod 2pi measures the rotated quadrature
z cos(theta) + (p / m omega) sin(theta). Histogramming samples by phase yields
the marginals mu(z; theta); the Wigner function follows from the inverse Radon
transform, implemented as ramp-filtered back-projection:

  1. FFT each marginal along z (zero-padded against wrap-around);
  2. multiply by the ramp |nu| apodized with a Hann window up to a cutoff;
  3. inverse FFT;
  4. back-project with linear interpolation onto a square (z, p/m omega) grid,
     each angle weighted by pi / n_angles.

The momentum axis is expressed in position-equivalent units p/(m omega_s) so
free evolution is literally a circular rotation of the grid. The zero-frequency
ramp coefficient is restored to its bin average (delta_nu / 4 instead of 0);
without it every filtered projection loses its constant mode and the total
integral of the reconstruction drifts. The output square is inscribed in the
marginal support (half-width z_max / sqrt(2)) so back-projection never reads
outside measured data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .dynamics import Trajectory
from .errors import TomographyError

_TWO_PI = 2.0 * math.pi

MIN_ANGLES = 8
MIN_PERIODS = 50
DEFAULT_MIN_OCCUPANCY = 100
DEFAULT_GRID_POINTS = 129  # odd, symmetric about zero
DEFAULT_SPAN_SIGMAS = 5.0
PAD_FACTOR = 4


@dataclass(frozen=True, eq=False)
class MarginalSet:
    """Normalized quadrature histograms indexed by oscillator phase bin."""

    angles_rad: np.ndarray  # sorted bin centers in [0, 2 pi)
    z_grid_m: np.ndarray  # uniform, odd length, symmetric about 0
    densities: np.ndarray  # (n_angles, n_z), rows integrate to 1 (trapezoid)
    counts_per_bin: np.ndarray  # (n_angles, n_z) raw occupancy for error bars
    omega_used_rad_s: float
    under_sampled: bool = False
    min_occupancy: int = DEFAULT_MIN_OCCUPANCY

    @property
    def occupancy(self) -> np.ndarray:
        return self.counts_per_bin.sum(axis=1)


def default_z_grid(samples: np.ndarray, n_points: int = DEFAULT_GRID_POINTS, span_sigmas: float = DEFAULT_SPAN_SIGMAS):
    """Symmetric odd grid spanning +-span_sigmas sample standard deviations."""
    if n_points % 2 == 0:
        raise TomographyError(f"z grid length must be odd to contain 0, got {n_points}")
    scale = float(np.std(samples))
    if scale <= 0:
        raise TomographyError("samples have zero spread; cannot build a position grid")
    return np.linspace(-span_sigmas * scale, span_sigmas * scale, n_points)


def bin_marginals(
    samples: Trajectory,
    omega_hat: float,
    n_angles: int,
    z_grid=None,
    *,
    min_occupancy: int = DEFAULT_MIN_OCCUPANCY,
) -> MarginalSet:
    """Assign each sample to the nearest phase bin and histogram on ``z_grid``.

    Phases are theta_i = omega_hat * t_i mod 2pi with bin centers at
    2 pi k / n_angles. Any empty angle bin is an error (the reconstruction
    would be ill-posed); bins below ``min_occupancy`` only flag the set as
    under-sampled. Samples outside the grid are dropped from the histograms.
    """
    if omega_hat <= 0:
        raise TomographyError(f"omega_hat must be positive, got {omega_hat!r}")
    if n_angles < MIN_ANGLES:
        raise TomographyError(f"need at least {MIN_ANGLES} angle bins, got {n_angles}")
    n_periods = samples.duration_s * omega_hat / _TWO_PI
    if n_periods < MIN_PERIODS:
        raise TomographyError(
            f"trajectory spans {n_periods:.1f} oscillation periods; need >= {MIN_PERIODS}"
        )
    if z_grid is None:
        z_grid = default_z_grid(samples.z_m)
    z_grid = np.asarray(z_grid, dtype=float)
    _check_uniform_grid(z_grid)

    phases = (omega_hat * samples.times_s) % _TWO_PI
    bin_width = _TWO_PI / n_angles
    idx = np.rint(phases / bin_width).astype(np.int64) % n_angles

    dz = z_grid[1] - z_grid[0]
    z_edges = np.concatenate([z_grid - 0.5 * dz, [z_grid[-1] + 0.5 * dz]])
    counts, _, _ = np.histogram2d(idx, samples.z_m, bins=[np.arange(n_angles + 1) - 0.5, z_edges])
    counts = counts.astype(np.int64)

    occupancy = counts.sum(axis=1)
    empty = np.flatnonzero(occupancy == 0)
    if empty.size:
        raise TomographyError(
            f"angle bin {empty[0]} (theta = {empty[0] * bin_width:.4f} rad) holds no samples"
        )
    raw = counts / (occupancy[:, None] * dz)
    norms = np.trapezoid(raw, z_grid, axis=1)
    densities = raw / norms[:, None]
    return MarginalSet(
        angles_rad=bin_width * np.arange(n_angles),
        z_grid_m=z_grid,
        densities=densities,
        counts_per_bin=counts,
        omega_used_rad_s=omega_hat,
        under_sampled=bool(np.any(occupancy < min_occupancy)),
        min_occupancy=min_occupancy,
    )


def marginal_set_from_densities(angles_rad, z_grid_m, densities, omega_used_rad_s=1.0) -> MarginalSet:
    """Wrap analytic densities (e.g. oracle marginals) as a MarginalSet."""
    angles = np.asarray(angles_rad, dtype=float)
    grid = np.asarray(z_grid_m, dtype=float)
    dens = np.asarray(densities, dtype=float)
    if dens.shape != (angles.size, grid.size):
        raise TomographyError("densities must have shape (n_angles, n_z)")
    return MarginalSet(
        angles_rad=angles,
        z_grid_m=grid,
        densities=dens,
        counts_per_bin=np.full(dens.shape, 10**9, dtype=np.int64),
        omega_used_rad_s=omega_used_rad_s,
    )


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """Reconstructed quasi-probability on a square phase-space grid.

    ``values[i, j]`` is W at (z_grid_m[i], p_grid[j]); the momentum axis is in
    position-equivalent units p/(m omega_s), meters.
    """

    z_grid_m: np.ndarray
    p_grid: np.ndarray
    values: np.ndarray
    dz: float
    dp: float


def _check_uniform_grid(grid: np.ndarray) -> None:
    if grid.ndim != 1 or grid.size < 3:
        raise TomographyError("position grid must be 1-D with at least 3 points")
    steps = np.diff(grid)
    if np.any(steps <= 0) or (steps.max() - steps.min()) > 1e-9 * steps.mean():
        raise TomographyError("position grid must be uniform and strictly increasing")


def _ramp_filter(n_fft: int, dz: float, cutoff_fraction: float) -> np.ndarray:
    """Hann-apodized ramp |nu| with the DC bin restored to its bin mean.

    The discrete DC coefficient should carry the average of |nu| over the first
    frequency bin, delta_nu / 4, not zero; this keeps each filtered projection's
    constant mode and pins the total integral of the reconstruction.
    """
    nu = np.fft.fftfreq(n_fft, d=dz)
    nyquist = 0.5 / dz
    cutoff = cutoff_fraction * nyquist
    ramp = np.abs(nu)
    ramp[0] = 0.25 / (n_fft * dz)
    window = np.where(np.abs(nu) <= cutoff, 0.5 * (1.0 + np.cos(math.pi * nu / cutoff)), 0.0)
    return ramp * window


def filtered_projections(marginals: MarginalSet, cutoff_fraction: float = 1.0) -> np.ndarray:
    """Ramp-filter every marginal along z (step 1-3 of the reconstruction)."""
    dens = marginals.densities
    n_z = dens.shape[1]
    dz = marginals.z_grid_m[1] - marginals.z_grid_m[0]
    n_fft = 1 << int(math.ceil(math.log2(PAD_FACTOR * n_z)))
    response = _ramp_filter(n_fft, dz, cutoff_fraction)
    padded = np.zeros((dens.shape[0], n_fft))
    padded[:, :n_z] = dens
    spectra = np.fft.fft(padded, axis=1) * response[None, :]
    return np.real(np.fft.ifft(spectra, axis=1))[:, :n_z]


def inverse_radon(
    marginals: MarginalSet,
    grid_size: int | None = None,
    *,
    cutoff_fraction: float = 1.0,
) -> WignerGrid:
    """Filtered back-projection of the marginals onto a square phase-space grid.

    Angle bins may cover [0, 2 pi); diametrically opposed bins carry mirrored
    copies of the same projection and are all used with weight pi / n_angles.
    ``cutoff_fraction`` scales the ramp-filter cutoff relative to the grid
    Nyquist frequency; lower it to suppress histogram noise. The output square
    is inscribed in the marginal support (half-width z_max / sqrt(2)).
    """
    if marginals.under_sampled:
        raise TomographyError(
            f"marginal set is under-sampled (some angle bin holds fewer than"
            f" {marginals.min_occupancy} samples)"
        )
    angles = np.asarray(marginals.angles_rad, dtype=float)
    if angles.size < MIN_ANGLES:
        raise TomographyError(f"need at least {MIN_ANGLES} usable angles, got {angles.size}")
    _check_uniform_grid(marginals.z_grid_m)
    if not 0.0 < cutoff_fraction <= 1.0:
        raise TomographyError("cutoff_fraction must be in (0, 1]")

    z_grid = marginals.z_grid_m
    if grid_size is None:
        grid_size = z_grid.size
    if grid_size < 8:
        raise TomographyError("output grid must have at least 8 points per axis")

    filtered = filtered_projections(marginals, cutoff_fraction)
    half_width = float(min(abs(z_grid[0]), z_grid[-1])) / math.sqrt(2.0)
    axis = np.linspace(-half_width, half_width, grid_size)
    zz, pp = np.meshgrid(axis, axis, indexing="ij")
    values = np.zeros_like(zz)
    for j, theta in enumerate(angles):
        s = zz * math.cos(theta) + pp * math.sin(theta)
        values += np.interp(s, z_grid, filtered[j], left=0.0, right=0.0)
    values *= math.pi / angles.size
    step = axis[1] - axis[0]
    return WignerGrid(z_grid_m=axis, p_grid=axis.copy(), values=values, dz=step, dp=step)


def project_marginal(w: WignerGrid, theta: float) -> np.ndarray:
    """Line-integral projection of the grid onto the theta quadrature.

    Rotates the grid by theta and integrates along the conjugate axis with the
    trapezoid rule and bilinear interpolation (zero outside the grid). Returns
    the density over ``w.z_grid_m``.
    """
    if not 0.0 <= theta < _TWO_PI:
        raise TomographyError(f"theta must lie in [0, 2 pi), got {theta!r}")
    interp = RegularGridInterpolator(
        (w.z_grid_m, w.p_grid), w.values, method="linear", bounds_error=False, fill_value=0.0
    )
    s_axis = w.z_grid_m
    u_axis = w.p_grid
    ss, uu = np.meshgrid(s_axis, u_axis, indexing="ij")
    x = ss * math.cos(theta) - uu * math.sin(theta)
    y = ss * math.sin(theta) + uu * math.cos(theta)
    sheet = interp(np.stack([x.ravel(), y.ravel()], axis=1)).reshape(ss.shape)
    return np.trapezoid(sheet, u_axis, axis=1)


@dataclass(frozen=True)
class GaussianMomentFit:
    mean_z: float
    mean_p: float
    cov_zz: float
    cov_pp: float
    cov_zp: float
    r_squared: float


@dataclass(frozen=True)
class WignerReport:
    total_integral: float
    min_value: float
    negativity_volume: float  # integral of max(0, -W)
    abs_volume: float  # integral of |W|
    gaussian_fit: GaussianMomentFit

    def to_dict(self) -> dict:
        return {
            "total_integral": self.total_integral,
            "min_value": self.min_value,
            "negativity_volume": self.negativity_volume,
            "abs_volume": self.abs_volume,
            "gaussian_fit": {
                "mean_z": self.gaussian_fit.mean_z,
                "mean_p": self.gaussian_fit.mean_p,
                "cov_zz": self.gaussian_fit.cov_zz,
                "cov_pp": self.gaussian_fit.cov_pp,
                "cov_zp": self.gaussian_fit.cov_zp,
                "r_squared": self.gaussian_fit.r_squared,
            },
        }


def _trapz2d(values: np.ndarray, z_axis: np.ndarray, p_axis: np.ndarray) -> float:
    return float(np.trapezoid(np.trapezoid(values, p_axis, axis=1), z_axis))


def analyze(w: WignerGrid) -> WignerReport:
    """Normalization, negativity and moment-matched Gaussian fit of a grid.

    The Gaussian surface is built from the grid's first and second moments and
    r^2 measures how much of the grid's variance that surface explains.
    """
    values = w.values
    if not np.all(np.isfinite(values)):
        raise TomographyError("Wigner grid contains non-finite values")
    z_axis, p_axis = w.z_grid_m, w.p_grid
    total = _trapz2d(values, z_axis, p_axis)
    if total <= 0:
        raise TomographyError("Wigner grid has non-positive total integral; cannot fit moments")
    zz, pp = np.meshgrid(z_axis, p_axis, indexing="ij")
    mean_z = _trapz2d(values * zz, z_axis, p_axis) / total
    mean_p = _trapz2d(values * pp, z_axis, p_axis) / total
    dz_c, dp_c = zz - mean_z, pp - mean_p
    cov_zz = _trapz2d(values * dz_c**2, z_axis, p_axis) / total
    cov_pp = _trapz2d(values * dp_c**2, z_axis, p_axis) / total
    cov_zp = _trapz2d(values * dz_c * dp_c, z_axis, p_axis) / total
    det = cov_zz * cov_pp - cov_zp**2
    if det <= 0:
        raise TomographyError("moment covariance is not positive definite")
    inv_zz, inv_pp, inv_zp = cov_pp / det, cov_zz / det, -cov_zp / det
    gauss = (
        total
        / (_TWO_PI * math.sqrt(det))
        * np.exp(-0.5 * (inv_zz * dz_c**2 + 2.0 * inv_zp * dz_c * dp_c + inv_pp * dp_c**2))
    )
    ss_res = float(np.sum((values - gauss) ** 2))
    ss_tot = float(np.sum((values - values.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return WignerReport(
        total_integral=total,
        min_value=float(values.min()),
        negativity_volume=_trapz2d(np.maximum(0.0, -values), z_axis, p_axis),
        abs_volume=_trapz2d(np.abs(values), z_axis, p_axis),
        gaussian_fit=GaussianMomentFit(
            mean_z=mean_z,
            mean_p=mean_p,
            cov_zz=cov_zz,
            cov_pp=cov_pp,
            cov_zp=cov_zp,
            r_squared=r_squared,
        ),
    )


def save_marginals(marginals: MarginalSet, path: str | Path) -> None:
    """CSV matrix: rows are z grid points, one column per angle bin."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_m"] + [f"theta_{theta:.9g}" for theta in marginals.angles_rad])
        for i, z in enumerate(marginals.z_grid_m):
            writer.writerow([f"{z:.17g}"] + [f"{v:.17g}" for v in marginals.densities[:, i]])


def save_wigner(w: WignerGrid, path: str | Path) -> None:
    """CSV matrix with axis header rows: momentum axis first, then z rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_m\\p_over_m_omega_m"] + [f"{p:.17g}" for p in w.p_grid])
        for i, z in enumerate(w.z_grid_m):
            writer.writerow([f"{z:.17g}"] + [f"{v:.17g}" for v in w.values[i]])


def save_report(report: WignerReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
