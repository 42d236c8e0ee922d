"""Axial motion of the trapped particle: stochastic thermal trajectories,
deterministic coherent oscillations, and analytic marginal oracles.

The thermal simulator integrates the underdamped Langevin equation

    m z'' = -m omega_s^2 z - m xi z' + F_th(t)

with the thermal force fixed by fluctuation-dissipation so the stationary
position variance is k_B T / (m omega_s^2). The (z, v) pair is propagated with
the exact Gaussian transition of the linear system (matrix exponential plus
exact conditional covariance), so results carry no step-size bias.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter, lfiltic

from .constants import KB, M_GAS_AIR
from .errors import ConfigError, SimulationError
from .physics import DerivedQuantities, ExperimentConfig

_TWO_PI = 2.0 * math.pi

# burn-in before a stationary thermal record: 10 damping times, capped
BURN_IN_DAMPING_TIMES = 10.0
BURN_IN_MAX_SAMPLES = 1_000_000

# sample_rate must exceed this multiple of omega_s/2pi; the exact propagator is
# unbiased at any step, the guard only keeps the oscillation well resolved for
# windowing and phase binning downstream
NYQUIST_GUARD_FACTOR = 10.0
MIN_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled axial position record.

    ``z_m[i]`` is the position at time ``t0_s + i / sample_rate_Hz``. ``seed``
    records the RNG seed for provenance (``None`` for deterministic signals).
    """

    sample_rate_Hz: float
    z_m: np.ndarray
    t0_s: float = 0.0
    seed: int | None = None
    state_kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_rate_Hz <= 0:
            raise SimulationError(f"sample_rate_Hz must be positive, got {self.sample_rate_Hz!r}")
        if len(self.z_m) < 2:
            raise SimulationError("a trajectory needs at least 2 samples")

    @property
    def times_s(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.z_m)) / self.sample_rate_Hz

    @property
    def duration_s(self) -> float:
        return len(self.z_m) / self.sample_rate_Hz


def gas_damping_rate(config: ExperimentConfig, mass_kg: float) -> float:
    """Kinetic-theory gas damping rate xi [1/s] at the configured pressure.

    xi = (15.8 / pi) r^2 p / (m v_th) with v_th = sqrt(k_B T / m_gas) the gas
    thermal velocity (air). Ballpark-accurate in the free-molecular regime and
    far below omega_s at mbar-and-below pressures, which is all the pipeline
    relies on; spectral fits estimate the actual linewidth rather than assume it.
    """
    pressure_pa = config.pressure_mbar * 100.0
    v_thermal = math.sqrt(KB * config.temperature_K / M_GAS_AIR)
    return (15.8 / math.pi) * config.particle_radius_m**2 * pressure_pa / (mass_kg * v_thermal)


def _propagator(omega: float, xi: float, dt: float) -> np.ndarray:
    """exp(A dt) for A = [[0, 1], [-omega^2, -xi]], underdamped (xi < 2 omega)."""
    wd = math.sqrt(omega**2 - 0.25 * xi**2)
    decay = math.exp(-0.5 * xi * dt)
    c = math.cos(wd * dt)
    s = math.sin(wd * dt)
    half_ratio = 0.5 * xi / wd
    return decay * np.array(
        [
            [c + half_ratio * s, s / wd],
            [-(omega**2) / wd * s, c - half_ratio * s],
        ]
    )


def _transition_noise_chol(m: np.ndarray, var_z: float, var_v: float) -> np.ndarray:
    """Cholesky factor of the exact one-step noise covariance.

    The stationary covariance S = diag(var_z, var_v) satisfies the Lyapunov
    equation of the system, so the conditional covariance after one step is
    S - M S M^T; tiny negative roundoff on the diagonal is clipped.
    """
    s_inf = np.diag([var_z, var_v])
    cov = s_inf - m @ s_inf @ m.T
    l11 = math.sqrt(max(cov[0, 0], 0.0))
    l21 = cov[1, 0] / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(cov[1, 1] - l21**2, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])


def simulate_thermal(
    config: ExperimentConfig,
    dq: DerivedQuantities,
    duration_s: float,
    sample_rate_Hz: float,
    seed: int,
    *,
    temperature_K: float | None = None,
    damping_rate_s: float | None = None,
    initial_state: tuple[float, float] | None = None,
) -> Trajectory:
    """Simulate thermal axial motion; deterministic for a given seed.

    ``temperature_K`` and ``damping_rate_s`` override the values implied by the
    config (useful for effective-temperature runs and for the noise-free
    ``T = 0`` limit; zero is allowed for both overrides). When
    ``initial_state = (z0, v0)`` is given the trajectory starts there with no
    burn-in; otherwise the start is drawn from the stationary ensemble and a
    burn-in of 10 damping times (capped at 1e6 samples) is discarded, so the
    returned record is stationary by construction.
    """
    omega = dq.omega_s_rad_s
    mass = dq.mass_kg
    temp = config.temperature_K if temperature_K is None else temperature_K
    xi = gas_damping_rate(config, mass) if damping_rate_s is None else damping_rate_s
    if temp < 0 or xi < 0:
        raise SimulationError("temperature and damping overrides must be non-negative")
    if xi >= 2.0 * omega:
        raise SimulationError(
            f"damping rate {xi:.3e} 1/s is not underdamped (needs xi < 2 omega_s = {2 * omega:.3e})"
        )
    min_rate = NYQUIST_GUARD_FACTOR * omega / _TWO_PI
    if sample_rate_Hz <= min_rate:
        raise SimulationError(
            f"sample_rate_Hz = {sample_rate_Hz:.6g} does not resolve the oscillation;"
            f" required minimum is {min_rate:.6g} Hz"
            f" ({NYQUIST_GUARD_FACTOR:g} x omega_s / 2 pi)"
        )
    n_samples = int(round(duration_s * sample_rate_Hz))
    if n_samples < MIN_SAMPLES:
        raise SimulationError(f"duration x sample_rate = {n_samples} samples, need at least {MIN_SAMPLES}")

    dt = 1.0 / sample_rate_Hz
    var_z = KB * temp / (mass * omega**2)
    var_v = KB * temp / mass
    m = _propagator(omega, xi, dt)

    rng = np.random.default_rng(seed)
    if initial_state is not None:
        x0 = np.asarray(initial_state, dtype=float)
        n_burn = 0
    else:
        if temp > 0 and xi == 0.0:
            raise SimulationError("a thermal state needs damping: xi = 0 with T > 0 has no stationary ensemble")
        x0 = np.array([math.sqrt(var_z), math.sqrt(var_v)]) * rng.standard_normal(2)
        n_burn = min(int(math.ceil(BURN_IN_DAMPING_TIMES / xi * sample_rate_Hz)), BURN_IN_MAX_SAMPLES) if xi > 0 else 0

    n_total = n_samples + n_burn
    z = _propagate_position(m, var_z, var_v, temp, x0, n_total, rng)
    return Trajectory(
        sample_rate_Hz=sample_rate_Hz,
        z_m=z[n_burn:],
        t0_s=0.0,
        seed=seed,
        state_kind="thermal",
        meta={
            "temperature_K": temp,
            "damping_rate_s": xi,
            "omega_s_rad_s": omega,
            "burn_in_samples": n_burn,
        },
    )


def _propagate_position(m, var_z, var_v, temp, x0, n_total, rng) -> np.ndarray:
    """Run the exact linear recursion X_n = M X_{n-1} + eta_n, returning z only.

    The vector AR(1) is reduced to a scalar AR(2) via Cayley-Hamilton,
    z_n = tr(M) z_{n-1} - det(M) z_{n-2} + eps_n with
    eps_n = eta_n,z - M22 eta_{n-1},z + M12 eta_{n-1},v,
    and driven through ``scipy.signal.lfilter`` so long records stay cheap.
    """
    tr_m = m[0, 0] + m[1, 1]
    det_m = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if temp > 0:
        chol = _transition_noise_chol(m, var_z, var_v)
        eta = chol @ rng.standard_normal((2, n_total - 1))
    else:
        eta = np.zeros((2, max(n_total - 1, 1)))
    z = np.empty(n_total)
    z[0] = x0[0]
    x1 = m @ x0 + eta[:, 0]
    z[1] = x1[0]
    if n_total > 2:
        eps = eta[0, 1:] - m[1, 1] * eta[0, :-1] + m[0, 1] * eta[1, :-1]
        a_coeffs = [1.0, -tr_m, det_m]
        zi = lfiltic([1.0], a_coeffs, y=[z[1], z[0]])
        z[2:], _ = lfilter([1.0], a_coeffs, eps, zi=zi)
    return z


def simulate_coherent(
    dq: DerivedQuantities,
    amplitude_m: float,
    phase_rad: float,
    duration_s: float,
    sample_rate_Hz: float,
) -> Trajectory:
    """Noise-free test signal z(t) = amplitude cos(omega_s t + phase)."""
    if amplitude_m < 0:
        raise SimulationError(f"amplitude must be non-negative, got {amplitude_m!r}")
    if sample_rate_Hz <= 0:
        raise SimulationError("sample_rate_Hz must be positive")
    n_samples = int(round(duration_s * sample_rate_Hz))
    if n_samples < 2:
        raise SimulationError("duration too short for a trajectory")
    t = np.arange(n_samples) / sample_rate_Hz
    z = amplitude_m * np.cos(dq.omega_s_rad_s * t + phase_rad)
    return Trajectory(
        sample_rate_Hz=sample_rate_Hz,
        z_m=z,
        t0_s=0.0,
        seed=None,
        state_kind="coherent",
        meta={"amplitude_m": amplitude_m, "phase_rad": phase_rad, "omega_s_rad_s": dq.omega_s_rad_s},
    )


@dataclass(frozen=True, eq=False)
class OracleMarginals:
    """Analytic per-angle quadrature densities for reconstruction validation."""

    state_kind: str
    angles_rad: np.ndarray
    z_grid_m: np.ndarray
    densities: np.ndarray  # shape (n_angles, n_z), each row integrates to 1


def oracle_marginals(
    state_kind: str,
    angles_rad,
    z_grid_m,
    *,
    sigma_m: float | None = None,
    amplitude_m: float | None = None,
    phase_rad: float = 0.0,
    z_zpf_m: float | None = None,
) -> OracleMarginals:
    """Closed-form marginals mu(z; theta) for three reference states.

    thermal   angle-independent Gaussian, variance ``sigma_m**2``
              (pass sigma_m = sqrt(k_B T / m omega_s^2));
    coherent  Gaussian of ground-state width ``z_zpf_m`` centered on the
              ridge amplitude*cos(theta + phase);
    fock1     angle-independent first-excited-state density
              (2/sqrt(pi)) u^2 exp(-u^2) / s with u = z/s, s = sqrt(2) z_zpf.

    Each row is renormalized to unit trapezoid integral on the given grid, so
    grid truncation cannot break normalization.
    """
    angles = np.asarray(angles_rad, dtype=float)
    grid = np.asarray(z_grid_m, dtype=float)
    if angles.ndim != 1 or angles.size == 0:
        raise ConfigError("angles_rad must be a non-empty 1-D sequence")
    if np.any(angles < 0) or np.any(angles >= _TWO_PI):
        raise ConfigError("angles must lie in [0, 2 pi)")
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("z_grid_m must be strictly increasing")

    if state_kind == "thermal":
        if sigma_m is None or sigma_m <= 0:
            raise ConfigError("thermal marginals need sigma_m > 0")
        row = np.exp(-(grid**2) / (2.0 * sigma_m**2)) / (math.sqrt(_TWO_PI) * sigma_m)
        dens = np.tile(row, (angles.size, 1))
    elif state_kind == "coherent":
        if amplitude_m is None or amplitude_m < 0:
            raise ConfigError("coherent marginals need amplitude_m >= 0")
        if z_zpf_m is None or z_zpf_m <= 0:
            raise ConfigError("coherent marginals need z_zpf_m > 0")
        centers = amplitude_m * np.cos(angles + phase_rad)
        dens = np.exp(-((grid[None, :] - centers[:, None]) ** 2) / (2.0 * z_zpf_m**2)) / (
            math.sqrt(_TWO_PI) * z_zpf_m
        )
    elif state_kind == "fock1":
        if z_zpf_m is None or z_zpf_m <= 0:
            raise ConfigError("fock1 marginals need z_zpf_m > 0")
        s = math.sqrt(2.0) * z_zpf_m
        u = grid / s
        row = (2.0 / math.sqrt(math.pi)) * u**2 * np.exp(-(u**2)) / s
        dens = np.tile(row, (angles.size, 1))
    else:
        raise ConfigError(f"unknown state_kind {state_kind!r} (expected thermal | coherent | fock1)")

    norms = np.trapezoid(dens, grid, axis=1)
    if np.any(norms <= 0):
        raise ConfigError("z_grid_m does not cover the state; zero density mass on the grid")
    dens = dens / norms[:, None]
    return OracleMarginals(state_kind=state_kind, angles_rad=angles, z_grid_m=grid, densities=dens)


def save_trajectory(traj: Trajectory, path: str | Path) -> Path:
    """Write ``t_s,z_m`` CSV at full double precision plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "z_m"])
        for t, z in zip(traj.times_s, traj.z_m):
            writer.writerow([f"{t:.17g}", f"{z:.17g}"])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {
                "sample_rate_Hz": traj.sample_rate_Hz,
                "t0_s": traj.t0_s,
                "seed": traj.seed,
                "state_kind": traj.state_kind,
                "n_samples": len(traj.z_m),
                "meta": traj.meta,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return sidecar


def load_trajectory(path: str | Path) -> Trajectory:
    """Read a trajectory CSV written by :func:`save_trajectory`."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise SimulationError(f"{path}: expected a two-column t_s,z_m CSV with >= 2 rows")
    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0) or abs(steps.max() - steps.min()) > 1e-9 * steps.mean():
        raise SimulationError(f"{path}: time column is not uniformly sampled")
    sidecar = path.with_suffix(".json")
    seed = None
    state_kind = "custom"
    meta: dict = {}
    if sidecar.is_file():
        info = json.loads(sidecar.read_text())
        seed = info.get("seed")
        state_kind = info.get("state_kind", "custom")
        meta = info.get("meta", {})
    return Trajectory(
        sample_rate_Hz=1.0 / steps.mean(),
        z_m=data[:, 1],
        t0_s=t[0],
        seed=seed,
        state_kind=state_kind,
        meta=meta,
    )
