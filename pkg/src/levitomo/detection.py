"""Interferometric photodetection of the particle's axial motion.

Two schemes are modeled. The single-detector scheme ("ch") integrates the
interference of the diverging trap field (amplitude A) with the
particle-scattered field (amplitude B, phase 2 k z):

    N = (c eps0 sigma_d T / (2 hbar omega_L)) (A^2 + B^2 + 2 A B cos(dphi - 2 k z))

The balanced scheme ("cbh") splits the two fields onto a pair of detectors and
subtracts, cancelling the common A^2 + B^2 term:

    N = (c eps0 sigma_d T / (hbar omega_L)) 2 A B cos(dphi - 2 k z)

Linearized forms expand the cosine to first order in 2 k z around dphi:
N = C1 + C2 + D z and N = 2 C2 + 2 D z, with

    C1 = pf/2 (A^2 + B^2),  C2 = pf A B cos(dphi),  D = pf 2 k A B sin(dphi),

pf = c eps0 sigma_d T / (hbar omega_L). Shot noise draws each physical
detector's count from a Poisson law (the balanced output is the difference of
two Poisson arms), and detector electronics add zero-mean Gaussian counts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .constants import C, EPS0, HBAR
from .errors import DetectionError
from .dynamics import Trajectory
from .physics import ExperimentConfig

_TWO_PI = 2.0 * math.pi

SCHEMES = ("ch", "cbh")


@dataclass(frozen=True)
class DetectionParams:
    scheme: str  # "ch" (single detector) or "cbh" (balanced pair)
    field_amp_A: float
    field_amp_B: float
    delta_phi_rad: float
    sigma_d_m2: float
    T_int_s: float
    k_rad_per_m: float
    shot_noise: bool = False
    electronic_noise_counts_rms: float = 0.0
    linearity_guard: float = 0.1  # max |2 k z| must stay below guard * min_n |dphi - pi n|

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise DetectionError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.T_int_s <= 0:
            raise DetectionError("T_int_s must be positive")
        if self.sigma_d_m2 <= 0:
            raise DetectionError("sigma_d_m2 must be positive")
        if self.k_rad_per_m <= 0:
            raise DetectionError("k_rad_per_m must be positive")
        if self.field_amp_A < 0 or self.field_amp_B < 0:
            raise DetectionError("field amplitudes must be non-negative")
        if self.electronic_noise_counts_rms < 0:
            raise DetectionError("electronic_noise_counts_rms must be non-negative")
        if not 0 < self.linearity_guard:
            raise DetectionError("linearity_guard must be positive")

    @property
    def count_prefactor(self) -> float:
        """pf = c eps0 sigma_d T / (hbar omega_L), with omega_L = c k."""
        omega_laser = C * self.k_rad_per_m
        return C * EPS0 * self.sigma_d_m2 * self.T_int_s / (HBAR * omega_laser)

    def linear_constants(self) -> tuple[float, float, float]:
        """(C1, C2, D) of the small-displacement expansion."""
        pf = self.count_prefactor
        a, b = self.field_amp_A, self.field_amp_B
        c1 = 0.5 * pf * (a**2 + b**2)
        c2 = pf * a * b * math.cos(self.delta_phi_rad)
        d = pf * 2.0 * self.k_rad_per_m * a * b * math.sin(self.delta_phi_rad)
        return c1, c2, d

    def phase_margin_rad(self) -> float:
        """Distance of dphi from the nearest zero-sensitivity phase (multiple of pi)."""
        return abs(((self.delta_phi_rad + 0.5 * math.pi) % math.pi) - 0.5 * math.pi)


def params_from_config(config: ExperimentConfig, scheme: str, **overrides) -> DetectionParams:
    """Build detection parameters from an experiment configuration."""
    params = DetectionParams(
        scheme=scheme,
        field_amp_A=config.field_amp_A,
        field_amp_B=config.field_amp_B,
        delta_phi_rad=config.delta_phi_rad,
        sigma_d_m2=config.detector_area_m2,
        T_int_s=config.integration_time_s,
        k_rad_per_m=_TWO_PI / config.wavelength_m,
    )
    if overrides:
        params = replace(params, **overrides)
    params.validate()
    return params


@dataclass(frozen=True, eq=False)
class CountRecord:
    """Integrated photon counts per detector window.

    ``counts`` are expected values when noise is off, sampled otherwise (the
    balanced difference signal may be negative). ``linear_constants`` always
    carries the (C1, C2, D) of the small-displacement expansion of the
    response, which is what calibrated inversion uses.
    """

    window_start_s: np.ndarray
    counts: np.ndarray
    params: DetectionParams
    linear_constants: tuple[float, float, float]
    model: str = "exact"  # which response generated the counts: "exact" | "linear"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def window_rate_Hz(self) -> float:
        return 1.0 / self.params.T_int_s

    @property
    def window_centers_s(self) -> np.ndarray:
        return self.window_start_s + 0.5 * self.params.T_int_s


def _window_means(traj: Trajectory, t_int_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Window starts and per-window mean positions; windows tile without overlap.

    The window mean stands in for the (assumed slow) mechanical coordinate over
    one integration time. The window must hold an integral number of samples.
    """
    per_window = t_int_s * traj.sample_rate_Hz
    n_per = int(round(per_window))
    if n_per < 1 or abs(per_window - n_per) > 1e-6 * per_window:
        raise DetectionError(
            f"integration time {t_int_s:.6g} s must cover an integral number of"
            f" trajectory samples at {traj.sample_rate_Hz:.6g} Hz (got {per_window:.9g})"
        )
    n_windows = len(traj.z_m) // n_per
    if n_windows < 1:
        raise DetectionError(
            f"window of {t_int_s:.6g} s is longer than the {traj.duration_s:.6g} s trajectory"
        )
    z = traj.z_m[: n_windows * n_per].reshape(n_windows, n_per).mean(axis=1)
    starts = traj.t0_s + np.arange(n_windows) * n_per / traj.sample_rate_Hz
    return starts, z


def _add_electronic_noise(counts: np.ndarray, params: DetectionParams, rng) -> np.ndarray:
    if params.electronic_noise_counts_rms > 0:
        counts = counts + params.electronic_noise_counts_rms * rng.standard_normal(counts.shape)
    return counts


def _arm_counts(params: DetectionParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expected counts of the two balanced arms (sum and difference ports)."""
    pf_half = 0.5 * params.count_prefactor
    a, b = params.field_amp_A, params.field_amp_B
    interference = 2.0 * a * b * np.cos(params.delta_phi_rad - 2.0 * params.k_rad_per_m * z)
    n1 = pf_half * (a**2 + b**2 + interference)
    n2 = pf_half * (a**2 + b**2 - interference)
    return n1, n2


def detect_exact(traj: Trajectory, params: DetectionParams, seed: int | None = None) -> CountRecord:
    """Integrate the full interferometric response over tiled windows."""
    params.validate()
    starts, z = _window_means(traj, params.T_int_s)
    n1, n2 = _arm_counts(params, z)
    rng = np.random.default_rng(seed)
    if params.scheme == "ch":
        expected = n1
        counts = rng.poisson(expected).astype(float) if params.shot_noise else expected
    else:
        if params.shot_noise:
            for name, arm in (("1", n1), ("2", n2)):
                bad = np.flatnonzero(arm < 0)
                if bad.size:
                    raise DetectionError(
                        f"balanced arm {name} has negative expected count at window {bad[0]}"
                    )
            counts = rng.poisson(n1).astype(float) - rng.poisson(n2).astype(float)
        else:
            counts = n1 - n2
    counts = _add_electronic_noise(counts, params, rng)
    return CountRecord(
        window_start_s=starts,
        counts=counts,
        params=params,
        linear_constants=params.linear_constants(),
        model="exact",
        seed=seed,
    )


def detect_linear(traj: Trajectory, params: DetectionParams, seed: int | None = None) -> CountRecord:
    """Linearized counts C1 + C2 + D z (single) or 2 C2 + 2 D z (balanced).

    Refuses to run outside the linear regime: the largest |2 k z| over the raw
    trajectory must stay below ``linearity_guard`` times the distance of dphi
    from the nearest multiple of pi, so distorted data is never produced
    silently.
    """
    params.validate()
    max_excursion = 2.0 * params.k_rad_per_m * float(np.max(np.abs(traj.z_m)))
    threshold = params.linearity_guard * params.phase_margin_rad()
    if max_excursion >= threshold:
        raise DetectionError(
            f"linearity guard violated: max |2 k z| = {max_excursion:.4g} rad is not below"
            f" {threshold:.4g} rad ({params.linearity_guard:g} x phase margin"
            f" {params.phase_margin_rad():.4g} rad); use detect_exact or reduce the amplitude"
        )
    starts, z = _window_means(traj, params.T_int_s)
    c1, c2, d = params.linear_constants()
    rng = np.random.default_rng(seed)
    if params.scheme == "ch":
        expected = c1 + c2 + d * z
        if params.shot_noise:
            bad = np.flatnonzero(expected < 0)
            if bad.size:
                raise DetectionError(f"negative expected count at window {bad[0]}")
            counts = rng.poisson(expected).astype(float)
        else:
            counts = expected
    else:
        if params.shot_noise:
            arm1 = c1 + (c2 + d * z)
            arm2 = c1 - (c2 + d * z)
            for name, arm in (("1", arm1), ("2", arm2)):
                bad = np.flatnonzero(arm < 0)
                if bad.size:
                    raise DetectionError(
                        f"balanced arm {name} has negative expected count at window {bad[0]}"
                    )
            counts = rng.poisson(arm1).astype(float) - rng.poisson(arm2).astype(float)
        else:
            counts = 2.0 * c2 + 2.0 * d * z
    counts = _add_electronic_noise(counts, params, rng)
    return CountRecord(
        window_start_s=starts,
        counts=counts,
        params=params,
        linear_constants=(c1, c2, d),
        model="linear",
        seed=seed,
    )


def invert_counts(
    rec: CountRecord,
    calibration: str = "linear",
    target_variance_m2: float | None = None,
) -> Trajectory:
    """Convert counts back to calibrated positions at the window rate.

    calibration = "linear": z = (count - offset) / D_eff with offset = C1 + C2
    and D_eff = D for the single-detector scheme, offset = 2 C2 and
    D_eff = 2 D for the balanced one.

    calibration = "equipartition": the offset-subtracted counts are rescaled so
    the sample variance equals ``target_variance_m2`` (= k_B T / m omega_s^2).
    This mirrors how a real record is calibrated when the absolute slope is
    unknown, and it is the right choice for noisy records. The method used is
    flagged in the trajectory metadata.
    """
    c1, c2, d = rec.linear_constants
    if d == 0.0:
        raise DetectionError("detection at zero-sensitivity phase: D = 0 (dphi is a multiple of pi)")
    if rec.params.scheme == "ch":
        offset, d_eff = c1 + c2, d
    else:
        offset, d_eff = 2.0 * c2, 2.0 * d
    z = (rec.counts - offset) / d_eff
    meta = {
        "calibration": calibration,
        "scheme": rec.params.scheme,
        "source_model": rec.model,
        "shot_noise": rec.params.shot_noise,
    }
    if calibration == "equipartition":
        if target_variance_m2 is None or target_variance_m2 <= 0:
            raise DetectionError("equipartition calibration needs target_variance_m2 > 0")
        variance = float(np.var(z))
        if variance == 0.0:
            raise DetectionError("cannot equipartition-calibrate a constant record")
        scale = math.sqrt(target_variance_m2 / variance)
        z = (z - z.mean()) * scale
        meta["equipartition_scale"] = scale
        meta["target_variance_m2"] = target_variance_m2
    elif calibration != "linear":
        raise DetectionError(f"unknown calibration {calibration!r} (expected linear | equipartition)")
    return Trajectory(
        sample_rate_Hz=rec.window_rate_Hz,
        z_m=z,
        t0_s=float(rec.window_centers_s[0]),
        seed=rec.seed,
        state_kind="inverted",
        meta=meta,
    )


@dataclass(frozen=True)
class NoiseFloorReport:
    floor_ch: float
    floor_cbh: float
    floor_ratio_ch_over_cbh: float
    peak_power_ch: float
    peak_power_cbh: float
    snr_ch_db: float
    snr_cbh_db: float


def compare_noise_floor(rec_ch: CountRecord, rec_cbh: CountRecord) -> NoiseFloorReport:
    """Off-resonance displacement noise floors and peak SNRs of matched records.

    Both records are inverted with their linear calibration, Welch spectra are
    estimated, and the floor is the median power outside a +-25 % band around
    the spectral peak. Records must share the window rate and length.
    """
    from .spectral import estimate_psd

    if rec_ch.params.scheme != "ch" or rec_cbh.params.scheme != "cbh":
        raise DetectionError("compare_noise_floor expects (ch record, cbh record)")
    if not math.isclose(rec_ch.window_rate_Hz, rec_cbh.window_rate_Hz, rel_tol=1e-12):
        raise DetectionError(
            f"window rates differ: {rec_ch.window_rate_Hz:.6g} vs {rec_cbh.window_rate_Hz:.6g} Hz"
        )
    if len(rec_ch.counts) != len(rec_cbh.counts):
        raise DetectionError("records cover different numbers of windows")

    results = []
    for rec in (rec_ch, rec_cbh):
        traj = invert_counts(rec, calibration="linear")
        n = len(traj.z_m)
        segment = 1 << max(int(math.floor(math.log2(max(n // 4, 8)))), 3)
        psd = estimate_psd(traj.z_m, traj.sample_rate_Hz, segment_len=segment)
        peak_idx = int(np.argmax(psd.power))
        peak_freq = psd.freqs_Hz[peak_idx]
        off_peak = np.abs(psd.freqs_Hz - peak_freq) > 0.25 * peak_freq
        if not np.any(off_peak):
            raise DetectionError("spectrum too short to estimate an off-resonance floor")
        floor = float(np.median(psd.power[off_peak]))
        peak = float(psd.power[peak_idx])
        results.append((floor, peak))
    (floor_ch, peak_ch), (floor_cbh, peak_cbh) = results
    ratio = floor_ch / floor_cbh if floor_cbh > 0 else (1.0 if floor_ch == floor_cbh else math.inf)
    return NoiseFloorReport(
        floor_ch=floor_ch,
        floor_cbh=floor_cbh,
        floor_ratio_ch_over_cbh=ratio,
        peak_power_ch=peak_ch,
        peak_power_cbh=peak_cbh,
        snr_ch_db=10.0 * math.log10(peak_ch / floor_ch) if floor_ch > 0 else math.inf,
        snr_cbh_db=10.0 * math.log10(peak_cbh / floor_cbh) if floor_cbh > 0 else math.inf,
    )


def save_count_record(rec: CountRecord, path: str | Path) -> Path:
    """Write ``t_s,counts`` CSV plus a JSON sidecar with scheme and constants."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "counts"])
        for t, n in zip(rec.window_start_s, rec.counts):
            writer.writerow([f"{t:.17g}", f"{n:.17g}"])
    c1, c2, d = rec.linear_constants
    sidecar = path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {
                "scheme": rec.params.scheme,
                "model": rec.model,
                "C1": c1,
                "C2": c2,
                "D": d,
                "T_int_s": rec.params.T_int_s,
                "shot_noise": rec.params.shot_noise,
                "electronic_noise_counts_rms": rec.params.electronic_noise_counts_rms,
                "seed": rec.seed,
                "n_windows": len(rec.counts),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return sidecar
