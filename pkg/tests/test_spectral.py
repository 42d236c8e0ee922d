import math

import numpy as np
import pytest

from levitomo.dynamics import simulate_thermal
from levitomo.errors import SpectralError
from levitomo.spectral import (
    Psd,
    _oscillator_psd,
    estimate_psd,
    estimate_radius,
    fit_lorentzian,
    noise_floor_and_snr,
)

TWO_PI = 2.0 * math.pi


def test_white_noise_level_and_parseval():
    rng = np.random.default_rng(0)
    fs = 1e5
    x = rng.standard_normal(1 << 19)
    psd = estimate_psd(x, fs, segment_len=4096)
    assert float(np.mean(psd.power)) == pytest.approx(2.0 / fs, rel=0.05)
    assert float(np.trapezoid(psd.power, psd.freqs_Hz)) == pytest.approx(float(x.var()), rel=0.02)


def test_sinusoid_integrated_power():
    fs = 1e4
    segment = 4096
    amp = 0.7
    f0 = 100 * fs / segment  # bin-centered tone
    t = np.arange(1 << 16) / fs
    psd = estimate_psd(amp * np.sin(TWO_PI * f0 * t), fs, segment)
    total = float(np.trapezoid(psd.power, psd.freqs_Hz))
    assert total == pytest.approx(amp**2 / 2.0, rel=0.02)


def test_estimator_validation():
    x = np.zeros(1000)
    with pytest.raises(SpectralError, match="power of two"):
        estimate_psd(x, 1.0, segment_len=1000)
    with pytest.raises(SpectralError, match="need at least"):
        estimate_psd(x, 1.0, segment_len=1024)
    with pytest.raises(SpectralError):
        estimate_psd(x, 1.0, segment_len=256, overlap_fraction=1.5)


def test_psd_excludes_dc():
    psd = estimate_psd(np.random.default_rng(1).standard_normal(4096) + 100.0, 1.0, 256)
    assert psd.freqs_Hz[0] > 0


def _synthetic_psd(omega0, xi, amplitude, floor, noise=0.01, seed=3, n=4000, f_max=2e5):
    freqs = np.linspace(f_max / n, f_max, n)
    truth = _oscillator_psd(freqs, omega0, xi, amplitude, floor)
    rng = np.random.default_rng(seed)
    power = truth * (1.0 + noise * rng.standard_normal(n))
    return Psd(freqs_Hz=freqs, power=power, n_segments=1, segment_len=n)


def test_fit_recovers_synthetic_parameters():
    omega0, xi, amplitude, floor = TWO_PI * 7e4, 5e3, 50.0, 1e-21
    psd = _synthetic_psd(omega0, xi, amplitude, floor)
    fit = fit_lorentzian(psd, (4e4, 1e5))
    assert fit.omega0_rad_s == pytest.approx(omega0, rel=0.02)
    assert fit.linewidth_rad_s == pytest.approx(xi, rel=0.02)
    assert fit.amplitude == pytest.approx(amplitude, rel=0.02)
    assert fit.noise_floor == pytest.approx(floor, rel=0.02)
    assert fit.covariance.shape == (4, 4)
    assert np.all(np.diag(fit.covariance) >= 0)


def test_fit_rejects_white_noise():
    rng = np.random.default_rng(7)
    psd = estimate_psd(rng.standard_normal(1 << 16), 1e6, 4096)
    with pytest.raises(SpectralError, match="no peak"):
        fit_lorentzian(psd, (1e4, 4e5))


def test_fit_scale_equivariance():
    omega0, xi, amplitude, floor = TWO_PI * 7e4, 5e3, 50.0, 1e-21
    psd = _synthetic_psd(omega0, xi, amplitude, floor)
    scale = 123.456
    scaled = Psd(psd.freqs_Hz, psd.power * scale**2, psd.n_segments, psd.segment_len)
    base = fit_lorentzian(psd, (4e4, 1e5))
    other = fit_lorentzian(scaled, (4e4, 1e5))
    assert other.omega0_rad_s == pytest.approx(base.omega0_rad_s, rel=1e-6)
    assert other.linewidth_rad_s == pytest.approx(base.linewidth_rad_s, rel=1e-6)
    assert other.amplitude == pytest.approx(base.amplitude * scale**2, rel=1e-6)
    assert other.noise_floor == pytest.approx(base.noise_floor * scale**2, rel=1e-6)


def test_thermal_peak_within_one_bin(config, dq):
    """Reference low pressure (1e-2 mbar): the spectral peak sits on omega_s."""
    traj = simulate_thermal(config, dq, 0.5, 2e6, seed=13)
    psd = estimate_psd(traj.z_m, traj.sample_rate_Hz, 1 << 17)
    bin_width = psd.freqs_Hz[1] - psd.freqs_Hz[0]
    peak_freq = psd.freqs_Hz[int(np.argmax(psd.power))]
    assert abs(peak_freq - dq.omega_s_rad_s / TWO_PI) <= bin_width


def test_thermal_fit_frequency_within_one_percent(config, dq):
    traj = simulate_thermal(config, dq, 0.5, 2e6, seed=13)
    psd = estimate_psd(traj.z_m, traj.sample_rate_Hz, 1 << 17)
    f0 = dq.omega_s_rad_s / TWO_PI
    fit = fit_lorentzian(psd, (0.5 * f0, 1.5 * f0))
    assert fit.omega0_rad_s == pytest.approx(dq.omega_s_rad_s, rel=0.01)


def test_parseval_on_thermal_record(damped_config, damped_dq):
    traj = simulate_thermal(damped_config, damped_dq, 0.2, 1e6, seed=19)
    psd = estimate_psd(traj.z_m, traj.sample_rate_Hz, 1 << 14)
    assert float(np.trapezoid(psd.power, psd.freqs_Hz)) == pytest.approx(float(traj.z_m.var()), rel=0.02)


def test_time_shift_invariance():
    rng = np.random.default_rng(23)
    x = rng.standard_normal(1 << 18)
    n = 1 << 17
    early = estimate_psd(x[:n], 1e6, 4096)
    late = estimate_psd(x[-n:], 1e6, 4096)
    assert float(np.mean(late.power)) == pytest.approx(float(np.mean(early.power)), rel=0.05)
    assert float(np.median(late.power)) == pytest.approx(float(np.median(early.power)), rel=0.05)


def test_fitted_floor_tracks_injected_variance(damped_config, damped_dq):
    """Doubling an additive white-noise variance doubles the fitted floor."""
    traj = simulate_thermal(damped_config, damped_dq, 0.25, 1e6, seed=29, temperature_K=0.03)
    rng = np.random.default_rng(30)
    noise = rng.standard_normal(len(traj.z_m))
    f0 = damped_dq.omega_s_rad_s / TWO_PI
    floors = []
    for variance_scale in (1.0, 2.0):
        sigma = 2e-10 * math.sqrt(variance_scale)
        psd = estimate_psd(traj.z_m + sigma * noise, traj.sample_rate_Hz, 1 << 14)
        floors.append(fit_lorentzian(psd, (0.5 * f0, 1.5 * f0)).noise_floor)
    assert floors[1] / floors[0] == pytest.approx(2.0, rel=0.10)


def test_snr_report():
    omega0, xi, amplitude, floor = TWO_PI * 7e4, 5e3, 50.0, 1e-21
    psd = _synthetic_psd(omega0, xi, amplitude, floor)
    fit = fit_lorentzian(psd, (4e4, 1e5))
    report = noise_floor_and_snr(psd, fit)
    assert report.floor == fit.noise_floor
    expected_peak = fit.amplitude / (fit.linewidth_rad_s * fit.omega0_rad_s) ** 2 + fit.noise_floor
    assert report.peak_power == pytest.approx(expected_peak, rel=1e-12)
    assert report.snr_db == pytest.approx(10 * math.log10(expected_peak / fit.noise_floor), rel=1e-12)


def test_radius_from_thermal_record(damped_config, damped_dq):
    traj = simulate_thermal(damped_config, damped_dq, 0.5, 1e6, seed=41)
    psd = estimate_psd(traj.z_m, traj.sample_rate_Hz, 1 << 14)
    f0 = damped_dq.omega_s_rad_s / TWO_PI
    fit = fit_lorentzian(psd, (0.3 * f0, 2.0 * f0))
    radius = estimate_radius(fit, damped_config.temperature_K, damped_config.density_kg_m3)
    assert radius == pytest.approx(damped_config.particle_radius_m, rel=0.10)
