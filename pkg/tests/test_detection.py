import dataclasses
import math

import numpy as np
import pytest

from levitomo.constants import KB
from levitomo.detection import (
    CountRecord,
    compare_noise_floor,
    detect_exact,
    detect_linear,
    invert_counts,
    params_from_config,
    save_count_record,
)
from levitomo.dynamics import simulate_coherent, simulate_thermal
from levitomo.errors import DetectionError
from levitomo.spectral import estimate_psd

TWO_PI = 2.0 * math.pi


def flat_trajectory(dq, rate=1.4e6, duration=2e-3):
    return simulate_coherent(dq, 0.0, 0.0, duration, rate)


def small_tone(dq, two_ka, config, rate_per_period=64, periods=16):
    k = TWO_PI / config.wavelength_m
    amplitude = two_ka / (2.0 * k)
    f0 = dq.omega_s_rad_s / TWO_PI
    return simulate_coherent(dq, amplitude, 0.0, periods / f0, rate_per_period * f0)


def test_ch_flat_at_quadrature(config, dq):
    params = params_from_config(config, "ch", T_int_s=1.0 / 1.4e6)
    rec = detect_exact(flat_trajectory(dq), params)
    c1, c2, d = rec.linear_constants
    assert c2 == pytest.approx(0.0, abs=1e-9)  # cos(pi/2) = 0
    np.testing.assert_allclose(rec.counts, c1, rtol=1e-12)


def test_cbh_maximum_fringe(config, dq):
    params = params_from_config(config, "cbh", delta_phi_rad=0.0, T_int_s=1.0 / 1.4e6)
    rec = detect_exact(flat_trajectory(dq), params)
    expected = params.count_prefactor * 2.0 * params.field_amp_A * params.field_amp_B
    np.testing.assert_allclose(rec.counts, expected, rtol=1e-12)


def test_cbh_harmonic_distortion(config, dq):
    traj = small_tone(dq, two_ka=0.05, config=config)
    params = params_from_config(config, "cbh", T_int_s=1.0 / traj.sample_rate_Hz)
    rec = detect_exact(traj, params)
    spectrum = np.abs(np.fft.rfft(rec.counts - rec.counts.mean()))
    fundamental = spectrum[16]  # 16 oscillation periods in the record
    third = spectrum[48]
    assert third / fundamental < 1e-3


@pytest.mark.parametrize("scheme", ["ch", "cbh"])
def test_exact_vs_linear_taylor_bound(config, dq, scheme):
    two_ka = 0.01
    traj = small_tone(dq, two_ka=two_ka, config=config)
    params = params_from_config(config, scheme, T_int_s=1.0 / traj.sample_rate_Hz)
    exact = detect_exact(traj, params)
    linear = detect_linear(traj, params)
    pf = params.count_prefactor
    fringe = (pf if scheme == "cbh" else 0.5 * pf) * 2.0 * params.field_amp_A * params.field_amp_B
    bound = fringe * two_ka**2 / 2.0
    assert bound == pytest.approx(fringe * 5e-5, rel=1e-12)
    assert np.max(np.abs(exact.counts - linear.counts)) <= bound * (1.0 + 1e-9)


def test_linear_offsets_at_rest(config, dq):
    traj = flat_trajectory(dq)
    ch = detect_linear(traj, params_from_config(config, "ch", delta_phi_rad=math.pi / 4, T_int_s=1.0 / 1.4e6))
    c1, c2, _ = ch.linear_constants
    np.testing.assert_allclose(ch.counts, c1 + c2, rtol=1e-12)
    cbh = detect_linear(traj, params_from_config(config, "cbh", delta_phi_rad=math.pi / 4, T_int_s=1.0 / 1.4e6))
    np.testing.assert_allclose(cbh.counts, 2.0 * c2, rtol=1e-12)


def test_balanced_is_twice_dc_subtracted_single(config, dq):
    """Noise-free identity between the two schemes on any trajectory."""
    traj = small_tone(dq, two_ka=0.3, config=config)
    t_int = 1.0 / traj.sample_rate_Hz
    ch = detect_exact(traj, params_from_config(config, "ch", T_int_s=t_int))
    cbh = detect_exact(traj, params_from_config(config, "cbh", T_int_s=t_int))
    c1 = ch.linear_constants[0]
    fringe = ch.params.count_prefactor * 2.0 * ch.params.field_amp_A * ch.params.field_amp_B
    np.testing.assert_allclose(cbh.counts, 2.0 * (ch.counts - c1), rtol=1e-12, atol=1e-12 * fringe)


def test_linear_balanced_has_no_dc_term(config, dq):
    """Fitting a constant to a z = 0 balanced record yields exactly 2 C2."""
    for dphi in (0.3, 1.0, 2.5):
        params = params_from_config(config, "cbh", delta_phi_rad=dphi, T_int_s=1.0 / 1.4e6)
        rec = detect_linear(flat_trajectory(dq), params)
        _, c2, _ = rec.linear_constants
        assert float(np.mean(rec.counts)) == pytest.approx(2.0 * c2, rel=1e-12)


def test_sensitivity_maximal_at_quadrature(config):
    phis = np.linspace(0.05, math.pi - 0.05, 181)
    slopes = [
        abs(params_from_config(config, "ch", delta_phi_rad=float(p)).linear_constants()[2])
        for p in phis
    ]
    assert np.argmax(slopes) == np.argmin(np.abs(phis - math.pi / 2))


def test_linearity_guard_reports_numbers(config, dq):
    traj = small_tone(dq, two_ka=0.5, config=config)
    params = params_from_config(config, "cbh", T_int_s=1.0 / traj.sample_rate_Hz)
    with pytest.raises(DetectionError, match="max \\|2 k z\\|"):
        detect_linear(traj, params)


def test_guard_rejects_zero_sensitivity_phase(config, dq):
    traj = small_tone(dq, two_ka=0.01, config=config)
    params = params_from_config(config, "cbh", delta_phi_rad=0.0, T_int_s=1.0 / traj.sample_rate_Hz)
    with pytest.raises(DetectionError):
        detect_linear(traj, params)


def test_window_validation(config, dq):
    traj = simulate_coherent(dq, 1e-9, 0.0, 1e-4, 1.4e6)
    with pytest.raises(DetectionError, match="longer than"):
        detect_exact(traj, params_from_config(config, "ch", T_int_s=1.0))
    with pytest.raises(DetectionError, match="integral number"):
        detect_exact(traj, params_from_config(config, "ch", T_int_s=1.5 / traj.sample_rate_Hz))


def test_invert_round_trip(config, dq):
    traj = small_tone(dq, two_ka=0.01, config=config)
    params = params_from_config(config, "cbh", T_int_s=4.0 / traj.sample_rate_Hz)
    rec = detect_linear(traj, params)
    inverted = invert_counts(rec)
    window_means = traj.z_m[: 4 * (len(traj.z_m) // 4)].reshape(-1, 4).mean(axis=1)
    np.testing.assert_allclose(inverted.z_m, window_means, rtol=1e-10, atol=1e-20)
    assert inverted.sample_rate_Hz == pytest.approx(1.0 / params.T_int_s, rel=1e-12)


def test_invert_zero_sensitivity_errors(config, dq):
    params = params_from_config(config, "ch", T_int_s=1.0 / 1.4e6)
    rec = detect_exact(flat_trajectory(dq), params)
    broken = CountRecord(
        window_start_s=rec.window_start_s,
        counts=rec.counts,
        params=rec.params,
        linear_constants=(rec.linear_constants[0], rec.linear_constants[1], 0.0),
    )
    with pytest.raises(DetectionError, match="zero-sensitivity"):
        invert_counts(broken)


def test_shot_noise_mean_converges(config, dq):
    params = params_from_config(config, "ch", delta_phi_rad=math.pi / 4, shot_noise=True, T_int_s=1.0 / 1.4e6)
    traj = flat_trajectory(dq, duration=4096 / 1.4e6)
    rec = detect_exact(traj, params, seed=17)
    lam = params.linear_constants()[0] + params.linear_constants()[1]
    n = len(rec.counts)
    assert abs(rec.counts.mean() - lam) < 3.0 * math.sqrt(lam / n)


def test_shot_noise_deterministic(config, dq):
    params = params_from_config(config, "cbh", shot_noise=True, T_int_s=1.0 / 1.4e6)
    traj = flat_trajectory(dq)
    a = detect_exact(traj, params, seed=5)
    b = detect_exact(traj, params, seed=5)
    assert np.array_equal(a.counts, b.counts)


def test_equipartition_calibration_full_temperature(config, dq):
    """300 K record through the exact balanced detector, shot noise on."""
    traj = simulate_thermal(config, dq, 0.05, 1e6, seed=44)
    params = params_from_config(config, "cbh", shot_noise=True)
    rec = detect_exact(traj, params, seed=45)
    target = KB * config.temperature_K / (dq.mass_kg * dq.omega_s_rad_s**2)
    inverted = invert_counts(rec, calibration="equipartition", target_variance_m2=target)
    assert inverted.z_m.var() == pytest.approx(target, rel=0.05)
    assert inverted.meta["calibration"] == "equipartition"
    assert "equipartition_scale" in inverted.meta


def test_equipartition_needs_target(config, dq):
    rec = detect_linear(flat_trajectory(dq), params_from_config(config, "ch", T_int_s=1.0 / 1.4e6))
    with pytest.raises(DetectionError, match="target_variance"):
        invert_counts(rec, calibration="equipartition")


def _matched_records(config, dq, shot, seed_pair=(1, 2), duration=0.06, dim_fields=False):
    """Matched single/balanced records of one thermal trajectory.

    ``dim_fields`` scales the interferometer amplitudes down so the shot floor
    dominates the mechanical Lorentzian tail everywhere off resonance
    (shot-noise-limited operation); the bright defaults bury the shot floor
    below the motion tail inside the Nyquist band.
    """
    traj = simulate_thermal(
        dataclasses.replace(config, pressure_mbar=1.0), dq, duration, 1e6, seed=8, temperature_K=0.03
    )
    overrides = {"field_amp_A": 3.162, "field_amp_B": 0.3162} if dim_fields else {}
    recs = []
    for scheme, seed in zip(("ch", "cbh"), seed_pair):
        params = params_from_config(config, scheme, shot_noise=shot, linearity_guard=0.5, **overrides)
        recs.append(detect_linear(traj, params, seed=seed))
    return recs


def test_compare_noise_floor_noise_free(config, damped_dq):
    rec_ch, rec_cbh = _matched_records(config, damped_dq, shot=False)
    report = compare_noise_floor(rec_ch, rec_cbh)
    assert report.floor_ratio_ch_over_cbh == pytest.approx(1.0, rel=1e-6)


def test_compare_noise_floor_shot_limited(config, damped_dq):
    rec_ch, rec_cbh = _matched_records(config, damped_dq, shot=True, dim_fields=True)
    report = compare_noise_floor(rec_ch, rec_cbh)
    assert report.floor_cbh <= report.floor_ch
    # ideal balanced detection halves the displacement-equivalent shot floor
    assert report.floor_ratio_ch_over_cbh == pytest.approx(2.0, rel=0.25)
    assert report.snr_cbh_db >= report.snr_ch_db


def test_compare_noise_floor_rejects_mismatch(config, dq):
    traj = flat_trajectory(dq)
    rec_ch = detect_linear(traj, params_from_config(config, "ch", T_int_s=1.0 / 1.4e6))
    rec_cbh = detect_linear(traj, params_from_config(config, "cbh", T_int_s=2.0 / 1.4e6))
    with pytest.raises(DetectionError, match="window rates"):
        compare_noise_floor(rec_ch, rec_cbh)


def test_electronic_noise_floor_scales_with_variance(config, dq):
    """Doubling the additive white-noise variance doubles the displacement floor;
    doubling the rms therefore quadruples it."""
    traj = flat_trajectory(dq, duration=65536 / 1.4e6)
    floors = []
    for rms in (200.0, 400.0):
        params = params_from_config(
            config, "ch", electronic_noise_counts_rms=rms, T_int_s=1.0 / 1.4e6
        )
        rec = detect_linear(traj, params, seed=9)
        inverted = invert_counts(rec)
        psd = estimate_psd(inverted.z_m, inverted.sample_rate_Hz, 4096)
        floors.append(float(np.median(psd.power)))
    assert floors[1] / floors[0] == pytest.approx(4.0, rel=0.10)


def test_count_record_csv(tmp_path, config, dq):
    params = params_from_config(config, "cbh", T_int_s=1.0 / 1.4e6)
    rec = detect_linear(flat_trajectory(dq), params)
    path = tmp_path / "counts.csv"
    sidecar = save_count_record(rec, path)
    assert path.read_text().splitlines()[0] == "t_s,counts"
    import json

    info = json.loads(sidecar.read_text())
    assert info["scheme"] == "cbh"
    assert info["D"] == pytest.approx(rec.linear_constants[2])
