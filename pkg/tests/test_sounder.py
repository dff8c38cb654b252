import numpy as np
import pytest

from cfmm import channel as chan
from cfmm import raypaths as rp
from cfmm import scene as sc
from cfmm import sounder as sd
from cfmm import waveform as wf
from conftest import make_scene

SPEC = wf.WaveformSpec()


def short_drive_scene(x0=10.0, x1=11.0, y=10.0, height=4.5):
    return make_scene(waypoints=[
        sc.Waypoint("start", x=x0, y=y, height=height),
        sc.Waypoint("drive", x=x1, y=y),
    ])


class TestAGC:
    CFG = sd.AGCConfig()

    def up(self, att, p):
        state = sd.AGCState(config=self.CFG, current_attenuation_db=att)
        return sd.agc_update(state, p).current_attenuation_db

    def test_selects_smallest_step_landing_in_window(self):
        assert self.up(0.0, -30.0) == 10.0  # -40 hits the window top
        assert self.up(0.0, -25.0) == 20.0  # -45 hits the window bottom
        assert self.up(0.0, -12.0) == 30.0
        assert self.up(0.0, -41.0) == 0.0

    def test_holds_inside_window(self):
        state = sd.AGCState(config=self.CFG, current_attenuation_db=10.0)
        out = sd.agc_update(state, -31.0)
        assert out is state  # -41 dBm output, no change

    def test_weak_signal_returns_to_zero(self):
        assert self.up(30.0, -80.0) == 0.0

    def test_overload_clamps_to_max(self):
        assert self.up(0.0, -5.0) == 30.0

    def test_gap_prefers_protection(self):
        # -37 dBm: no step lands inside [-45, -40]; smallest protecting
        # step is 10 dB (output -47 <= -40).
        assert self.up(0.0, -37.0) == 10.0

    def test_sequence_one_capture_lag(self):
        powers = np.array([-30.0, -30.0, -80.0, -80.0, -80.0])
        att = sd.agc_attenuation_sequence(powers, self.CFG)
        # Capture 0 converges on its own power; changes land one late.
        np.testing.assert_allclose(att, [10.0, 10.0, 10.0, 0.0, 0.0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            sd.AGCConfig(attenuation_steps_db=(10.0, 0.0)).validate()
        with pytest.raises(ValueError):
            sd.AGCConfig(target_output_window_dbm=(-40.0, -45.0)).validate()


class TestImpairments:
    def test_noise_figure_penalty(self):
        imp = sd.ImpairmentConfig()
        assert imp.noise_figure_db(0.0) == 5.0
        assert imp.noise_figure_db(15.0) == pytest.approx(15.0)
        assert imp.noise_figure_db(30.0) == pytest.approx(25.0)  # capped at +20
        assert imp.noise_figure_db(60.0) == pytest.approx(25.0)

    def test_noise_sigma_reference_level(self):
        imp = sd.ImpairmentConfig()
        # -174 + 10log10(125 kHz) + 5 dB NF = -118.03 dBm per tone.
        sigma2 = imp.noise_sigma2_mw(0.0, 125e3)
        assert 10 * np.log10(sigma2) == pytest.approx(-118.03, abs=0.01)
        # The capped penalty is exactly +20 dB at 30 dB attenuation.
        assert imp.noise_sigma2_mw(30.0, 125e3) / sigma2 == pytest.approx(100.0)

    def test_chain_response_bounded_and_deterministic(self):
        cfg = sd.ChainRippleConfig()
        r1 = sd.make_chain_response(2801, cfg)
        r2 = sd.make_chain_response(2801, cfg)
        np.testing.assert_array_equal(r1, r2)
        mag_db = 20 * np.log10(np.abs(r1))
        assert np.abs(mag_db).max() == pytest.approx(3.0, abs=1e-9)
        assert np.abs(np.angle(r1)).max() <= np.pi / 4 + 1e-9
        assert np.abs(r1).min() > 0.5
        r3 = sd.make_chain_response(2801, sd.ChainRippleConfig(seed=8))
        assert not np.allclose(r1, r3)

    def test_cal_record_rejects_zeros(self):
        rec = sd.CalRecord(response=np.ones(8, dtype=complex))
        rec.validate()
        bad = sd.CalRecord(response=np.array([1.0, 0.0, 1.0], dtype=complex))
        with pytest.raises(ValueError):
            bad.validate()


def test_inject_crosstalk_identity_and_level():
    spectrum = np.zeros(16, dtype=complex)
    ref = np.exp(1j * np.linspace(0, 2, 16))
    assert sd.inject_crosstalk(spectrum, None, ref) is spectrum
    out = sd.inject_crosstalk(spectrum, -60.0, ref)
    np.testing.assert_allclose(np.abs(out), 1e-3, rtol=1e-12)


def test_timing_constants():
    assert sd.REPETITIONS_PER_UE == 10
    assert sd.UE_SLOT_S == pytest.approx(640e-6)
    assert sd.CAPTURE_SPAN_S == pytest.approx(5.12e-3)
    # In-capture AP motion at 0.5 m/s stays under half a centimetre.
    assert 0.5 * sd.CAPTURE_SPAN_S == pytest.approx(0.00256)


def test_campaign_structure_and_determinism():
    scene = short_drive_scene()
    imp = sd.ImpairmentConfig()
    cal, records = sd.run_campaign(scene, SPEC, imp, seed=42)
    recs = list(records)
    assert len(recs) == 21
    assert [r.capture_index for r in recs] == list(range(21))
    np.testing.assert_allclose([r.timestamp_s for r in recs], 0.1 * np.arange(21))
    r = recs[3]
    assert r.spectra.shape == (8, 1, 2801)
    assert r.spectra.dtype == np.complex64
    assert r.n_repetitions == 10

    cal2, records2 = sd.run_campaign(scene, SPEC, imp, seed=42)
    np.testing.assert_array_equal(cal.response, cal2.response)
    np.testing.assert_array_equal(recs[7].spectra, next(r for r in records2 if r.capture_index == 7).spectra)

    _, records3 = sd.run_campaign(scene, SPEC, imp, seed=43)
    assert not np.array_equal(recs[7].spectra, next(r for r in records3 if r.capture_index == 7).spectra)


def test_store_repetitions_shape_and_noise_scaling():
    scene = short_drive_scene()
    stored = sd.ImpairmentConfig(store_repetitions=True, crosstalk_coupling_db=None)
    averaged = sd.ImpairmentConfig(store_repetitions=False, crosstalk_coupling_db=None)
    p_stored = sd.plan_campaign(scene, SPEC, stored, seed=1)
    p_avg = sd.plan_campaign(scene, SPEC, averaged, seed=1)

    full = sd.synthesize_chunk(p_stored, 0, 2)
    assert full.shape == (2, 8, 10, 2801)
    assert not np.array_equal(full[0, 0, 0], full[0, 0, 1])  # independent reps

    # Averaged storage carries the variance of the repetition mean: 10x less.
    def noise_var(plan):
        noisy = sd.synthesize_chunk(plan, 0, 1).astype(np.complex128)
        clean = sd.synthesize_chunk(plan, 0, 1, include_noise=False).astype(np.complex128)
        return (np.abs(noisy - clean) ** 2).mean()

    ratio = noise_var(p_stored) / noise_var(p_avg)
    assert ratio == pytest.approx(10.0, rel=0.1)


def test_chunk_boundaries_do_not_change_bytes():
    scene = short_drive_scene()
    plan = sd.plan_campaign(scene, SPEC, sd.ImpairmentConfig(), seed=9)
    whole = sd.synthesize_chunk(plan, 0, plan.n_captures)
    parts = np.concatenate([
        sd.synthesize_chunk(plan, 0, 5),
        sd.synthesize_chunk(plan, 5, 6),
        sd.synthesize_chunk(plan, 6, plan.n_captures),
    ])
    assert np.array_equal(whole.view(np.float32), parts.view(np.float32))


def test_noiseless_capture_reproduces_channel():
    scene = short_drive_scene()
    imp = sd.ImpairmentConfig(crosstalk_coupling_db=None, store_repetitions=True)
    plan = sd.plan_campaign(scene, SPEC, imp, seed=5)
    m = 4
    raw = sd.synthesize_chunk(plan, m, m + 1, include_noise=False)[0]
    g = 10 ** (-plan.attenuation_db[m] / 20.0)
    front = plan.tx_tone_amplitude * plan.reference_tones * plan.chain
    for j in range(8):
        lo, hi = plan.row_splits[j][m], plan.row_splits[j][m + 1]
        h = chan.synthesize_rows(
            plan.path_gains[j][lo:hi], plan.path_delays[j][lo:hi],
            np.array([0, hi - lo]), SPEC.tone_offsets_hz(),
        )[0]
        expected = (g * front * h).astype(np.complex64)
        np.testing.assert_allclose(raw[j, 0], expected, rtol=0, atol=np.abs(expected).max() * 2e-6)
        # All repetitions identical without noise.
        assert np.array_equal(raw[j, 0], raw[j, 9])


def test_crosstalk_appears_pre_attenuator():
    scene = short_drive_scene()
    base = sd.ImpairmentConfig(crosstalk_coupling_db=None)
    with_xt = sd.ImpairmentConfig(crosstalk_coupling_db=-60.0)
    p0 = sd.plan_campaign(scene, SPEC, base, seed=2)
    p1 = sd.plan_campaign(scene, SPEC, with_xt, seed=2)
    np.testing.assert_array_equal(p0.attenuation_db, p1.attenuation_db)
    m = 3
    a = sd.synthesize_chunk(p0, m, m + 1, include_noise=False)[0].astype(np.complex128)
    b = sd.synthesize_chunk(p1, m, m + 1, include_noise=False)[0].astype(np.complex128)
    g = 10 ** (-p0.attenuation_db[m] / 20.0)
    leak = 1e-3 * g * p0.tx_tone_amplitude * p0.reference_tones * p0.chain
    for j in range(8):
        np.testing.assert_allclose(b[j, 0] - a[j, 0], leak, rtol=0, atol=np.abs(leak).max() * 1e-5)


def test_agc_reacts_to_approach_with_noise_penalty():
    # Drive toward the UE line so input power crosses the AGC window.
    scene = make_scene(
        buildings=[],
        waypoints=[
            sc.Waypoint("start", x=20.0, y=10.0, height=4.5),
            sc.Waypoint("drive", x=20.0, y=50.0),
        ],
    )
    imp = sd.ImpairmentConfig(crosstalk_coupling_db=None)
    plan = sd.plan_campaign(scene, SPEC, imp, seed=11)
    att = plan.attenuation_db
    assert att[-1] > att[0]
    assert np.all(np.diff(att) >= 0)  # monotone approach here
    # Attenuation steps coincide with noise variance steps, capped at 20 dB.
    s2 = imp.noise_sigma2_mw(att, SPEC.subcarrier_spacing_hz)
    penalty_db = 10 * np.log10(s2 / imp.noise_sigma2_mw(0.0, SPEC.subcarrier_spacing_hz))
    assert penalty_db.max() <= 20.0 + 1e-9
    np.testing.assert_allclose(penalty_db, np.minimum(att * 2 / 3, 20.0), atol=1e-9)


def test_measured_power_matches_synthesized_channel():
    scene = short_drive_scene()
    imp = sd.ImpairmentConfig(crosstalk_coupling_db=None)
    plan = sd.plan_campaign(scene, SPEC, imp, seed=3)
    m = 7
    for j in range(8):
        lo, hi = plan.row_splits[j][m], plan.row_splits[j][m + 1]
        h = chan.synthesize_rows(
            plan.path_gains[j][lo:hi], plan.path_delays[j][lo:hi],
            np.array([0, hi - lo]), SPEC.tone_offsets_hz(),
        )[0]
        expect = plan.impairments.tx_power_dbm + 10 * np.log10((np.abs(h) ** 2).mean())
        assert plan.measured_power_dbm[m, j] == pytest.approx(expect, abs=1e-9)
