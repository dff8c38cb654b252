import numpy as np
import pytest

from cfmm import pipeline as pl
from cfmm import sounder as sd
from cfmm import waveform as wf
from conftest import make_scene


def brute_pdp(h, beta, pad):
    # Direct-sum definition: P(q) = |sum_k w_k H_k exp(+2j pi k q / (F N))|^2
    n = h.shape[-1]
    fn = pad * n
    w = pl.kaiser_taps(n, beta)
    e = np.exp(2j * np.pi * np.outer(np.arange(fn), np.arange(n)) / fn)
    return np.abs(e @ (w * h)) ** 2


def on_grid_channel(n, native_bin, amplitude=1.0):
    k = np.arange(n)
    return amplitude * np.exp(-2j * np.pi * k * native_bin / n)


class TestTaps:
    def test_unit_coherent_gain(self):
        for beta in (0.0, 1.0, 3.0):
            assert pl.kaiser_taps(512, beta).sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_beta_is_rectangular(self):
        np.testing.assert_allclose(pl.kaiser_taps(64, 0.0), np.full(64, 1 / 64))


class TestCalibrate:
    def test_identity(self):
        raw = np.arange(1, 9, dtype=complex)
        out = pl.calibrate(raw, np.ones(8), np.ones(8))
        np.testing.assert_allclose(out, raw)

    def test_divides_out_chain(self):
        rng = np.random.default_rng(0)
        chain = sd.make_chain_response(256, sd.ChainRippleConfig())
        h = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        ref = np.exp(1j * rng.uniform(0, 2 * np.pi, 256))
        raw = chain * ref * h
        out = pl.calibrate(raw, chain, ref)
        np.testing.assert_allclose(out, h, rtol=1e-12)

    def test_undoes_attenuator(self):
        raw = 10 ** (-30 / 20.0) * np.ones((3, 8), dtype=complex)
        out = pl.calibrate(raw, np.ones(8), np.ones(8), attenuation_db=30.0)
        np.testing.assert_allclose(out, 1.0, rtol=1e-12)
        per_row = pl.calibrate(raw, np.ones(8), np.ones(8),
                               attenuation_db=np.array([30.0, 30.0, 30.0]))
        np.testing.assert_allclose(per_row, 1.0, rtol=1e-12)

    def test_commutes_with_repetition_average(self):
        rng = np.random.default_rng(1)
        chain = np.exp(1j * rng.uniform(0, 1, 64)) * rng.uniform(0.7, 1.3, 64)
        reps = rng.standard_normal((10, 64)) + 1j * rng.standard_normal((10, 64))
        a = pl.calibrate(reps.mean(axis=0), chain, np.ones(64))
        b = pl.calibrate(reps, chain, np.ones(64)).mean(axis=0)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_zero_cal_rejected(self):
        cal = np.ones(8, dtype=complex)
        cal[3] = 0.0
        with pytest.raises(ValueError):
            pl.calibrate(np.ones(8, dtype=complex), cal, np.ones(8))


class TestComputePDP:
    def test_flat_spectrum_is_impulse(self):
        p = pl.compute_pdp(np.ones(64), kaiser_beta=0.0, pad_factor=1)
        assert p[0] == pytest.approx(1.0, rel=1e-12)
        assert p[1:].max() <= 1e-20 * p[0]

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(16, 65))
            h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            got = pl.compute_pdp(h, kaiser_beta=3.0, pad_factor=3)
            want = brute_pdp(h, 3.0, 3)
            np.testing.assert_allclose(got, want, rtol=1e-9,
                                       atol=want.max() * 1e-13)

    def test_on_grid_path_peak_and_sidelobes(self):
        n, f = 2801, 10
        p = pl.compute_pdp(on_grid_channel(n, 117, amplitude=0.5), 3.0, f)
        assert int(np.argmax(p)) == 117 * f
        rel_db = 10 * np.log10(p / p[117 * f] + 1e-300)
        # First sidelobe of the unit-gain window sits near -69.8 dB, just
        # past the mainlobe null at +-3.2 native bins.
        near = rel_db[117 * f + 33:117 * f + 400].max()
        assert near == pytest.approx(-69.8, abs=1.0)
        # Far rejection leaves >100 dB of in-gate dynamic range.
        far = rel_db[(117 + 300) * f:(117 + 360) * f].max()
        assert far <= -110.0

    def test_peak_power_window_invariant(self):
        n, f = 1401, 4
        h = on_grid_channel(n, 200, amplitude=0.3)
        for beta in (0.0, 3.0):
            p = pl.compute_pdp(h, beta, f)
            assert p[200 * f] == pytest.approx(0.09, rel=1e-12)

    def test_parseval_unwindowed(self):
        rng = np.random.default_rng(3)
        h = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        p = pl.compute_pdp(h, kaiser_beta=0.0, pad_factor=1)
        assert p.sum() == pytest.approx((np.abs(h) ** 2).sum() / 256, rel=1e-12)


class TestSmallScaleAverage:
    def test_window_one_is_identity(self):
        x = np.random.default_rng(0).random((6, 4))
        np.testing.assert_array_equal(pl.small_scale_average(x, 1), x)

    def test_mean_of_equals(self):
        x = np.tile([2.0, 5.0], (20, 1))
        np.testing.assert_allclose(pl.small_scale_average(x, 9), x)

    def test_spike_spreads_as_mean(self):
        x = np.zeros((17, 1))
        x[8, 0] = 9.0
        out = pl.small_scale_average(x, 9)
        assert out[8, 0] == pytest.approx(1.0)
        assert out[4, 0] == pytest.approx(1.0)  # window 4..12 still holds it
        assert out[3, 0] == pytest.approx(0.0)

    def test_truncated_edges(self):
        x = np.arange(12, dtype=float).reshape(12, 1)
        out = pl.small_scale_average(x, 9)
        assert out[0, 0] == pytest.approx(np.mean(x[0:5]))
        assert out[1, 0] == pytest.approx(np.mean(x[0:6]))
        assert out[11, 0] == pytest.approx(np.mean(x[7:12]))

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            pl.small_scale_average(np.ones((4, 2)), 4)


class TestThreshold:
    def test_level_and_mask(self):
        ssa = np.ones((1, 100))
        ssa[0, 10] = 10 ** 0.71  # just above mean + 7 dB
        ssa[0, 20] = 10 ** 0.69  # just below
        mask, noise_db = pl.threshold_noise(ssa, slice(50, 100), 7.0)
        assert noise_db[0] == pytest.approx(0.0, abs=0.01)
        assert bool(mask[0, 10]) is True
        assert bool(mask[0, 20]) is False

    def test_all_noise_gives_sparse_mask(self):
        rng = np.random.default_rng(12)
        ssa = rng.exponential(1.0, size=(500, 4000))
        mask, _ = pl.threshold_noise(ssa, slice(2000, 4000), 7.0)
        frac = mask[:, :2000].mean()
        assert frac == pytest.approx(np.exp(-10 ** 0.7), abs=8e-4)

    def test_strong_path_always_survives(self):
        rng = np.random.default_rng(5)
        ssa = rng.exponential(1.0, size=(50, 3000))
        ssa[:, 100] = 1000.0  # 30 dB above the floor
        mask, _ = pl.threshold_noise(ssa, slice(1500, 3000), 7.0)
        assert mask[:, 100].all()


class TestGateAndCrosstalk:
    def test_gate_zeroes_and_unmasks(self):
        v = np.ones((2, 3, 20))
        m = np.ones((2, 3, 20), dtype=bool)
        pl.delay_gate(v, m, gate_native_bins=3, pad_factor=2)
        assert v[..., 6:].max() == 0.0
        assert not m[..., 6:].any()
        assert v[..., :6].min() == 1.0
        assert m[..., :6].all()

    def test_cut_bin_arithmetic(self):
        native = 1.0 / 350.125e6
        cut = pl.crosstalk_cut_bins(np.array(100.0), native, 4, 400, 10)
        assert int(cut) == 113 * 10  # round(116.79) - 4
        assert int(pl.crosstalk_cut_bins(np.array(3.0), native, 4, 400, 10)) == 0
        # Beyond the gate: the whole gated region is pre-cursor.
        assert int(pl.crosstalk_cut_bins(np.array(400.0), native, 4, 400, 10)) == 4000

    def test_remove_crosstalk_in_place(self):
        native = 1.0 / 350.125e6
        v = np.ones(4000)
        m = np.ones(4000, dtype=bool)
        pl.remove_crosstalk(v, m, 100.0, native, 4, 400, 10)
        assert v[:1130].max() == 0.0
        assert not m[:1130].any()
        assert v[1130:].min() == 1.0  # untouched at and beyond the cut

    def test_short_distance_is_noop(self):
        native = 1.0 / 350.125e6
        v = np.ones(4000)
        m = np.ones(4000, dtype=bool)
        pl.remove_crosstalk(v, m, 3.0, native, 4, 400, 10)
        assert v.min() == 1.0
        assert m.all()


def test_ssa_before_threshold_rescues_weak_path():
    # A path ~9 dB above the noise mean fluctuates below theta in single
    # captures but its 9-capture average never does; thresholding first and
    # averaging second loses it in some captures. This pins the stage order.
    rng = np.random.default_rng(23)
    n_caps, n_bins = 45, 2000
    z = (rng.standard_normal((n_caps, n_bins))
         + 1j * rng.standard_normal((n_caps, n_bins))) / np.sqrt(2)
    amp = np.zeros(n_bins)
    amp[50] = 10 ** (9.5 / 20)  # 9.5 dB above the unit noise mean
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_caps, 1)))
    pdps = np.abs(amp[None, :] * phases + z) ** 2

    region = slice(1000, 2000)
    ssa = pl.small_scale_average(pdps, 9)
    mask_correct, _ = pl.threshold_noise(ssa, region, 7.0)
    assert mask_correct[:, 50].all()

    mask_per_capture, _ = pl.threshold_noise(pdps, region, 7.0)
    assert not mask_per_capture[:, 50].all()


@pytest.fixture(scope="module")
def plan():
    from cfmm import scene as sc
    scene = make_scene(waypoints=[
        sc.Waypoint("start", x=10.0, y=10.0, height=4.5),
        sc.Waypoint("drive", x=12.0, y=10.0),
    ])
    imp = sd.ImpairmentConfig()
    return sd.plan_campaign(scene, wf.WaveformSpec(), imp, seed=77)


class TestProcessCampaign:
    def test_matrix_shape_and_validity(self, plan):
        params = pl.PipelineParams()
        mat = pl.process_campaign(pl.PlanSource(plan), params)
        assert mat.values.shape == (41, 8, 4000)
        assert mat.values.dtype == np.float32
        mat.validate()
        assert np.isfinite(mat.noise_level_db).all()
        np.testing.assert_allclose(mat.threshold_db, mat.noise_level_db + 7.0)
        assert mat.bin_width_s == pytest.approx(2.856122813e-9 / 10, rel=1e-9)

    def test_chunk_size_does_not_change_output(self, plan):
        params = pl.PipelineParams()
        a = pl.process_campaign(pl.PlanSource(plan), params, chunk_size=7)
        b = pl.process_campaign(pl.PlanSource(plan), params, chunk_size=64)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.noise_level_db, b.noise_level_db)

    def test_strongest_ue_peak_matches_geometry(self, plan):
        mat = pl.process_campaign(pl.PlanSource(plan), pl.PipelineParams())
        m = 0
        j = int(plan.measured_power_dbm[m].argmax())
        d = np.linalg.norm(plan.positions[m] - plan.ue_positions[j])
        peak = int(mat.values[m, j].argmax())
        expect = d / 299792458.0 / mat.bin_width_s
        assert abs(peak - expect) <= 1.0
        assert mat.mask[m, j, peak]

    def test_pipeline_params_validation(self):
        with pytest.raises(ValueError):
            pl.PipelineParams(ssa_window=4).validate()
        with pytest.raises(ValueError):
            pl.PipelineParams(pad_factor=0).validate()
        with pytest.raises(ValueError):
            pl.PipelineParams(noise_region_native=(300, None)).validate()
        with pytest.raises(ValueError):
            pl.PipelineParams(kaiser_beta=-0.5).validate()
