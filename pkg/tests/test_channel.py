import numpy as np
import pytest

from cfmm import channel as ch
from cfmm import raypaths as rp
from cfmm import waveform as wf
from cfmm.constants import SPEED_OF_LIGHT


def path(length_m, gain_db=0.0, phase=0.0):
    return rp.PropagationPath(
        kind="direct",
        ap_position=np.zeros(3),
        ue_position=np.array([length_m, 0.0, 0.0]),
        interaction_points=[],
        geometric_length_m=length_m,
        loss_terms=[],
        complex_gain=10 ** (gain_db / 20) * np.exp(1j * phase),
    )


SPEC = wf.WaveformSpec()


def test_single_path_flat_magnitude_and_phase_slope():
    tau = 500e-9
    h = ch.synthesize_transfer_function([path(tau * SPEED_OF_LIGHT, -80.0)], SPEC)
    assert h.values.shape == (2801,)
    np.testing.assert_allclose(np.abs(h.values), 1e-4, rtol=1e-12)
    # Phase advances by -2 pi df tau per subcarrier.
    dphi = np.angle(h.values[1:] / h.values[:-1])
    np.testing.assert_allclose(dphi, -2 * np.pi * 125e3 * tau, atol=1e-9)
    # Centre tone carries the path's own phase (referenced to band centre).
    centre = h.values[1400]
    assert np.angle(centre) == pytest.approx(0.0, abs=1e-9)


def test_two_path_ripple_closed_form():
    # Equal-gain two-path channel: |H(f)| = 2 |cos(pi f dt)| up to a common
    # delay factor that has unit magnitude.
    tau1, tau2 = 100e-9, 300e-9
    h = ch.synthesize_transfer_function(
        [path(tau1 * SPEED_OF_LIGHT), path(tau2 * SPEED_OF_LIGHT)], SPEC
    )
    f = SPEC.tone_offsets_hz()
    dt = tau2 - tau1
    np.testing.assert_allclose(np.abs(h.values), 2 * np.abs(np.cos(np.pi * f * dt)), atol=1e-9)


def test_zero_paths_zero_channel():
    h = ch.synthesize_transfer_function([], SPEC)
    assert np.all(h.values == 0)


def test_linearity():
    p1, p2 = path(30.0, -60.0), path(90.0, -70.0, 1.0)
    h1 = ch.synthesize_transfer_function([p1], SPEC).values
    h2 = ch.synthesize_transfer_function([p2], SPEC).values
    h12 = ch.synthesize_transfer_function([p1, p2], SPEC).values
    np.testing.assert_allclose(h12, h1 + h2, atol=1e-18)


def test_energy_orthogonality_on_grid():
    # Paths spaced by whole native bins are orthogonal over the comb:
    # total energy is the sum of per-path energies.
    native = 1.0 / SPEC.bandwidth_hz
    taus = np.array([100, 200, 350]) * native
    paths = [path(t * SPEED_OF_LIGHT, -80.0) for t in taus]
    h = ch.synthesize_transfer_function(paths, SPEC).values
    energy = np.sum(np.abs(h) ** 2)
    assert energy == pytest.approx(3 * 2801 * 1e-8, rel=1e-9)


def test_synthesize_rows_matches_single_calls():
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 7, 30)
    splits = np.concatenate([[0], np.cumsum(counts)])
    k = int(splits[-1])
    gains = rng.normal(size=k) + 1j * rng.normal(size=k)
    delays = rng.uniform(0, 7e-6, k)
    offs = SPEC.tone_offsets_hz()
    rows = ch.synthesize_rows(gains, delays, splits, offs)
    for r in range(30):
        sl = slice(splits[r], splits[r + 1])
        ref = ch.phasor_matrix(offs, delays[sl]) @ gains[sl] if counts[r] else np.zeros(2801)
        np.testing.assert_allclose(rows[r], ref, atol=1e-12)


def test_mean_tone_power_matches_synthesis():
    rng = np.random.default_rng(2)
    counts = rng.integers(0, 9, 40)
    splits = np.concatenate([[0], np.cumsum(counts)])
    k = int(splits[-1])
    gains = (rng.normal(size=k) + 1j * rng.normal(size=k)) * 10 ** rng.uniform(-6, -3, k)
    delays = rng.uniform(0, 7e-6, k)
    rows = ch.synthesize_rows(gains, delays, splits, SPEC.tone_offsets_hz())
    p_syn = (np.abs(rows) ** 2).mean(axis=1)
    p_ana = ch.mean_tone_power(gains, delays, splits, SPEC)
    np.testing.assert_allclose(p_ana, p_syn, rtol=1e-12, atol=1e-300)


def test_row_splits_for_poses():
    pose_index = np.array([0, 0, 2, 2, 2, 5])
    splits = ch.row_splits_for_poses(pose_index, 6)
    np.testing.assert_array_equal(splits, [0, 2, 2, 5, 5, 5, 6])
