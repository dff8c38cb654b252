"""Switched-array sounder emulation.

One capture records all eight UEs back to back (640 us per UE slot, ten
waveform repetitions each, 5.12 ms total) on a 100 ms trigger grid while
the AP drives. The receive front end applies a stepped AGC attenuator
shared by the whole capture, chosen from the strongest UE of the previous
capture; attenuation buys headroom at the price of noise figure.

Every capture is reproducible in isolation: its noise stream derives from
(campaign seed, capture index) only, so chunked and parallel synthesis
produce byte-identical records.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import channel as ch
from . import raypaths as rp
from .constants import THERMAL_NOISE_DBM_PER_HZ
from .scene import Scene, sample_ap_pose_arrays
from .waveform import WaveformSpec, generate_waveform

# Acquisition timing of one capture.
REPETITION_SPAN_S = 64e-6
REPETITIONS_PER_UE = 10
UE_SLOT_S = REPETITION_SPAN_S * REPETITIONS_PER_UE  # 640 us
CAPTURE_SPAN_S = UE_SLOT_S * 8  # 5.12 ms
CAPTURE_INTERVAL_S = 0.1

_POWER_FLOOR_MW = 1e-30


# --- AGC ---------------------------------------------------------------------

@dataclass(frozen=True)
class AGCConfig:
    attenuation_steps_db: tuple = (0.0, 10.0, 20.0, 30.0)
    target_output_window_dbm: tuple = (-45.0, -40.0)

    def validate(self) -> None:
        if list(self.attenuation_steps_db) != sorted(set(self.attenuation_steps_db)):
            raise ValueError("attenuation steps must be strictly increasing")
        lo, hi = self.target_output_window_dbm
        if not lo < hi:
            raise ValueError("target window must satisfy lo < hi")


@dataclass(frozen=True)
class AGCState:
    config: AGCConfig
    current_attenuation_db: float = 0.0
    governing_rule: str = "strongest-ue-previous-capture"


def agc_update(state: AGCState, strongest_input_dbm: float) -> AGCState:
    """Next AGC state given the strongest UE input power of a capture.

    Holds the current step while the attenuated output stays inside the
    target window; otherwise takes the smallest step that lands inside, or
    failing that the smallest step that keeps the output at or below the
    window top (full attenuation if even that fails).
    """
    lo, hi = state.config.target_output_window_dbm
    att = state.current_attenuation_db
    if lo <= strongest_input_dbm - att <= hi:
        return state
    for a in state.config.attenuation_steps_db:
        if lo <= strongest_input_dbm - a <= hi:
            return replace(state, current_attenuation_db=float(a))
    for a in state.config.attenuation_steps_db:
        if strongest_input_dbm - a <= hi:
            return replace(state, current_attenuation_db=float(a))
    return replace(state, current_attenuation_db=float(state.config.attenuation_steps_db[-1]))


def agc_attenuation_sequence(strongest_dbm: np.ndarray, config: AGCConfig) -> np.ndarray:
    """Attenuation per capture with the one-capture causal lag.

    Capture 0 uses its own power (the device converges before the run
    starts); capture m >= 1 reacts to the strongest UE of capture m - 1.
    """
    config.validate()
    m_total = strongest_dbm.shape[0]
    att = np.zeros(m_total)
    state = agc_update(AGCState(config=config), float(strongest_dbm[0]))
    att[0] = state.current_attenuation_db
    for m in range(1, m_total):
        state = agc_update(state, float(strongest_dbm[m - 1]))
        att[m] = state.current_attenuation_db
    return att


# --- impairments -------------------------------------------------------------

@dataclass(frozen=True)
class ChainRippleConfig:
    """Smooth random transmit/receive chain response over the band."""

    amplitude_db: float = 3.0
    phase_rad: float = np.pi / 4
    n_terms: int = 4
    seed: int = 7


def make_chain_response(n_subcarriers: int, cfg: ChainRippleConfig) -> np.ndarray:
    """Deterministic low-order Fourier ripple, never near zero."""
    rng = np.random.default_rng(cfg.seed)
    k = np.arange(n_subcarriers) / n_subcarriers
    amp = np.zeros(n_subcarriers)
    pha = np.zeros(n_subcarriers)
    for j in range(1, cfg.n_terms + 1):
        a, b, c, d = rng.uniform(-1.0, 1.0, 4)
        amp += (a * np.cos(2 * np.pi * j * k) + b * np.sin(2 * np.pi * j * k)) / j
        pha += (c * np.cos(2 * np.pi * j * k) + d * np.sin(2 * np.pi * j * k)) / j
    amp *= cfg.amplitude_db / max(np.abs(amp).max(), 1e-12)
    pha *= cfg.phase_rad / max(np.abs(pha).max(), 1e-12)
    return 10.0 ** (amp / 20.0) * np.exp(1j * pha)


@dataclass(frozen=True)
class ImpairmentConfig:
    tx_power_dbm: float = 42.0
    base_noise_figure_db: float = 5.0
    thermal_dbm_per_hz: float = THERMAL_NOISE_DBM_PER_HZ
    nf_penalty_per_att_db: float = 2.0 / 3.0
    nf_penalty_cap_db: float = 20.0
    agc: AGCConfig = field(default_factory=AGCConfig)
    crosstalk_coupling_db: float | None = -60.0
    chain: ChainRippleConfig = field(default_factory=ChainRippleConfig)
    n_repetitions: int = REPETITIONS_PER_UE
    store_repetitions: bool = False

    def noise_figure_db(self, attenuation_db: float) -> float:
        penalty = min(self.nf_penalty_per_att_db * attenuation_db, self.nf_penalty_cap_db)
        return self.base_noise_figure_db + penalty

    def noise_sigma2_mw(self, attenuation_db, spacing_hz: float) -> np.ndarray:
        """Input-referred noise variance per tone per repetition, in mW."""
        att = np.asarray(attenuation_db, dtype=float)
        penalty = np.minimum(self.nf_penalty_per_att_db * att, self.nf_penalty_cap_db)
        dbm = (
            self.thermal_dbm_per_hz
            + 10.0 * np.log10(spacing_hz)
            + self.base_noise_figure_db
            + penalty
        )
        return 10.0 ** (dbm / 10.0)


@dataclass
class CalRecord:
    """Back-to-back calibration: per-tone transmit amplitude times the chain
    response, with the reference comb already divided out."""

    response: np.ndarray  # complex128 (n_subcarriers,)
    kind: str = "back-to-back"

    def validate(self) -> None:
        if np.any(np.abs(self.response) == 0.0):
            raise ValueError("calibration response contains zero entries")


@dataclass
class CaptureRecord:
    capture_index: int
    timestamp_s: float
    ap_position: np.ndarray  # (3,)
    ap_heading_rad: float
    agc_attenuation_db: float
    noise_seed: int
    n_repetitions: int  # repetitions averaged at acquisition
    spectra: np.ndarray  # (n_ues, n_reps_stored, n_subcarriers) complex64
    measured_power_dbm: np.ndarray  # (n_ues,) noiseless antenna-port power

    @property
    def n_ues(self) -> int:
        return int(self.spectra.shape[0])


def inject_crosstalk(spectrum: np.ndarray, coupling_db: float | None,
                     reference: np.ndarray) -> np.ndarray:
    """Add transmitter leakage (a scaled copy of the reference, zero delay).

    coupling_db None (or -inf) returns the spectrum unchanged.
    """
    if coupling_db is None or coupling_db == -np.inf:
        return spectrum
    return spectrum + 10.0 ** (coupling_db / 20.0) * reference


def capture_output_power_dbm(record: CaptureRecord) -> np.ndarray:
    """Recorded (post-AGC) wideband power per UE, in dBm."""
    p = (np.abs(record.spectra.astype(np.complex128)) ** 2).sum(axis=-1).mean(axis=-1)
    return 10.0 * np.log10(np.maximum(p, _POWER_FLOOR_MW))


# --- campaign ---------------------------------------------------------------

@dataclass
class CampaignPlan:
    """Everything needed to synthesize any capture independently.

    Built by one deterministic pass: pose sampling, path tracing per UE,
    noiseless power evaluation and the sequential AGC pass. Spectra are not
    held here; synthesize_capture / synthesize_chunk generate them on
    demand from (seed, capture index).
    """

    scene: Scene
    site_id: str
    waveform: WaveformSpec
    impairments: ImpairmentConfig
    ray_config: rp.RaypathConfig
    seed: int
    positions: np.ndarray  # (M, 3)
    headings: np.ndarray  # (M,)
    timestamps: np.ndarray  # (M,)
    ue_positions: np.ndarray  # (U, 3)
    path_gains: list  # per UE: complex (K_j,)
    path_delays: list  # per UE: float (K_j,)
    row_splits: list  # per UE: int (M+1,)
    measured_power_dbm: np.ndarray  # (M, U)
    attenuation_db: np.ndarray  # (M,)
    cal: CalRecord
    reference_tones: np.ndarray  # complex (N,)
    chain: np.ndarray  # complex (N,)

    @property
    def n_captures(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_ues(self) -> int:
        return int(self.ue_positions.shape[0])

    @property
    def tx_tone_amplitude(self) -> float:
        p_mw = 10.0 ** (self.impairments.tx_power_dbm / 10.0)
        return float(np.sqrt(p_mw / self.waveform.n_subcarriers))

    def n_reps_stored(self) -> int:
        return self.impairments.n_repetitions if self.impairments.store_repetitions else 1


def plan_campaign(
    scene: Scene,
    waveform: WaveformSpec,
    impairments: ImpairmentConfig,
    seed: int,
    site=0,
    ray_config: rp.RaypathConfig | None = None,
    pose_slice: slice | None = None,
) -> CampaignPlan:
    """Trace the whole campaign and fix the AGC sequence.

    pose_slice trims the sampled trajectory (used by tests); the AGC pass
    always runs over the retained range only.
    """
    if ray_config is None:
        ray_config = rp.RaypathConfig()
    waveform.validate()
    ray_config.validate()
    impairments.agc.validate()
    positions, headings, timestamps = sample_ap_pose_arrays(scene.trajectory)
    if pose_slice is not None:
        positions = positions[pose_slice]
        headings = headings[pose_slice]
        timestamps = timestamps[pose_slice]
    ue_site = scene.site(site)
    m_total = positions.shape[0]

    _, reference = generate_waveform(waveform)
    chain = make_chain_response(waveform.n_subcarriers, impairments.chain)

    gains, delays, splits = [], [], []
    power_dbm = np.zeros((m_total, ue_site.positions_m.shape[0]))
    for j, ue in enumerate(ue_site.positions_m):
        bundle = rp.trace_paths_batch(scene, positions, headings, ue, ray_config)
        g = bundle.complex_gains()
        tau = bundle.delay_s
        rs = ch.row_splits_for_poses(bundle.pose_index, m_total)
        gains.append(g)
        delays.append(tau)
        splits.append(rs)
        mean_gain = ch.mean_tone_power(g, tau, rs, waveform)
        power_dbm[:, j] = impairments.tx_power_dbm + 10.0 * np.log10(
            np.maximum(mean_gain, _POWER_FLOOR_MW)
        )

    att = agc_attenuation_sequence(power_dbm.max(axis=1), impairments.agc)

    tx_amp = np.sqrt(10.0 ** (impairments.tx_power_dbm / 10.0) / waveform.n_subcarriers)
    cal = CalRecord(response=tx_amp * chain)
    cal.validate()

    return CampaignPlan(
        scene=scene, site_id=ue_site.site_id, waveform=waveform,
        impairments=impairments, ray_config=ray_config, seed=int(seed),
        positions=positions, headings=headings, timestamps=timestamps,
        ue_positions=ue_site.positions_m.copy(),
        path_gains=gains, path_delays=delays, row_splits=splits,
        measured_power_dbm=power_dbm, attenuation_db=att,
        cal=cal, reference_tones=reference.tones, chain=chain,
    )


def _capture_rng(seed: int, capture_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(capture_index,)))


def synthesize_chunk(plan: CampaignPlan, m0: int, m1: int,
                     include_noise: bool = True) -> np.ndarray:
    """Recorded spectra for captures [m0, m1), shape (m, U, R_stored, N).

    The raw recording is g * (signal + noise) with g the AGC attenuator
    gain; the transmit leakage rides on the signal ahead of the attenuator,
    so its calibrated level does not move with AGC steps.
    """
    wf_spec = plan.waveform
    n = wf_spec.n_subcarriers
    n_ue = plan.n_ues
    imp = plan.impairments
    r_stored = plan.n_reps_stored()
    m_chunk = m1 - m0
    offsets = wf_spec.tone_offsets_hz()

    tx_front = plan.tx_tone_amplitude * plan.reference_tones * plan.chain  # (N,)
    out = np.empty((m_chunk, n_ue, r_stored, n), dtype=np.complex64)

    h_rows = np.zeros((m_chunk, n), dtype=np.complex128)
    signal = np.zeros((m_chunk, n_ue, n), dtype=np.complex128)
    for j in range(n_ue):
        sub_splits = plan.row_splits[j][m0:m1 + 1] - plan.row_splits[j][m0]
        base = plan.row_splits[j][m0]
        ch.synthesize_rows(
            plan.path_gains[j][base:base + sub_splits[-1]],
            plan.path_delays[j][base:base + sub_splits[-1]],
            sub_splits, offsets, out=h_rows,
        )
        sig = inject_crosstalk(h_rows, imp.crosstalk_coupling_db,
                               np.ones(n)) * tx_front
        signal[:, j, :] = sig

    g_lin = 10.0 ** (-plan.attenuation_db[m0:m1] / 20.0)
    sigma2 = imp.noise_sigma2_mw(plan.attenuation_db[m0:m1], wf_spec.subcarrier_spacing_hz)
    if not imp.store_repetitions:
        sigma2 = sigma2 / imp.n_repetitions  # variance of the repetition mean

    for i in range(m_chunk):
        if include_noise:
            rng = _capture_rng(plan.seed, m0 + i)
            z = rng.standard_normal((n_ue, r_stored, n, 2))
            noise = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(sigma2[i] / 2.0)
        else:
            noise = 0.0
        out[i] = (g_lin[i] * (signal[i][:, None, :] + noise)).astype(np.complex64)
    return out


def synthesize_capture(plan: CampaignPlan, m: int, include_noise: bool = True) -> CaptureRecord:
    spectra = synthesize_chunk(plan, m, m + 1, include_noise=include_noise)[0]
    return CaptureRecord(
        capture_index=m,
        timestamp_s=float(plan.timestamps[m]),
        ap_position=plan.positions[m].copy(),
        ap_heading_rad=float(plan.headings[m]),
        agc_attenuation_db=float(plan.attenuation_db[m]),
        noise_seed=m,
        n_repetitions=plan.impairments.n_repetitions,
        spectra=spectra,
        measured_power_dbm=plan.measured_power_dbm[m].copy(),
    )


def run_campaign(
    scene: Scene,
    waveform: WaveformSpec,
    impairments: ImpairmentConfig,
    seed: int,
    site=0,
    ray_config: rp.RaypathConfig | None = None,
) -> tuple[CalRecord, Iterator[CaptureRecord]]:
    """Plan a campaign and stream its capture records in pose order."""
    plan = plan_campaign(scene, waveform, impairments, seed, site=site, ray_config=ray_config)

    def records() -> Iterator[CaptureRecord]:
        for m in range(plan.n_captures):
            yield synthesize_capture(plan, m)

    return plan.cal, records()
