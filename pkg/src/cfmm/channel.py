"""Frequency-domain channel synthesis from enumerated ray paths.

A channel is the coherent sum of its paths across the sounding comb:
H(f_k) = sum_p a_p exp(-j 2 pi (f_k - f_c) tau_p), with a_p the complex
path gain referenced to the band centre f_c. Delays are not quantised to
the grid; the PDP stage sees the same spectral leakage a real capture
would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raypaths import PathBundle, PropagationPath
from .waveform import WaveformSpec


@dataclass
class TransferFunction:
    values: np.ndarray  # complex, (n_subcarriers,)
    band_center_hz: float
    subcarrier_spacing_hz: float

    @property
    def n_subcarriers(self) -> int:
        return int(self.values.shape[-1])


def synthesize_transfer_function(
    paths: list[PropagationPath] | PathBundle,
    spec: WaveformSpec,
    band_center_hz: float = 3.5e9,
) -> TransferFunction:
    """Transfer function of one AP-UE link over the sounding comb."""
    offsets = spec.tone_offsets_hz()
    if isinstance(paths, PathBundle):
        gains = paths.complex_gains()
        delays = paths.delay_s
    else:
        gains = np.array([p.complex_gain for p in paths], dtype=complex)
        delays = np.array([p.delay_s for p in paths], dtype=float)
    if gains.size == 0:
        values = np.zeros(spec.n_subcarriers, dtype=complex)
    else:
        values = phasor_matrix(offsets, delays) @ gains
    return TransferFunction(
        values=values,
        band_center_hz=band_center_hz,
        subcarrier_spacing_hz=spec.subcarrier_spacing_hz,
    )


def phasor_matrix(offsets_hz: np.ndarray, delays_s: np.ndarray) -> np.ndarray:
    """exp(-j 2 pi f_offset tau) table, shape (n_tones, n_paths)."""
    return np.exp(-2j * np.pi * np.outer(offsets_hz, delays_s))


def synthesize_rows(
    gains: np.ndarray,
    delays: np.ndarray,
    row_splits: np.ndarray,
    offsets_hz: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Synthesize many channels at once from flat path arrays.

    Row r sums paths gains[row_splits[r]:row_splits[r+1]]. Returns
    (n_rows, n_tones) complex128. This is the campaign hot loop: paths per
    row are few, so the work is dominated by the per-path phasor outer
    products, done here in one matrix multiply per row block.
    """
    n_rows = row_splits.size - 1
    n_tones = offsets_hz.size
    if out is None:
        out = np.zeros((n_rows, n_tones), dtype=np.complex128)
    else:
        out[:] = 0.0
    counts = np.diff(row_splits)
    if counts.size == 0 or gains.size == 0:
        return out
    # Group rows by path count, then accumulate one path slot at a time so
    # the largest temporary is a single (rows, n_tones) array.
    order = np.argsort(counts, kind="stable")
    sorted_counts = counts[order]
    boundaries = np.nonzero(np.diff(sorted_counts))[0] + 1
    for grp in np.split(order, boundaries):
        c = int(counts[grp[0]])
        if c == 0:
            continue
        starts = row_splits[grp]
        for i in range(c):
            g = gains[starts + i]
            tau = delays[starts + i]
            out[grp] += g[:, None] * np.exp(
                (-2j * np.pi) * tau[:, None] * offsets_hz[None, :]
            )
    return out


def mean_tone_power(gains: np.ndarray, delays: np.ndarray, row_splits: np.ndarray,
                    spec: WaveformSpec) -> np.ndarray:
    """Mean of |H_k|^2 over the comb for each row, computed analytically.

    Cross terms use the Dirichlet kernel D(dt) = mean_k exp(-j2pi f_k dt),
    which for the centred comb is sin(N pi df dt) / (N sin(pi df dt)). This
    matches synthesizing H and averaging |H|^2 to machine precision and is
    what the AGC pass uses, so attenuation decisions never require the full
    synthesis."""
    n = spec.n_subcarriers
    df = spec.subcarrier_spacing_hz
    n_rows = row_splits.size - 1
    power = np.zeros(n_rows)
    counts = np.diff(row_splits)
    order = np.argsort(counts, kind="stable")
    sorted_counts = counts[order]
    boundaries = np.nonzero(np.diff(sorted_counts))[0] + 1
    for grp in np.split(order, boundaries):
        c = int(counts[grp[0]])
        if c == 0:
            continue
        pid = row_splits[grp][:, None] + np.arange(c)[None, :]
        g = gains[pid]
        tau = delays[pid]
        dt = tau[:, :, None] - tau[:, None, :]
        x = np.pi * df * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            dirich = np.sin(n * x) / (n * np.sin(x))
        dirich = np.where(np.abs(x) < 1e-30, 1.0, dirich)
        cross = np.einsum("rp,rq,rpq->r", g, g.conj(), dirich)
        power[grp] = cross.real
    return power


def row_splits_for_poses(pose_index: np.ndarray, n_poses: int) -> np.ndarray:
    """CSR-style row offsets for a pose-sorted path array."""
    return np.searchsorted(pose_index, np.arange(n_poses + 1))
