"""Time-frequency analysis: complex Morlet scalograms and Welch PSD.

The scalogram is a bank of band-pass responses. Each row is the
magnitude of the convolution of the signal with one scaled complex
Morlet (Gabor) wavelet; scales are log-spaced so their pseudo-
frequencies tile an analysis band. Convolution runs through the FFT;
a direct-convolution oracle lives in the test suite.

Welch estimation delegates to scipy but pins the knobs that matter
here: symmetric Hann taper, no detrending, one-sided density scaling
(so summed power times bin width recovers the variance of a zero-mean
signal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signal_core import TimeSeries

__all__ = [
    "MorletSpec", "Scalogram", "WelchSpec", "PsdEstimate",
    "cwt_morlet", "welch_psd", "morlet_kernel",
]

# wavelet support is truncated at this many envelope standard deviations
KERNEL_TRUNC_STDS = 5.0
# columns closer than this many scales to an edge are flagged edge-affected
COI_SCALES = 2.0


@dataclass(frozen=True)
class MorletSpec:
    """Scale-bank description for the Morlet transform.

    center_frequency_cycles is the dimensionless wavelet center
    frequency in cycles per envelope standard deviation (omega0 / 2pi).
    The default of 1.0 puts one full cycle under the Gaussian envelope;
    set 6 / (2 pi) for the widely used omega0 = 6 variant.
    """

    num_scales: int = 50
    center_frequency_cycles: float = 1.0
    freq_min_hz: float = 0.5
    freq_max_hz: float = 20.0

    def __post_init__(self):
        if self.num_scales < 2:
            raise ValueError(f"MorletSpec: num_scales must be >= 2, "
                             f"got {self.num_scales}")
        if not self.center_frequency_cycles > 0:
            raise ValueError("MorletSpec: center_frequency_cycles must be positive")
        if not 0 < self.freq_min_hz < self.freq_max_hz:
            raise ValueError(f"MorletSpec: need 0 < freq_min_hz < freq_max_hz, "
                             f"got ({self.freq_min_hz}, {self.freq_max_hz})")


@dataclass(frozen=True)
class Scalogram:
    """Rows of wavelet response magnitude, highest frequency first.

    coi_samples[k] is the per-row cone of influence: columns closer
    than that to either signal edge are contaminated by zero padding.
    """

    magnitudes: np.ndarray
    scale_frequencies_hz: np.ndarray
    coi_samples: np.ndarray
    source_id: str | None = None

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        freqs = np.asarray(self.scale_frequencies_hz, dtype=np.float64)
        if mags.ndim != 2 or mags.shape[0] != freqs.size:
            raise ValueError("Scalogram: magnitudes must be [num_scales x n] "
                             "with one frequency per row")
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise ValueError("Scalogram: magnitudes must be finite and >= 0")
        if np.any(np.diff(freqs) >= 0):
            raise ValueError("Scalogram: rows must be ordered by descending "
                             "frequency")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "scale_frequencies_hz", freqs)
        object.__setattr__(self, "coi_samples",
                           np.asarray(self.coi_samples, dtype=np.int64))


@dataclass(frozen=True)
class WelchSpec:
    segment_length: int = 256
    overlap_fraction: float = 0.5
    window: str = "hann"

    def __post_init__(self):
        if self.segment_length < 2:
            raise ValueError(f"WelchSpec: segment_length must be >= 2, "
                             f"got {self.segment_length}")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError(f"WelchSpec: overlap_fraction must lie in [0, 1), "
                             f"got {self.overlap_fraction}")


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided power spectral density in amplitude^2 per Hz."""

    frequencies_hz: np.ndarray
    power: np.ndarray
    source_id: str | None = None

    def __post_init__(self):
        f = np.asarray(self.frequencies_hz, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        if f.shape != p.shape or f.ndim != 1:
            raise ValueError("PsdEstimate: frequencies and power must be "
                             "1-d and equally long")
        if np.any(np.diff(f) <= 0):
            raise ValueError("PsdEstimate: frequencies must increase")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("PsdEstimate: power must be finite and >= 0")
        object.__setattr__(self, "frequencies_hz", f)
        object.__setattr__(self, "power", p)


def morlet_kernel(scale_s: float, fs_hz: float,
                  center_frequency_cycles: float = 1.0) -> np.ndarray:
    """Sampled scaled complex Morlet, psi_s(t) on a symmetric grid.

    psi(t) = pi^(-1/4) exp(i omega0 t) exp(-t^2 / 2), dilated by the
    scale with 1/sqrt(s) energy normalization and truncated at
    KERNEL_TRUNC_STDS envelope standard deviations.
    """
    half = int(np.ceil(KERNEL_TRUNC_STDS * scale_s * fs_hz))
    t = np.arange(-half, half + 1) / fs_hz
    u = t / scale_s
    omega0 = 2.0 * np.pi * center_frequency_cycles
    envelope = np.exp(-0.5 * u * u)
    return (np.pi ** -0.25) / np.sqrt(scale_s) * np.exp(1j * omega0 * u) * envelope


def cwt_morlet(ts: TimeSeries, spec: MorletSpec = MorletSpec(),
               source_id: str | None = None) -> Scalogram:
    """Continuous wavelet transform magnitude over a log-spaced scale bank.

    Row k holds |<x, psi_{s_k}(. - tau)>| for every sample position tau,
    approximating the continuous inner product with a Riemann sum (the
    conjugate-symmetric Morlet turns correlation into plain convolution).
    The signal is zero-padded; coi_samples reports the per-row margin
    within which that padding is felt.
    """
    if len(ts) < 8:
        raise ValueError(f"cwt_morlet: need at least 8 samples, got {len(ts)}")
    nyquist = ts.sampling_rate_hz / 2.0
    if spec.freq_max_hz > nyquist:
        raise ValueError(f"cwt_morlet: freq_max_hz {spec.freq_max_hz} exceeds "
                         f"Nyquist {nyquist}")

    freqs = np.geomspace(spec.freq_max_hz, spec.freq_min_hz, spec.num_scales)
    scales = spec.center_frequency_cycles / freqs          # seconds
    dt = 1.0 / ts.sampling_rate_hz
    x = ts.samples
    mags = np.empty((spec.num_scales, x.size))
    coi = np.empty(spec.num_scales, dtype=np.int64)
    for k, s in enumerate(scales):
        kernel = morlet_kernel(s, ts.sampling_rate_hz,
                               spec.center_frequency_cycles)
        row = sps.fftconvolve(x, kernel, mode="same") * dt
        mags[k] = np.abs(row)
        coi[k] = int(np.ceil(COI_SCALES * s * ts.sampling_rate_hz))
    return Scalogram(mags, freqs, coi, source_id=source_id)


def welch_psd(ts: TimeSeries, spec: WelchSpec = WelchSpec(),
              source_id: str | None = None) -> PsdEstimate:
    """Averaged-periodogram PSD over overlapping tapered segments.

    The taper is built symmetric, which makes the estimate exactly
    invariant under time reversal whenever the hop tiles the signal.
    """
    if spec.segment_length > len(ts):
        raise ValueError(f"welch_psd: segment_length {spec.segment_length} "
                         f"exceeds signal length {len(ts)}")
    taper = sps.get_window(spec.window, spec.segment_length, fftbins=False)
    noverlap = int(spec.segment_length * spec.overlap_fraction)
    freqs, power = sps.welch(ts.samples, fs=ts.sampling_rate_hz, window=taper,
                             nperseg=spec.segment_length, noverlap=noverlap,
                             detrend=False, scaling="density",
                             return_onesided=True)
    return PsdEstimate(freqs, power, source_id=source_id)
