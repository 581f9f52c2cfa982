"""ECG conditioning: baseline removal, band-pass filtering, R-peak
detection, and fixed-width segmentation around detected beats.

The filter is a Butterworth band-pass realized as second-order sections
and applied forward-backward, so beat timing survives filtering. Peak
detection is deliberately simple: local maxima above a threshold set
relative to the global maximum, thinned by a minimum-distance rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

__all__ = [
    "TimeSeries", "BaselineSpec", "BandpassSpec", "FilterCoefficients",
    "PeakList", "Segment", "SegmentationResult",
    "remove_baseline", "design_bandpass", "apply_filter",
    "detect_r_peaks", "segment_around_peaks", "default_min_distance",
]


@dataclass(frozen=True)
class TimeSeries:
    """A uniformly sampled real-valued signal.

    Amplitudes are in whatever units the recording device produced;
    nothing downstream depends on absolute scale.
    """

    samples: np.ndarray
    sampling_rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("TimeSeries: samples must be a non-empty 1-d array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("TimeSeries: non-finite samples rejected at ingestion")
        if not self.sampling_rate_hz > 0:
            raise ValueError(f"TimeSeries: sampling_rate_hz must be positive, "
                             f"got {self.sampling_rate_hz}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sampling_rate_hz


@dataclass(frozen=True)
class BaselineSpec:
    """Baseline estimation window.

    The baseline is the mean over the first window_s seconds (the
    pre-stimulus stretch of a recording). drop_window controls whether
    those samples are removed from the output or kept; they are kept by
    default.
    """

    window_s: float = 5.0
    drop_window: bool = False

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError(f"BaselineSpec: window_s must be positive, "
                             f"got {self.window_s}")


@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth band-pass description.

    order counts the analog low-pass prototype by default; the band
    transformation then doubles the discrete order. Set
    order_convention="total" to read it as the final discrete order
    instead (so order=2 yields a single biquad).
    """

    order: int = 2
    low_hz: float = 0.5
    high_hz: float = 15.0
    order_convention: str = "prototype"

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"BandpassSpec: order must be >= 1, got {self.order}")
        if not 0 < self.low_hz < self.high_hz:
            raise ValueError(f"BandpassSpec: need 0 < low_hz < high_hz, got "
                             f"({self.low_hz}, {self.high_hz})")
        if self.order_convention not in ("prototype", "total"):
            raise ValueError(f"BandpassSpec: unknown order_convention "
                             f"'{self.order_convention}'")
        if self.order_convention == "total" and self.order % 2:
            raise ValueError("BandpassSpec: total order of a band-pass is even")


@dataclass(frozen=True)
class FilterCoefficients:
    """Cascade of normalized second-order sections (a0 == 1)."""

    sos: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.sos, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise ValueError("FilterCoefficients: expected an (n, 6) sos array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("FilterCoefficients: non-finite coefficients")
        for b0, b1, b2, a0, a1, a2 in arr:
            if a0 != 1.0:
                raise ValueError("FilterCoefficients: sections must be normalized")
            poles = np.roots([1.0, a1, a2])
            if np.any(np.abs(poles) >= 1.0):
                raise ValueError("FilterCoefficients: unstable section "
                                 f"(pole magnitude {np.abs(poles).max():.6f})")
        object.__setattr__(self, "sos", arr)

    @property
    def sections(self):
        """(b0, b1, b2, a1, a2) per section, a0 normalized away."""
        return [tuple(row[[0, 1, 2, 4, 5]]) for row in self.sos]


@dataclass(frozen=True)
class PeakList:
    """Strictly increasing sample indices of detected R peaks."""

    indices: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if arr.size and (np.any(arr < 0) or np.any(np.diff(arr) <= 0)):
            raise ValueError("PeakList: indices must be non-negative and "
                             "strictly increasing")
        object.__setattr__(self, "indices", arr)

    def __len__(self):
        return self.indices.size


@dataclass(frozen=True)
class Segment:
    """A fixed-width window of samples centered on one R peak."""

    samples: np.ndarray
    center_index: int

    def __post_init__(self):
        object.__setattr__(self, "samples",
                           np.asarray(self.samples, dtype=np.float64))


@dataclass(frozen=True)
class SegmentationResult:
    """Segments plus the peaks that fell too close to a boundary."""

    segments: list = field(default_factory=list)
    skipped: list = field(default_factory=list)   # peak indices, not segments

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def n_skipped(self):
        return len(self.skipped)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def remove_baseline(ts: TimeSeries, spec: BaselineSpec = BaselineSpec()) -> TimeSeries:
    """Subtract the mean of the leading window from the whole signal.

    The window length in samples is floor(window_s * fs). If
    spec.drop_window is set, the window itself is removed from the
    output after subtraction.
    """
    n_window = int(np.floor(spec.window_s * ts.sampling_rate_hz))
    if n_window < 1:
        raise ValueError(f"remove_baseline: window of {spec.window_s} s spans "
                         f"no samples at {ts.sampling_rate_hz} Hz")
    if n_window > len(ts):
        raise ValueError(f"remove_baseline: window of {n_window} samples exceeds "
                         f"signal length {len(ts)}")
    baseline = ts.samples[:n_window].mean()
    out = ts.samples - baseline
    if spec.drop_window:
        if n_window == len(ts):
            raise ValueError("remove_baseline: dropping the window would leave "
                             "an empty signal")
        out = out[n_window:]
    return TimeSeries(out, ts.sampling_rate_hz)


def design_bandpass(spec: BandpassSpec, fs_hz: float) -> FilterCoefficients:
    """Design the discrete Butterworth band-pass for a sampling rate.

    The analog prototype is mapped through the band transformation and
    the bilinear transform with pre-warped edge frequencies, so the
    magnitude response crosses -3 dB exactly at low_hz and high_hz.
    """
    nyquist = fs_hz / 2.0
    if not spec.high_hz < nyquist:
        raise ValueError(f"design_bandpass: high cutoff {spec.high_hz} Hz must "
                         f"stay below Nyquist {nyquist} Hz")
    n_proto = spec.order if spec.order_convention == "prototype" else spec.order // 2
    sos = sps.butter(n_proto, [spec.low_hz, spec.high_hz], btype="bandpass",
                     fs=fs_hz, output="sos")
    return FilterCoefficients(sos)


def apply_filter(ts: TimeSeries, coeffs: FilterCoefficients) -> TimeSeries:
    """Zero-phase (forward-backward) filtering.

    Running the cascade in both directions squares the magnitude
    response and cancels the phase, so peak positions do not shift.
    """
    pad = 3 * (2 * coeffs.sos.shape[0] + 1)
    if len(ts) <= pad:
        raise ValueError(f"apply_filter: signal of {len(ts)} samples is too "
                         f"short for edge padding ({pad} samples)")
    out = sps.sosfiltfilt(coeffs.sos, ts.samples)
    return TimeSeries(out, ts.sampling_rate_hz)


def default_min_distance(fs_hz: float) -> int:
    """Refractory spacing between peaks: 0.4 s, about a 150 bpm ceiling."""
    return max(1, int(round(0.4 * fs_hz)))


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; a plateau counts once, leftmost.

    A position qualifies when the last step into it rises and the next
    nonzero step after it falls. Endpoints never qualify.
    """
    d = np.diff(x)
    s = np.sign(d)
    # backward-fill zeros with the next nonzero step so plateau interiors
    # inherit the eventual direction; trailing plateaus stay 0
    filled = s.copy()
    idx = np.arange(s.size)
    rev = filled[::-1]
    nz = np.where(rev != 0, idx, -1)
    np.maximum.accumulate(nz, out=nz)
    rev_filled = np.where(nz >= 0, rev[np.clip(nz, 0, None)], 0.0)
    filled = rev_filled[::-1]
    cand = np.flatnonzero((s[:-1] > 0) & (filled[1:] < 0)) + 1
    return cand


def detect_r_peaks(ts: TimeSeries, relative_threshold: float = 0.5,
                   min_distance_samples: int | None = None) -> PeakList:
    """Locate R peaks by thresholded local maxima.

    Parameters
    ----------
    ts : TimeSeries
        Filtered ECG; detection assumes upright R waves.
    relative_threshold : float
        Candidates must reach this fraction of the global maximum
        (0.5 keeps peaks at half the tallest amplitude or more).
    min_distance_samples : int, optional
        Minimum spacing between kept peaks; on a conflict the taller
        peak wins. Defaults to round(0.4 * fs).

    Returns
    -------
    PeakList
        An all-constant signal yields an empty list, never an error.
    """
    if not 0 < relative_threshold <= 1:
        raise ValueError(f"detect_r_peaks: relative_threshold must lie in "
                         f"(0, 1], got {relative_threshold}")
    if min_distance_samples is None:
        min_distance_samples = default_min_distance(ts.sampling_rate_hz)
    if min_distance_samples < 1:
        raise ValueError("detect_r_peaks: min_distance_samples must be >= 1")

    x = ts.samples
    cand = _local_maxima(x)
    if cand.size == 0:
        return PeakList(np.empty(0, dtype=np.int64))
    cand = cand[x[cand] >= relative_threshold * x.max()]
    if cand.size == 0:
        return PeakList(np.empty(0, dtype=np.int64))

    # taller peaks claim their neighborhood first; index breaks ties
    order = sorted(range(cand.size), key=lambda k: (-x[cand[k]], cand[k]))
    kept: list[int] = []
    for k in order:
        i = int(cand[k])
        if all(abs(i - j) >= min_distance_samples for j in kept):
            kept.append(i)
    return PeakList(np.array(sorted(kept), dtype=np.int64))


def segment_around_peaks(ts: TimeSeries, peaks: PeakList, left: int = 100,
                         right: int = 100) -> SegmentationResult:
    """Cut a [peak-left, peak+right) window around each peak.

    Peaks too close to either end to supply a full window are skipped
    and reported, never padded: padding would fabricate signal content.
    """
    if left < 1 or right < 1:
        raise ValueError("segment_around_peaks: left and right must be >= 1")
    n = len(ts)
    segments, skipped = [], []
    for i in peaks.indices:
        i = int(i)
        if i - left < 0 or i + right > n:
            skipped.append(i)
            continue
        segments.append(Segment(ts.samples[i - left:i + right].copy(), i))
    return SegmentationResult(segments=segments, skipped=skipped)
