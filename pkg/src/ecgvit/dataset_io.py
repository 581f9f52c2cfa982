"""Recording ingestion, synthetic ECG generation, and dataset splits.

Recordings arrive through a manifest CSV that names one signal file per
row along with subject, session, sampling rate, and labels. Signal
files are deliberately primitive: single-column CSV (one amplitude per
line) or raw little-endian float64, chosen by extension. The manifest
is validated in full before any signal is read.

The synthetic generator plants Gaussian-bump beats at heart-rate
spacing over sinusoidal baseline wander and white noise, and returns
the planted beat indices so detector accuracy can be scored against
ground truth instead of eyeballed.

Real corpora are not bundled; the README describes how to convert a
downloaded dataset into this manifest schema.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields

import numpy as np

from .signal_core import TimeSeries
from .training_eval import binarize_labels

__all__ = [
    "ManifestError", "SignalFormatError",
    "ManifestRow", "SyntheticEcgSpec",
    "read_manifest", "write_manifest",
    "load_recording", "write_signal",
    "generate_synthetic_ecg", "default_class_label", "make_split",
]

SIGNAL_EXTENSIONS = (".csv", ".f64")


class ManifestError(ValueError):
    """Manifest row violates the schema or contradicts a signal file."""


class SignalFormatError(ValueError):
    """Signal file content cannot be parsed into a finite series."""


@dataclass(frozen=True)
class ManifestRow:
    signal_path: str
    subject_id: str
    session: str
    sampling_rate_hz: float
    rating_valence: float
    rating_arousal: float
    rating_scale_max: float = 9.0
    rating_dominance: float | None = None
    label_emotion: int | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if not self.signal_path:
            raise ManifestError("manifest row: empty signal_path")
        ext = os.path.splitext(self.signal_path)[1].lower()
        if ext not in SIGNAL_EXTENSIONS:
            raise ManifestError(f"manifest row: unsupported signal extension "
                                f"'{ext}' (expected one of "
                                f"{SIGNAL_EXTENSIONS})")
        if self.sampling_rate_hz <= 0:
            raise ManifestError(f"manifest row: sampling_rate_hz must be "
                                f"positive, got {self.sampling_rate_hz}")
        if self.rating_scale_max <= 1:
            raise ManifestError("manifest row: rating_scale_max must "
                                "exceed 1")
        for name in ("rating_valence", "rating_arousal", "rating_dominance"):
            value = getattr(self, name)
            if value is None:
                continue
            if not 1.0 <= value <= self.rating_scale_max:
                raise ManifestError(
                    f"manifest row: {name} {value} outside "
                    f"[1, {self.rating_scale_max}]")
        if self.label_emotion is not None \
                and not 0 <= self.label_emotion < 7:
            raise ManifestError(f"manifest row: label_emotion "
                                f"{self.label_emotion} outside 0..6")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ManifestError("manifest row: duration_s must be positive")


MANIFEST_COLUMNS = tuple(f.name for f in fields(ManifestRow))
_FLOAT_FIELDS = {"sampling_rate_hz", "rating_valence", "rating_arousal",
                 "rating_scale_max", "rating_dominance", "duration_s"}
_OPTIONAL_FIELDS = {"rating_dominance", "label_emotion", "duration_s"}


def read_manifest(path) -> list[ManifestRow]:
    """Parse and validate a manifest CSV; no signal file is touched."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty manifest")
        unknown = set(reader.fieldnames) - set(MANIFEST_COLUMNS)
        if unknown:
            raise ManifestError(f"{path}: unknown manifest columns "
                                f"{sorted(unknown)}")
        for lineno, record in enumerate(reader, start=2):
            kwargs = {}
            for key, raw in record.items():
                if raw is None or raw == "":
                    if key in _OPTIONAL_FIELDS:
                        continue
                    raise ManifestError(f"{path}:{lineno}: missing value "
                                        f"for '{key}'")
                try:
                    if key in _FLOAT_FIELDS:
                        kwargs[key] = float(raw)
                    elif key == "label_emotion":
                        kwargs[key] = int(raw)
                    else:
                        kwargs[key] = raw
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: cannot parse "
                                        f"'{raw}' for '{key}'") from None
            try:
                rows.append(ManifestRow(**kwargs))
            except TypeError:
                missing = {"signal_path", "subject_id", "session",
                           "sampling_rate_hz", "rating_valence",
                           "rating_arousal"} - set(kwargs)
                raise ManifestError(f"{path}:{lineno}: missing columns "
                                    f"{sorted(missing)}") from None
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ManifestError(f"{path}: manifest has no data rows")
    return rows


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            writer.writerow([
                "" if getattr(row, name) is None else getattr(row, name)
                for name in MANIFEST_COLUMNS
            ])


# ---------------------------------------------------------------------------
# signal files
# ---------------------------------------------------------------------------

def _read_signal_csv(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise SignalFormatError(
                    f"{path}:{lineno}: non-numeric row '{text}'") from None
    return np.asarray(values, dtype=np.float64)


def _read_signal_f64(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8")


def load_recording(row: ManifestRow, base_dir=None):
    """Signal for one manifest row, as (TimeSeries, row).

    Relative signal paths resolve against base_dir (normally the
    manifest's own directory).
    """
    path = row.signal_path
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"signal file not found: {path}")
    if path.lower().endswith(".csv"):
        samples = _read_signal_csv(path)
    else:
        samples = _read_signal_f64(path)
    if samples.size == 0:
        raise SignalFormatError(f"{path}: no samples")
    if not np.all(np.isfinite(samples)):
        bad = int(np.flatnonzero(~np.isfinite(samples))[0])
        raise SignalFormatError(f"{path}: non-finite sample at index {bad}")
    if row.duration_s is not None:
        expected = round(row.duration_s * row.sampling_rate_hz)
        if samples.size != expected:
            raise ManifestError(
                f"{path}: {samples.size} samples but manifest declares "
                f"{row.duration_s} s at {row.sampling_rate_hz} Hz "
                f"({expected} samples)")
    return TimeSeries(samples, row.sampling_rate_hz), row


def write_signal(path, samples):
    """Write samples in the format the extension names (.csv or .f64).

    CSV uses repr formatting, so a reload is bit-equal.
    """
    samples = np.asarray(samples, dtype=np.float64)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        with open(path, "w") as fh:
            for value in samples:
                fh.write(f"{float(value)!r}\n")
    elif ext == ".f64":
        samples.astype("<f8").tofile(path)
    else:
        raise ValueError(f"write_signal: unsupported extension '{ext}'")


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticEcgSpec:
    heart_rate_bpm: float = 60.0
    duration_s: float = 10.0
    sampling_rate_hz: float = 128.0
    noise_std: float = 0.02
    baseline_wander_amp: float = 0.15
    baseline_wander_freq_hz: float = 0.3
    amplitude_jitter: float = 0.1
    qrs_width_s: float = 0.012
    seed: int = 0

    def __post_init__(self):
        if not 30.0 <= self.heart_rate_bpm <= 220.0:
            raise ValueError(f"SyntheticEcgSpec: heart_rate_bpm "
                             f"{self.heart_rate_bpm} outside [30, 220]")
        if self.duration_s * self.heart_rate_bpm / 60.0 < 1.0:
            raise ValueError("SyntheticEcgSpec: needs at least one beat "
                             "(duration x rate too small)")
        if self.sampling_rate_hz <= 0:
            raise ValueError("SyntheticEcgSpec: sampling rate must be "
                             "positive")
        if self.noise_std < 0 or self.baseline_wander_amp < 0:
            raise ValueError("SyntheticEcgSpec: amplitudes must be "
                             "non-negative")
        if not 0.0 <= self.amplitude_jitter <= 0.9:
            raise ValueError("SyntheticEcgSpec: amplitude_jitter outside "
                             "[0, 0.9]")
        if self.qrs_width_s <= 0:
            raise ValueError("SyntheticEcgSpec: qrs_width_s must be "
                             "positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticEcgSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"SyntheticEcgSpec: unknown fields "
                             f"{sorted(unknown)}")
        return cls(**data)


def generate_synthetic_ecg(spec: SyntheticEcgSpec):
    """Deterministic ECG-like series plus its planted beat indices.

    Beats are Gaussian bumps centered at (k + 1/2) periods so the first
    and last sit clear of the edges; per-beat amplitude jitter and the
    noise come from one seeded generator.
    """
    fs = spec.sampling_rate_hz
    n = round(spec.duration_s * fs)
    period_s = 60.0 / spec.heart_rate_bpm
    centers = []
    k = 0
    while True:
        t_k = (k + 0.5) * period_s
        if t_k >= spec.duration_s:
            break
        centers.append(t_k)
        k += 1
    centers = np.asarray(centers)
    rng = np.random.default_rng(spec.seed)
    amplitudes = 1.0 + rng.uniform(-spec.amplitude_jitter,
                                   spec.amplitude_jitter, centers.size)
    t = np.arange(n) / fs
    signal = np.zeros(n)
    for center, amp in zip(centers, amplitudes):
        signal += amp * np.exp(-((t - center) ** 2)
                               / (2.0 * spec.qrs_width_s ** 2))
    signal += spec.baseline_wander_amp * np.sin(
        2.0 * np.pi * spec.baseline_wander_freq_hz * t)
    if spec.noise_std > 0:
        signal += rng.normal(0.0, spec.noise_std, n)
    beat_indices = np.round(centers * fs).astype(np.int64)
    return TimeSeries(signal, fs), beat_indices


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def default_class_label(row: ManifestRow) -> int:
    """Emotion label when present, else valence binarized at midpoint."""
    if row.label_emotion is not None:
        return row.label_emotion
    return binarize_labels(row.rating_valence, "valence",
                           row.rating_scale_max)


def make_split(rows, policy: str, fraction: float = 0.8, seed: int = 0,
               label_fn=default_class_label):
    """Split manifest rows into (train, test).

    random_stratified keeps per-class proportions within one item;
    subject_holdout keeps every subject entirely on one side. Output
    preserves manifest order within each side.
    """
    if policy not in ("random_stratified", "subject_holdout"):
        raise ValueError(f"make_split: unknown policy '{policy}'")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"make_split: fraction {fraction} outside (0, 1)")
    if not rows:
        raise ValueError("make_split: no rows")
    rng = np.random.default_rng(seed)
    train_idx: set[int] = set()

    if policy == "random_stratified":
        by_class: dict[int, list[int]] = {}
        for i, row in enumerate(rows):
            by_class.setdefault(label_fn(row), []).append(i)
        for label in sorted(by_class):
            members = np.asarray(by_class[label])
            members = members[rng.permutation(members.size)]
            n_train = round(fraction * members.size)
            train_idx.update(members[:n_train].tolist())
    else:
        subjects = sorted({row.subject_id for row in rows})
        if len(subjects) < 2:
            raise ValueError("make_split: subject_holdout needs at least "
                             "two subjects")
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        target = round(fraction * len(rows))
        chosen: set[str] = set()
        count = 0
        for subject in order:
            if count >= target:
                break
            chosen.add(subject)
            count += sum(1 for row in rows if row.subject_id == subject)
        if len(chosen) == len(subjects):
            # the item target swallowed everyone; keep the test side
            # nonempty by releasing the subject added last
            chosen.discard(order[-1])
        train_idx.update(i for i, row in enumerate(rows)
                         if row.subject_id in chosen)

    train = [row for i, row in enumerate(rows) if i in train_idx]
    test = [row for i, row in enumerate(rows) if i not in train_idx]
    return train, test
