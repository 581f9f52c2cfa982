"""Tests for manifest parsing, signal loading, the synthetic ECG
generator, and split policies."""

import numpy as np
import pytest

from ecgvit import dataset_io as dio
from ecgvit.dataset_io import (
    ManifestError, SignalFormatError, ManifestRow, SyntheticEcgSpec,
    read_manifest, write_manifest, load_recording, write_signal,
    generate_synthetic_ecg, make_split, default_class_label,
)
from ecgvit.signal_core import (
    BaselineSpec, BandpassSpec, remove_baseline, design_bandpass,
    apply_filter, detect_r_peaks,
)


def make_row(i=0, subject="s01", valence=2.0, arousal=5.0, emotion=None,
             **overrides):
    kwargs = dict(signal_path=f"rec{i:03d}.csv", subject_id=subject,
                  session="a", sampling_rate_hz=128.0,
                  rating_valence=valence, rating_arousal=arousal,
                  label_emotion=emotion)
    kwargs.update(overrides)
    return ManifestRow(**kwargs)


class TestManifestRow:
    def test_valid_row(self):
        row = make_row(emotion=3, rating_dominance=4.0)
        assert row.label_emotion == 3
        assert row.rating_dominance == 4.0

    def test_rejects_bad_extension(self):
        with pytest.raises(ManifestError, match="extension"):
            make_row(signal_path="rec.wav")

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ManifestError, match="sampling_rate_hz"):
            make_row(sampling_rate_hz=0.0)

    def test_rejects_rating_out_of_scale(self):
        with pytest.raises(ManifestError, match="rating_valence"):
            make_row(valence=9.5)
        with pytest.raises(ManifestError, match="rating_arousal"):
            make_row(arousal=0.5)

    def test_rejects_emotion_out_of_range(self):
        with pytest.raises(ManifestError, match="label_emotion"):
            make_row(emotion=7)

    def test_optional_fields_default_to_none(self):
        row = make_row()
        assert row.label_emotion is None
        assert row.rating_dominance is None
        assert row.duration_s is None


class TestReadManifest:
    def write(self, tmp_path, text):
        path = tmp_path / "manifest.csv"
        path.write_text(text)
        return path

    def test_parses_and_types_rows(self, tmp_path):
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal,label_emotion\n"
            "a.csv,s01,x,128,2.0,7.5,3\n"
            "b.f64,s02,y,256,8.0,1.0,\n")
        rows = read_manifest(path)
        assert len(rows) == 2
        assert rows[0].sampling_rate_hz == 128.0
        assert rows[0].label_emotion == 3
        assert rows[1].label_emotion is None

    def test_rejects_unknown_column(self, tmp_path):
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal,mood\n"
            "a.csv,s01,x,128,2,2,happy\n")
        with pytest.raises(ManifestError, match="mood"):
            read_manifest(path)

    def test_rejects_missing_required_value_with_line(self, tmp_path):
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal\n"
            "a.csv,s01,x,128,2.0,3.0\n"
            "b.csv,s02,x,128,,3.0\n")
        with pytest.raises(ManifestError, match=":3"):
            read_manifest(path)

    def test_rejects_unparsable_number(self, tmp_path):
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal\n"
            "a.csv,s01,x,fast,2.0,3.0\n")
        with pytest.raises(ManifestError, match="fast"):
            read_manifest(path)

    def test_fails_fast_without_touching_signals(self, tmp_path):
        # the named signal files do not exist; validation must trip on
        # the rating range before any attempt to read them
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal\n"
            "missing1.csv,s01,x,128,2.0,3.0\n"
            "missing2.csv,s02,x,128,77.0,3.0\n")
        with pytest.raises(ManifestError, match="rating_valence"):
            read_manifest(path)

    def test_rejects_header_only(self, tmp_path):
        path = self.write(tmp_path,
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal\n")
        with pytest.raises(ManifestError, match="no data rows"):
            read_manifest(path)

    def test_write_read_round_trip(self, tmp_path):
        rows = [make_row(i, emotion=i % 7, rating_dominance=3.0,
                         duration_s=39.0) for i in range(5)]
        path = tmp_path / "out.csv"
        write_manifest(path, rows)
        assert read_manifest(path) == rows


class TestLoadRecording:
    def test_yaad_shaped_recording_duration(self, tmp_path):
        # 4992 single-column rows at 128 Hz span exactly 39 seconds
        sig_path = tmp_path / "rec.csv"
        rng = np.random.default_rng(0)
        write_signal(sig_path, rng.standard_normal(4992))
        row = make_row(signal_path=str(sig_path), duration_s=39.0)
        ts, _ = load_recording(row)
        assert len(ts) == 4992
        assert ts.duration_s == 39.0

    def test_round_trip_both_formats_bit_equal(self, tmp_path):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal(257)
        for ext in (".csv", ".f64"):
            path = tmp_path / f"sig{ext}"
            write_signal(path, samples)
            ts, _ = load_recording(make_row(signal_path=str(path)))
            assert np.array_equal(ts.samples, samples), ext

    def test_missing_file_is_distinct_error(self, tmp_path):
        row = make_row(signal_path=str(tmp_path / "absent.csv"))
        with pytest.raises(FileNotFoundError):
            load_recording(row)

    def test_non_numeric_row_names_the_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0\n2.0\nbanana\n4.0\n")
        with pytest.raises(SignalFormatError, match=":3"):
            load_recording(make_row(signal_path=str(path)))

    def test_empty_file_is_load_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SignalFormatError, match="no samples"):
            load_recording(make_row(signal_path=str(path)))

    def test_non_finite_sample_rejected(self, tmp_path):
        path = tmp_path / "nan.f64"
        arr = np.array([1.0, np.nan, 2.0])
        arr.astype("<f8").tofile(path)
        with pytest.raises(SignalFormatError, match="index 1"):
            load_recording(make_row(signal_path=str(path)))

    def test_duration_mismatch_is_manifest_error(self, tmp_path):
        path = tmp_path / "short.csv"
        write_signal(path, np.ones(100))
        row = make_row(signal_path=str(path), duration_s=39.0)
        with pytest.raises(ManifestError, match="4992"):
            load_recording(row)

    def test_relative_path_resolves_against_base_dir(self, tmp_path):
        write_signal(tmp_path / "rel.csv", np.ones(8))
        ts, _ = load_recording(make_row(signal_path="rel.csv"),
                               base_dir=str(tmp_path))
        assert len(ts) == 8


class TestSyntheticEcg:
    def test_canonical_spec_plants_ten_beats(self):
        spec = SyntheticEcgSpec(heart_rate_bpm=60, duration_s=10,
                                sampling_rate_hz=128, noise_std=0.0)
        ts, beats = generate_synthetic_ecg(spec)
        assert len(ts) == 1280
        assert beats.tolist() == [64 + 128 * k for k in range(10)]
        assert np.all(np.diff(beats) == 128)

    def test_beat_count_tracks_duration_and_rate(self):
        for bpm, dur in ((60, 10), (75, 39), (120, 7.3), (48, 21)):
            spec = SyntheticEcgSpec(heart_rate_bpm=bpm, duration_s=dur)
            _, beats = generate_synthetic_ecg(spec)
            expected = int(dur * bpm / 60.0)
            assert abs(len(beats) - expected) <= 1, (bpm, dur)

    def test_same_seed_reproduces_signal(self):
        spec = SyntheticEcgSpec(seed=42)
        ts1, b1 = generate_synthetic_ecg(spec)
        ts2, b2 = generate_synthetic_ecg(spec)
        assert np.array_equal(ts1.samples, ts2.samples)
        assert np.array_equal(b1, b2)
        ts3, _ = generate_synthetic_ecg(SyntheticEcgSpec(seed=43))
        assert not np.array_equal(ts1.samples, ts3.samples)

    def test_clean_signal_peaks_at_planted_indices(self):
        spec = SyntheticEcgSpec(noise_std=0.0, baseline_wander_amp=0.0,
                                amplitude_jitter=0.0)
        ts, beats = generate_synthetic_ecg(spec)
        assert np.allclose(ts.samples[beats], 1.0, atol=1e-6)
        # off-beat samples stay near zero
        mid = (beats[:-1] + beats[1:]) // 2
        assert np.all(ts.samples[mid] < 1e-6)

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="heart_rate_bpm"):
            SyntheticEcgSpec(heart_rate_bpm=25)
        with pytest.raises(ValueError, match="heart_rate_bpm"):
            SyntheticEcgSpec(heart_rate_bpm=230)
        with pytest.raises(ValueError, match="one beat"):
            SyntheticEcgSpec(heart_rate_bpm=30, duration_s=1.0)
        with pytest.raises(ValueError, match="non-negative"):
            SyntheticEcgSpec(noise_std=-0.1)

    def test_spec_dict_round_trip(self):
        spec = SyntheticEcgSpec(heart_rate_bpm=75, seed=9)
        assert SyntheticEcgSpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(ValueError, match="unknown"):
            SyntheticEcgSpec.from_dict({"bpm": 60})

    def test_detector_recovers_planted_beats_through_pipeline(self):
        # ground-truth oracle: realistic noise and wander, then the full
        # conditioning chain; at least 95% of planted beats must be
        # found within 3 samples
        spec = SyntheticEcgSpec(heart_rate_bpm=70, duration_s=39,
                                sampling_rate_hz=128, seed=5)
        ts, planted = generate_synthetic_ecg(spec)
        ts = remove_baseline(ts, BaselineSpec())
        coeffs = design_bandpass(BandpassSpec(), ts.sampling_rate_hz)
        ts = apply_filter(ts, coeffs)
        detected = detect_r_peaks(ts)
        hits = sum(1 for b in planted
                   if np.min(np.abs(detected.indices - b)) <= 3)
        assert hits / len(planted) >= 0.95


class TestMakeSplit:
    def balanced_rows(self, n=100):
        return [make_row(i, subject=f"s{i % 10:02d}",
                         valence=2.0 if i % 2 == 0 else 8.0)
                for i in range(n)]

    def test_stratified_preserves_class_counts(self):
        rows = self.balanced_rows()
        train, test = make_split(rows, "random_stratified", 0.8, seed=1)
        assert len(train) == 80 and len(test) == 20
        train_labels = [default_class_label(r) for r in train]
        test_labels = [default_class_label(r) for r in test]
        assert train_labels.count(0) == 40 and train_labels.count(1) == 40
        assert test_labels.count(0) == 10 and test_labels.count(1) == 10

    def test_union_and_disjointness(self):
        rows = self.balanced_rows(37)
        for policy in ("random_stratified", "subject_holdout"):
            train, test = make_split(rows, policy, 0.7, seed=2)
            paths = [r.signal_path for r in train] \
                + [r.signal_path for r in test]
            assert sorted(paths) == sorted(r.signal_path for r in rows)
            assert not set(r.signal_path for r in train) \
                & set(r.signal_path for r in test)

    def test_subject_holdout_has_no_subject_overlap(self):
        rows = self.balanced_rows(60)
        train, test = make_split(rows, "subject_holdout", 0.8, seed=3)
        assert len(test) > 0
        assert not {r.subject_id for r in train} \
            & {r.subject_id for r in test}

    def test_same_seed_is_reproducible(self):
        rows = self.balanced_rows()
        a = make_split(rows, "random_stratified", 0.8, seed=7)
        b = make_split(rows, "random_stratified", 0.8, seed=7)
        assert a == b
        c = make_split(rows, "random_stratified", 0.8, seed=8)
        assert a != c

    def test_emotion_label_preferred_for_stratification(self):
        rows = [make_row(i, valence=2.0, emotion=i % 3) for i in range(30)]
        train, test = make_split(rows, "random_stratified", 0.8, seed=4)
        counts = [sum(1 for r in train if r.label_emotion == k)
                  for k in range(3)]
        assert counts == [8, 8, 8]

    def test_output_preserves_manifest_order(self):
        rows = self.balanced_rows(40)
        train, test = make_split(rows, "random_stratified", 0.8, seed=5)
        index = {r.signal_path: i for i, r in enumerate(rows)}
        train_pos = [index[r.signal_path] for r in train]
        assert train_pos == sorted(train_pos)

    def test_rejects_bad_arguments(self):
        rows = self.balanced_rows(10)
        with pytest.raises(ValueError, match="policy"):
            make_split(rows, "leave_one_out")
        with pytest.raises(ValueError, match="fraction"):
            make_split(rows, "random_stratified", fraction=1.0)
        with pytest.raises(ValueError, match="no rows"):
            make_split([], "random_stratified")
        solo = [make_row(i, subject="only") for i in range(5)]
        with pytest.raises(ValueError, match="two subjects"):
            make_split(solo, "subject_holdout")
