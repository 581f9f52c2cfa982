"""Command-line front end for the signal-to-classifier pipeline.

One JSON config document drives every stage; flags only say where
things live. Each command writes into a run directory laid out as
`<out>/{preprocessed,images,train,eval}/` with a manifest per stage,
so stages can be rerun independently, and stamps the resolved config
plus tool version into the run directory. Outputs are deterministic:
rerunning a stage from the same config and inputs reproduces its
artifacts byte for byte.

Exit codes: 2 invalid config or malformed input file (message names the
field), 3 missing input path, 4 internal invariant trip.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields, asdict

import numpy as np

from . import __version__
from . import tensor_autograd as ta
from .signal_core import (
    TimeSeries, BaselineSpec, BandpassSpec,
    remove_baseline, design_bandpass, apply_filter,
    detect_r_peaks, segment_around_peaks,
)
from .timefreq import MorletSpec, WelchSpec, cwt_morlet, welch_psd
from .image_encode import Provenance, compose_rgb, write_png, read_png
from .esvit_model import ModelConfig, EsVitModel, forward
from .training_eval import (
    TrainConfig, train, evaluate, binarize_labels, cross_entropy,
)
from .dataset_io import (
    ManifestError, SignalFormatError, ManifestRow, SyntheticEcgSpec,
    read_manifest, write_manifest, load_recording, write_signal,
    generate_synthetic_ecg, make_split,
)

CONFIG_ENV_VAR = "ECGVIT_CONFIG"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_INVARIANT = 4


class ConfigError(ValueError):
    """Run or corpus config rejected; message names the offending field."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeakConfig:
    relative_threshold: float = 0.5
    min_distance_samples: int | None = None

    def __post_init__(self):
        if not 0.0 < self.relative_threshold <= 1.0:
            raise ValueError(f"relative_threshold {self.relative_threshold} "
                             f"outside (0, 1]")
        if self.min_distance_samples is not None \
                and self.min_distance_samples < 1:
            raise ValueError("min_distance_samples must be >= 1")


@dataclass(frozen=True)
class SegmentConfig:
    left: int = 100
    right: int = 100

    def __post_init__(self):
        if self.left < 1 or self.right < 1:
            raise ValueError("segment window sides must be >= 1")


@dataclass(frozen=True)
class ImageConfig:
    height: int = 224
    width: int = 224
    log_scale: bool = True
    resample: str = "bilinear"

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("image sides must be >= 8")
        if self.resample not in ("bilinear", "nearest"):
            raise ValueError(f"resample must be 'bilinear' or 'nearest', "
                             f"got '{self.resample}'")


@dataclass(frozen=True)
class SplitConfig:
    policy: str = "none"       # none | random_stratified | subject_holdout
    fraction: float = 0.8
    task: str = "valence"      # emotion | valence | arousal | dominance

    def __post_init__(self):
        if self.policy not in ("none", "random_stratified",
                               "subject_holdout"):
            raise ValueError(f"unknown split policy '{self.policy}'")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction {self.fraction} outside (0, 1)")
        if self.task not in ("emotion", "valence", "arousal", "dominance"):
            raise ValueError(f"unknown task '{self.task}'")


_SECTION_TYPES = {
    "baseline": BaselineSpec,
    "bandpass": BandpassSpec,
    "peaks": PeakConfig,
    "segmentation": SegmentConfig,
    "morlet": MorletSpec,
    "welch": WelchSpec,
    "image": ImageConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "split": SplitConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    baseline: BaselineSpec
    bandpass: BandpassSpec
    peaks: PeakConfig
    segmentation: SegmentConfig
    morlet: MorletSpec
    welch: WelchSpec
    image: ImageConfig
    model: ModelConfig
    train: TrainConfig
    split: SplitConfig

    def to_dict(self) -> dict:
        resolved = {"seed": self.seed}
        for name in _SECTION_TYPES:
            resolved[name] = asdict(getattr(self, name))
        return resolved


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate the full run config; unknown keys anywhere
    are errors, including inside sections."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTION_TYPES) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        payload = data.get(name, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"{name}: expected an object")
        known = {f.name for f in fields(cls)}
        bad = set(payload) - known
        if bad:
            raise ConfigError(f"{name}: unknown key(s) {sorted(bad)}")
        payload = dict(payload)
        if name == "train" and "adam_betas" in payload:
            payload["adam_betas"] = tuple(payload["adam_betas"])
        try:
            sections[name] = cls(**payload)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
    cfg = RunConfig(seed=seed, **sections)
    if cfg.image.height != cfg.image.width \
            or cfg.image.height != cfg.model.image_hw:
        raise ConfigError(
            f"image: size {cfg.image.height}x{cfg.image.width} does not "
            f"match model.image_hw {cfg.model.image_hw} (square required)")
    return cfg


def load_run_config(config_path) -> RunConfig:
    path = config_path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return config_from_dict({})
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(data)


def stamp_run_dir(out_dir, cfg: RunConfig):
    """Resolved config plus tool version, identical bytes every rerun."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {"tool_version": __version__, "run_config": cfg.to_dict()}
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_CORPUS_KEYS = {"seed", "format", "recordings_per_class", "subjects",
                "base", "classes"}
_CLASS_KEYS = {"label_emotion", "rating_valence", "rating_arousal",
               "rating_dominance", "spec"}


def _build_corpus_spec(data: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("corpus spec root must be a JSON object")
    unknown = set(data) - _CORPUS_KEYS
    if unknown:
        raise ConfigError(f"corpus spec: unknown key(s) {sorted(unknown)}")
    spec = {
        "seed": data.get("seed", 0),
        "format": data.get("format", "csv"),
        "recordings_per_class": data.get("recordings_per_class", 8),
        "subjects": data.get("subjects", 4),
        "base": data.get("base", {}),
        "classes": data.get("classes", [
            {"label_emotion": 0, "rating_valence": 2.0,
             "rating_arousal": 3.0, "spec": {"heart_rate_bpm": 60.0}},
            {"label_emotion": 1, "rating_valence": 8.0,
             "rating_arousal": 7.0, "spec": {"heart_rate_bpm": 100.0}},
        ]),
    }
    if spec["format"] not in ("csv", "f64"):
        raise ConfigError(f"corpus spec: format must be 'csv' or 'f64', "
                          f"got '{spec['format']}'")
    if not isinstance(spec["recordings_per_class"], int) \
            or spec["recordings_per_class"] < 1:
        raise ConfigError("corpus spec: recordings_per_class must be a "
                          "positive integer")
    if not isinstance(spec["subjects"], int) or spec["subjects"] < 1:
        raise ConfigError("corpus spec: subjects must be a positive integer")
    if not isinstance(spec["base"], dict):
        raise ConfigError("corpus spec: base must be an object")
    if "seed" in spec["base"]:
        raise ConfigError("corpus spec: per-recording seeds are derived; "
                          "remove base.seed")
    if not isinstance(spec["classes"], list) or not spec["classes"]:
        raise ConfigError("corpus spec: classes must be a non-empty list")
    for k, cls in enumerate(spec["classes"]):
        if not isinstance(cls, dict):
            raise ConfigError(f"corpus spec: classes[{k}] must be an object")
        bad = set(cls) - _CLASS_KEYS
        if bad:
            raise ConfigError(f"corpus spec: classes[{k}]: unknown key(s) "
                              f"{sorted(bad)}")
        for required in ("rating_valence", "rating_arousal"):
            if required not in cls:
                raise ConfigError(f"corpus spec: classes[{k}] missing "
                                  f"'{required}'")
    return spec


def cmd_synth(args) -> int:
    if args.spec:
        if not os.path.exists(args.spec):
            raise FileNotFoundError(f"corpus spec not found: {args.spec}")
        with open(args.spec) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.spec}: not valid JSON "
                                  f"({exc})") from None
    else:
        data = {}
    spec = _build_corpus_spec(data)
    os.makedirs(args.out, exist_ok=True)

    rows = []
    index = 0
    for k, cls in enumerate(spec["classes"]):
        overrides = dict(cls.get("spec", {}))
        for i in range(spec["recordings_per_class"]):
            try:
                ecg_spec = SyntheticEcgSpec.from_dict(
                    {**spec["base"], **overrides,
                     "seed": spec["seed"] * 100003 + index})
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"corpus spec: classes[{k}]: "
                                  f"{exc}") from None
            ts, _ = generate_synthetic_ecg(ecg_spec)
            name = f"rec_c{k}_{i:03d}.{spec['format']}"
            write_signal(os.path.join(args.out, name), ts.samples)
            rows.append(ManifestRow(
                signal_path=name,
                subject_id=f"s{i % spec['subjects']:02d}",
                session=f"c{k}",
                sampling_rate_hz=ecg_spec.sampling_rate_hz,
                rating_valence=cls["rating_valence"],
                rating_arousal=cls["rating_arousal"],
                rating_dominance=cls.get("rating_dominance"),
                label_emotion=cls.get("label_emotion"),
                duration_s=ecg_spec.duration_s,
            ))
            index += 1
    manifest_path = os.path.join(args.out, "manifest.csv")
    write_manifest(manifest_path, rows)
    with open(os.path.join(args.out, "corpus_spec.json"), "w") as fh:
        json.dump({"tool_version": __version__, "corpus_spec": spec},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(rows)} recordings and {manifest_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

SEGMENT_INDEX_COLUMNS = (
    "recording_id", "subject_id", "session", "sampling_rate_hz",
    "segment_index", "center_index", "segment_path", "full_path",
    "label_emotion", "rating_valence", "rating_arousal",
    "rating_dominance", "rating_scale_max",
)


def cmd_preprocess(args) -> int:
    cfg = load_run_config(args.config)
    if not os.path.exists(args.manifest):
        raise FileNotFoundError(f"manifest not found: {args.manifest}")
    rows = read_manifest(args.manifest)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    stage_dir = os.path.join(args.out, "preprocessed")
    os.makedirs(stage_dir, exist_ok=True)
    stamp_run_dir(args.out, cfg)

    index_rows = []
    skipped_rows = []
    for i, row in enumerate(rows):
        ts, _ = load_recording(row, base_dir=base_dir)
        recid = f"rec{i:04d}"
        ts = remove_baseline(ts, cfg.baseline)
        coeffs = design_bandpass(cfg.bandpass, ts.sampling_rate_hz)
        ts = apply_filter(ts, coeffs)
        peaks = detect_r_peaks(ts, cfg.peaks.relative_threshold,
                               cfg.peaks.min_distance_samples)
        result = segment_around_peaks(ts, peaks, cfg.segmentation.left,
                                      cfg.segmentation.right)
        full_name = f"{recid}_full.f64"
        write_signal(os.path.join(stage_dir, full_name), ts.samples)
        for j, segment in enumerate(result.segments):
            seg_name = f"{recid}_seg{j:04d}.f64"
            write_signal(os.path.join(stage_dir, seg_name), segment.samples)
            index_rows.append([
                recid, row.subject_id, row.session, row.sampling_rate_hz,
                j, segment.center_index, seg_name, full_name,
                "" if row.label_emotion is None else row.label_emotion,
                row.rating_valence, row.rating_arousal,
                "" if row.rating_dominance is None else row.rating_dominance,
                row.rating_scale_max,
            ])
        for peak_index in result.skipped:
            skipped_rows.append([recid, int(peak_index),
                                 "segment window out of bounds"])

    with open(os.path.join(stage_dir, "segments.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SEGMENT_INDEX_COLUMNS)
        writer.writerows(index_rows)
    with open(os.path.join(stage_dir, "skipped.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("recording_id", "peak_index", "reason"))
        writer.writerows(skipped_rows)
    print(f"preprocessed {len(rows)} recordings: {len(index_rows)} segments,"
          f" {len(skipped_rows)} peaks skipped")
    return EXIT_OK


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

def _read_stage_csv(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"stage index not found: {path} "
                                f"(run the previous stage first)")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_encode(args) -> int:
    cfg = load_run_config(args.config)
    stage_in = os.path.join(args.out, "preprocessed")
    seg_rows = _read_stage_csv(os.path.join(stage_in, "segments.csv"))
    if not seg_rows:
        raise ValueError("encode: no segments to encode")
    stage_out = os.path.join(args.out, "images")
    os.makedirs(stage_out, exist_ok=True)
    stamp_run_dir(args.out, cfg)

    with_dominance = all(r["rating_dominance"] for r in seg_rows)
    header = ["image_path", "subject_id", "segment_index", "label_emotion",
              "label_valence", "label_arousal"]
    if with_dominance:
        header.append("label_dominance")

    full_cache = {}
    manifest_rows = []
    for row in seg_rows:
        recid = row["recording_id"]
        fs = float(row["sampling_rate_hz"])
        if recid not in full_cache:
            full = np.fromfile(os.path.join(stage_in, row["full_path"]),
                               dtype="<f8")
            full_ts = TimeSeries(full, fs)
            full_cache[recid] = (
                cwt_morlet(full_ts, cfg.morlet, source_id=recid),
                welch_psd(full_ts, cfg.welch, source_id=recid),
            )
        full_scalogram, full_psd = full_cache[recid]
        seg = np.fromfile(os.path.join(stage_in, row["segment_path"]),
                          dtype="<f8")
        seg_scalogram = cwt_morlet(TimeSeries(seg, fs), cfg.morlet,
                                   source_id=recid)
        scale = float(row["rating_scale_max"])
        emotion = row["label_emotion"]
        provenance = Provenance(
            subject_id=row["subject_id"],
            segment_index=int(row["segment_index"]),
            label=None if emotion == "" else int(emotion))
        image = compose_rgb(seg_scalogram, full_scalogram, full_psd,
                            cfg.image.height, cfg.image.width,
                            log_scale=cfg.image.log_scale,
                            resample=cfg.image.resample,
                            provenance=provenance)
        image_name = f"{recid}_seg{int(row['segment_index']):04d}.png"
        write_png(image, os.path.join(stage_out, image_name))
        out_row = [
            image_name, row["subject_id"], row["segment_index"],
            emotion,
            binarize_labels(float(row["rating_valence"]), "valence", scale),
            binarize_labels(float(row["rating_arousal"]), "arousal", scale),
        ]
        if with_dominance:
            out_row.append(binarize_labels(float(row["rating_dominance"]),
                                           "dominance", scale))
        manifest_rows.append(out_row)

    with open(os.path.join(stage_out, "manifest.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(manifest_rows)
    print(f"encoded {len(manifest_rows)} images from "
          f"{len(full_cache)} recordings")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

class _ImageRef:
    """Split-friendly view of one image-manifest row."""

    __slots__ = ("row", "subject_id", "signal_path")

    def __init__(self, row):
        self.row = row
        self.subject_id = row["subject_id"]
        self.signal_path = row["image_path"]


def _image_label(row: dict, task: str) -> int:
    value = row.get(f"label_{task}", "")
    if value == "" or value is None:
        raise ConfigError(f"split: task '{task}' has no label for image "
                          f"'{row['image_path']}'")
    return int(value)


def _load_image_dataset(manifest_path, refs, task):
    base = os.path.dirname(os.path.abspath(manifest_path))
    dataset = []
    for ref in refs:
        image = read_png(os.path.join(base, ref.row["image_path"]))
        dataset.append((image.pixels, _image_label(ref.row, task)))
    return dataset


def _write_image_manifest(path, header, refs, image_base=None):
    # image_path entries are relative to the manifest that holds them, so
    # when copying rows into a manifest that lives elsewhere (the split
    # files) they must be re-anchored or eval could not read them back
    out_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ref in refs:
            row = dict(ref.row)
            if image_base is not None:
                source = os.path.join(image_base, row["image_path"])
                row["image_path"] = os.path.relpath(source, out_dir)
            writer.writerow([row[col] for col in header])


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    manifest_path = args.images or os.path.join(args.out, "images",
                                                "manifest.csv")
    rows = _read_stage_csv(manifest_path)
    if not rows:
        raise ValueError("train: image manifest is empty")
    header = list(rows[0].keys())
    task = cfg.split.task
    refs = [_ImageRef(r) for r in rows]
    for ref in refs:
        _image_label(ref.row, task)    # fail fast on unlabeled rows

    if cfg.split.policy == "none":
        train_refs, test_refs = refs, []
    else:
        train_refs, test_refs = make_split(
            refs, cfg.split.policy, cfg.split.fraction, seed=cfg.seed,
            label_fn=lambda ref: _image_label(ref.row, task))

    stage_dir = os.path.join(args.out, "train")
    os.makedirs(stage_dir, exist_ok=True)
    stamp_run_dir(args.out, cfg)
    image_base = os.path.dirname(os.path.abspath(manifest_path))
    _write_image_manifest(os.path.join(stage_dir, "split_train.csv"),
                          header, train_refs, image_base=image_base)
    _write_image_manifest(os.path.join(stage_dir, "split_test.csv"),
                          header, test_refs, image_base=image_base)

    train_set = _load_image_dataset(manifest_path, train_refs, task)
    test_set = _load_image_dataset(manifest_path, test_refs, task) \
        if test_refs else None
    model = EsVitModel(cfg.model, seed=cfg.seed,
                       dtype=np.dtype(cfg.train.precision))
    log = train(model, train_set, cfg.train, val_dataset=test_set,
                checkpoint_dir=stage_dir)
    log.write_csv(os.path.join(stage_dir, "epoch_log.csv"))
    model.save(os.path.join(stage_dir, "checkpoint_final.json"))
    model.write_model_card(os.path.join(stage_dir, "model_card.json"))
    final_acc = log.column("accuracy")[-1]
    print(f"trained {cfg.train.epochs} epochs on {len(train_set)} images "
          f"(task {task}); final train accuracy {final_acc:.4f}")
    if test_set:
        print(f"final val accuracy {log.column('accuracy', 'val')[-1]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    rows = _read_stage_csv(args.images)
    if not rows:
        raise ValueError("eval: image manifest is empty")
    task = cfg.split.task
    refs = [_ImageRef(r) for r in rows]
    dataset = _load_image_dataset(args.images, refs, task)
    model = EsVitModel.load(args.checkpoint)
    report = evaluate(model, dataset)

    stage_dir = os.path.join(args.out, "eval")
    os.makedirs(stage_dir, exist_ok=True)
    stamp_run_dir(args.out, cfg)
    payload = {"task": task, "checkpoint": os.path.basename(args.checkpoint),
               "num_images": len(dataset)}
    payload.update(report.to_dict())
    with open(os.path.join(stage_dir, "metrics.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(stage_dir, "confusion_matrix.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        k = report.confusion_matrix.shape[0]
        writer.writerow(["true\\pred"] + [f"pred_{j}" for j in range(k)])
        for i in range(k):
            writer.writerow([f"true_{i}"]
                            + report.confusion_matrix[i].tolist())
    print(f"evaluated {len(dataset)} images (task {task}): "
          f"accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _weighted_readout(output, weights):
    return ta.sum_all(ta.mul(output, ta.constant(weights)))


def gradcheck_suite(seed=0):
    """(name, GradCheckReport) for every primitive plus a tiny model."""
    rng = np.random.default_rng(seed)
    suite = []

    def check(name, fn, inputs, **kw):
        report = ta.gradient_check(fn, inputs,
                                   rng=np.random.default_rng(seed + 1), **kw)
        suite.append((name, report))

    a = ta.parameter(rng.standard_normal((4, 5)))
    b = ta.parameter(rng.standard_normal((5, 3)))
    w_ab = rng.standard_normal((4, 3))
    check("matmul", lambda _: _weighted_readout(ta.matmul(a, b), w_ab),
          [a, b])

    bias = ta.parameter(rng.standard_normal(5))
    w_a = rng.standard_normal((4, 5))
    check("add_bias", lambda _: _weighted_readout(ta.add(a, bias), w_a),
          [a, bias])

    c = ta.parameter(rng.standard_normal((4, 5)))
    check("mul", lambda _: _weighted_readout(ta.mul(a, c), w_a), [a, c])
    check("scale", lambda _: _weighted_readout(ta.scale(a, -2.5), w_a), [a])
    w_flat = rng.standard_normal(20)
    check("reshape", lambda _: _weighted_readout(ta.reshape(a, (20,)),
                                                 w_flat), [a])
    w_t = rng.standard_normal((5, 4))
    check("transpose", lambda _: _weighted_readout(ta.transpose(a), w_t),
          [a])
    w_cat = rng.standard_normal((8, 5))
    check("concat", lambda _: _weighted_readout(
        ta.concat([a, c], axis=0), w_cat), [a, c])
    w_nar = rng.standard_normal((4, 2))
    check("narrow", lambda _: _weighted_readout(
        ta.narrow(a, 1, 1, 2), w_nar), [a])
    w_mp = rng.standard_normal(5)
    check("mean_pool", lambda _: _weighted_readout(
        ta.mean_pool(a, axes=(0,)), w_mp), [a])
    check("sum_all", lambda _: ta.sum_all(a), [a])
    idx = rng.integers(0, 5, size=4)
    w_g = rng.standard_normal(4)
    check("gather_rows", lambda _: _weighted_readout(
        ta.gather_rows(a, idx), w_g), [a])

    # keep relu inputs clear of the kink
    r = ta.parameter(np.where(np.abs(rng.standard_normal((4, 5))) < 0.1,
                              0.5, rng.standard_normal((4, 5))))
    check("relu", lambda _: _weighted_readout(ta.relu(r), w_a), [r])
    check("sigmoid", lambda _: _weighted_readout(ta.sigmoid(a), w_a), [a])
    check("gelu", lambda _: _weighted_readout(ta.gelu(a), w_a), [a])
    check("exp", lambda _: _weighted_readout(ta.exp(a), w_a), [a])
    pos = ta.parameter(rng.uniform(0.5, 3.0, (4, 5)))
    check("log", lambda _: _weighted_readout(ta.log(pos), w_a), [pos])
    check("softmax_rows", lambda _: _weighted_readout(
        ta.softmax_rows(a), w_a), [a])
    gain = ta.parameter(rng.standard_normal(5))
    ln_bias = ta.parameter(rng.standard_normal(5))
    check("layer_norm", lambda _: _weighted_readout(
        ta.layer_norm(a, gain, ln_bias), w_a), [a, gain, ln_bias])
    img = ta.parameter(rng.standard_normal((6, 6, 2)))
    kern = ta.parameter(rng.standard_normal((3, 3, 2, 3)) * 0.4)
    w_conv = rng.standard_normal((3, 3, 3))
    check("conv2d", lambda _: _weighted_readout(
        ta.conv2d(img, kern, stride=2, padding=1), w_conv), [img, kern])

    # tiny fused model, end to end through the loss
    cfg = ModelConfig(num_layers=1, hidden_size=8, mlp_size=16, num_heads=2,
                      patch_size=16, image_hw=32, num_classes=2)
    model = EsVitModel(cfg, seed=seed)
    model.params["se.expand.weight"].data[:] = \
        rng.standard_normal((2, 8)) * 0.1
    pixels = rng.random((32, 32, 3))

    def model_loss(_):
        return cross_entropy(forward(pixels, model), 1)

    report = ta.gradient_check(model_loss, list(model.params.values()),
                               sample=50, tol=1e-3,
                               rng=np.random.default_rng(seed + 2))
    suite.append(("model_end_to_end", report))
    return suite


def cmd_gradcheck(args) -> int:
    suite = gradcheck_suite(seed=args.seed)
    failed = 0
    for name, report in suite:
        status = "PASS" if report.ok else "FAIL"
        print(f"{status} {name}: max rel error {report.max_rel_error:.3e} "
              f"over {report.num_checked} coordinates (tol {report.tol})")
        if not report.ok:
            failed += 1
    if failed:
        print(f"{failed} of {len(suite)} checks failed")
        return EXIT_CHECK_FAILED
    print(f"all {len(suite)} gradient checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def _describe_array(label, arr):
    print(f"{label}: shape {tuple(arr.shape)}, dtype {arr.dtype}, "
          f"min {arr.min():.6g}, max {arr.max():.6g}, "
          f"mean {arr.mean():.6g}")


def cmd_inspect(args) -> int:
    path = args.path
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such artifact: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".f64":
        _describe_array(path, np.fromfile(path, dtype="<f8"))
    elif ext == ".png":
        image = read_png(path)
        _describe_array(path, image.pixels)
    elif ext == ".csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            print(f"{path}: empty file")
            return EXIT_OK
        try:
            flat = np.asarray([float(row[0]) for row in rows if row])
            is_signal = all(len(row) == 1 for row in rows if row)
        except ValueError:
            is_signal = False
        if is_signal:
            _describe_array(f"{path} (signal)", flat)
        else:
            header = rows[0]
            print(f"{path}: {len(rows) - 1} data rows, "
                  f"columns {', '.join(header)}")
            for row in rows[1:4]:
                print(f"  {', '.join(row)}")
            if len(rows) > 4:
                print(f"  ... {len(rows) - 4} more rows")
    elif ext == ".json":
        with open(path) as fh:
            data = json.load(fh)
        if isinstance(data, dict) and "parameters" in data \
                and "format_version" in data:
            params = data["parameters"]
            total = sum(int(np.prod(p["shape"])) for p in params.values())
            print(f"{path}: checkpoint, format {data['format_version']}, "
                  f"{len(params)} tensors, {total} scalars")
            for name in list(params)[:6]:
                print(f"  {name}: {tuple(params[name]['shape'])}")
            if len(params) > 6:
                print(f"  ... {len(params) - 6} more")
        else:
            print(f"{path}: JSON with top-level keys "
                  f"{', '.join(sorted(data))}")
    else:
        raise ValueError(f"inspect: unsupported artifact type '{ext}'")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgvit",
        description="ECG-to-image emotion classification pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--spec", help="corpus spec JSON (defaults built in)")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess",
                       help="baseline removal, band-pass, peaks, segments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help=f"run config JSON "
                                    f"(or ${CONFIG_ENV_VAR})")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("encode", help="scalogram/PSD images from segments")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the classifier on images")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--images", help="image manifest "
                                    "(default <out>/images/manifest.csv)")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="image manifest")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="shapes and stats of an artifact")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (ManifestError, SignalFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FloatingPointError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
