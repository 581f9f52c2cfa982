"""Tests for the command-line front end: config validation, exit
codes, stage chaining, determinism."""

import json
import os

import numpy as np
import pytest

from ecgvit.cli import (
    main, config_from_dict, ConfigError, gradcheck_suite,
    EXIT_OK, EXIT_BAD_CONFIG, EXIT_MISSING_INPUT,
)

TINY_CONFIG = {
    "seed": 3,
    "image": {"height": 32, "width": 32},
    "model": {"num_layers": 2, "hidden_size": 16, "mlp_size": 32,
              "num_heads": 2, "patch_size": 8, "image_hw": 32,
              "num_classes": 2},
    "train": {"epochs": 2, "batch_size": 8},
    "split": {"policy": "none", "task": "valence"},
}

TINY_CORPUS = {
    "seed": 1,
    "recordings_per_class": 2,
    "subjects": 2,
    "base": {"duration_s": 8.0},
    "classes": [
        {"label_emotion": 0, "rating_valence": 2.0, "rating_arousal": 3.0,
         "spec": {"heart_rate_bpm": 60.0}},
        {"label_emotion": 1, "rating_valence": 8.0, "rating_arousal": 7.0,
         "spec": {"heart_rate_bpm": 100.0}},
    ],
}


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One corpus plus a fully populated run directory, shared across
    the read-only tests below."""
    root = tmp_path_factory.mktemp("pipeline")
    config = write_json(root / "config.json", TINY_CONFIG)
    corpus_spec = write_json(root / "corpus.json", TINY_CORPUS)
    corpus = str(root / "corpus")
    run = str(root / "run")
    assert main(["synth", "--spec", corpus_spec, "--out", corpus]) == EXIT_OK
    assert main(["preprocess", "--manifest", f"{corpus}/manifest.csv",
                 "--config", config, "--out", run]) == EXIT_OK
    assert main(["encode", "--config", config, "--out", run]) == EXIT_OK
    assert main(["train", "--config", config, "--out", run]) == EXIT_OK
    assert main(["eval", "--checkpoint", f"{run}/train/checkpoint_final.json",
                 "--images", f"{run}/images/manifest.csv",
                 "--config", config, "--out", run]) == EXIT_OK
    return {"root": root, "config": config, "corpus_spec": corpus_spec,
            "corpus": corpus, "run": run}


class TestRunConfig:
    def test_empty_config_resolves_defaults(self):
        cfg = config_from_dict({})
        assert cfg.seed == 0
        assert cfg.bandpass.low_hz == 0.5
        assert cfg.train.batch_size == 64
        assert cfg.image.height == 224
        assert cfg.model.image_hw == 224

    def test_round_trips_through_dict(self):
        cfg = config_from_dict(TINY_CONFIG)
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_rejects_unknown_section(self):
        with pytest.raises(ConfigError, match="bogus"):
            config_from_dict({"bogus": {}})

    def test_rejects_unknown_key_inside_section(self):
        with pytest.raises(ConfigError, match=r"bandpass.*ordr"):
            config_from_dict({"bandpass": {"ordr": 2}})

    def test_section_validation_names_the_section(self):
        with pytest.raises(ConfigError, match="model"):
            config_from_dict({"model": {"hidden_size": 15}})
        with pytest.raises(ConfigError, match="train"):
            config_from_dict({"train": {"epochs": 0}})

    def test_rejects_non_integer_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"seed": "three"})
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"seed": True})

    def test_rejects_image_model_size_mismatch(self):
        with pytest.raises(ConfigError, match="image_hw"):
            config_from_dict({"image": {"height": 64, "width": 64}})


class TestExitCodes:
    def test_invalid_config_exits_2(self, tmp_path, capsys):
        config = write_json(tmp_path / "bad.json", {"bogus": {}})
        code = main(["preprocess", "--manifest", "whatever.csv",
                     "--config", config, "--out", str(tmp_path / "run")])
        assert code == EXIT_BAD_CONFIG
        assert "bogus" in capsys.readouterr().err

    def test_unparsable_config_exits_2(self, tmp_path):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        code = main(["preprocess", "--manifest", "x.csv",
                     "--config", str(bad), "--out", str(tmp_path / "run")])
        assert code == EXIT_BAD_CONFIG

    def test_missing_config_file_exits_3(self, tmp_path):
        code = main(["preprocess", "--manifest", "x.csv",
                     "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_MISSING_INPUT

    def test_missing_manifest_exits_3(self, tmp_path, capsys):
        code = main(["preprocess", "--manifest",
                     str(tmp_path / "absent.csv"),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_MISSING_INPUT
        assert "not found" in capsys.readouterr().err

    def test_malformed_manifest_exits_2_with_field(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(
            "signal_path,subject_id,session,sampling_rate_hz,"
            "rating_valence,rating_arousal\n"
            "a.csv,s01,x,128,77.0,3.0\n")
        code = main(["preprocess", "--manifest", str(manifest),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_BAD_CONFIG
        assert "rating_valence" in capsys.readouterr().err

    def test_encode_before_preprocess_exits_3(self, tmp_path):
        code = main(["encode", "--out", str(tmp_path / "fresh")])
        assert code == EXIT_MISSING_INPUT

    def test_eval_missing_checkpoint_exits_3(self, tmp_path):
        images = tmp_path / "manifest.csv"
        images.write_text("image_path,subject_id\n")
        code = main(["eval", "--checkpoint", str(tmp_path / "none.json"),
                     "--images", str(images),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_MISSING_INPUT

    def test_inspect_missing_path_exits_3(self, tmp_path):
        assert main(["inspect", str(tmp_path / "ghost.png")]) \
            == EXIT_MISSING_INPUT

    def test_corpus_spec_unknown_key_exits_2(self, tmp_path, capsys):
        spec = write_json(tmp_path / "spec.json", {"beats": 3})
        code = main(["synth", "--spec", spec,
                     "--out", str(tmp_path / "corpus")])
        assert code == EXIT_BAD_CONFIG
        assert "beats" in capsys.readouterr().err


class TestPipeline:
    def test_image_count_equals_interior_peak_count(self, pipeline):
        run = pipeline["run"]
        with open(f"{run}/preprocessed/segments.csv") as fh:
            segments = fh.read().splitlines()[1:]
        with open(f"{run}/images/manifest.csv") as fh:
            images = fh.read().splitlines()[1:]
        pngs = [n for n in os.listdir(f"{run}/images")
                if n.endswith(".png")]
        assert len(images) == len(segments)
        assert len(pngs) == len(segments)

    def test_run_dir_carries_resolved_config_and_version(self, pipeline):
        with open(f"{pipeline['run']}/run_config.json") as fh:
            stamp = json.load(fh)
        assert "tool_version" in stamp
        resolved = stamp["run_config"]
        assert resolved["seed"] == 3
        assert resolved["model"]["hidden_size"] == 16
        # every section fully resolved, not just the overridden keys
        assert resolved["bandpass"]["low_hz"] == 0.5
        assert resolved["split"]["policy"] == "none"

    def test_eval_artifacts_are_complete(self, pipeline):
        run = pipeline["run"]
        with open(f"{run}/eval/metrics.json") as fh:
            metrics = json.load(fh)
        assert metrics["task"] == "valence"
        assert 0.0 <= metrics["macro"]["f1"] <= 1.0
        cm = metrics["confusion_matrix"]
        assert len(cm) == 2 and len(cm[0]) == 2
        with open(f"{run}/eval/confusion_matrix.csv") as fh:
            lines = fh.read().splitlines()
        assert len(lines) == 3      # header + one row per class

    def test_train_stage_writes_card_log_and_checkpoint(self, pipeline):
        run = pipeline["run"]
        for name in ("epoch_log.csv", "checkpoint_final.json",
                     "model_card.json", "split_train.csv",
                     "split_test.csv"):
            assert os.path.exists(f"{run}/train/{name}"), name
        with open(f"{run}/train/model_card.json") as fh:
            card = json.load(fh)
        assert card["fusion"]["enabled"] is True
        assert card["config"]["num_classes"] == 2

    def test_rerun_reproduces_artifacts_byte_for_byte(self, pipeline,
                                                      tmp_path):
        run_a = pipeline["run"]
        run_b = str(tmp_path / "run_b")
        config = pipeline["config"]
        corpus = pipeline["corpus"]
        assert main(["preprocess", "--manifest", f"{corpus}/manifest.csv",
                     "--config", config, "--out", run_b]) == EXIT_OK
        assert main(["encode", "--config", config, "--out", run_b]) \
            == EXIT_OK
        assert main(["train", "--config", config, "--out", run_b]) \
            == EXIT_OK
        for rel in ("run_config.json", "preprocessed/segments.csv",
                    "images/manifest.csv", "train/epoch_log.csv",
                    "train/checkpoint_final.json"):
            with open(f"{run_a}/{rel}", "rb") as fh:
                a = fh.read()
            with open(f"{run_b}/{rel}", "rb") as fh:
                b = fh.read()
            assert a == b, rel
        images = [n for n in os.listdir(f"{run_a}/images")
                  if n.endswith(".png")][:3]
        for name in images:
            with open(f"{run_a}/images/{name}", "rb") as fh:
                a = fh.read()
            with open(f"{run_b}/images/{name}", "rb") as fh:
                b = fh.read()
            assert a == b, name

    def test_inspect_handles_every_artifact_kind(self, pipeline, capsys):
        run = pipeline["run"]
        corpus = pipeline["corpus"]
        signal = next(n for n in os.listdir(corpus) if n.endswith(".csv")
                      and n != "manifest.csv")
        png = next(n for n in os.listdir(f"{run}/images")
                   if n.endswith(".png"))
        for path in (f"{corpus}/{signal}", f"{corpus}/manifest.csv",
                     f"{run}/preprocessed/rec0000_full.f64",
                     f"{run}/images/{png}",
                     f"{run}/train/checkpoint_final.json",
                     f"{run}/eval/metrics.json"):
            assert main(["inspect", path]) == EXIT_OK, path
        out = capsys.readouterr().out
        assert "checkpoint" in out
        assert "shape" in out

    def test_default_corpus_spec_needs_no_file(self, tmp_path):
        out = str(tmp_path / "corpus")
        assert main(["synth", "--out", out]) == EXIT_OK
        assert os.path.exists(f"{out}/manifest.csv")
        assert os.path.exists(f"{out}/corpus_spec.json")

    def test_task_without_labels_exits_2(self, pipeline, tmp_path, capsys):
        config = dict(TINY_CONFIG)
        config["split"] = {"policy": "none", "task": "dominance"}
        config_path = write_json(tmp_path / "config.json", config)
        code = main(["train", "--config", config_path,
                     "--images", f"{pipeline['run']}/images/manifest.csv",
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_BAD_CONFIG
        assert "dominance" in capsys.readouterr().err

    def test_stratified_split_holds_out_images(self, pipeline, tmp_path):
        config = dict(TINY_CONFIG)
        config["split"] = {"policy": "random_stratified", "fraction": 0.8,
                           "task": "valence"}
        config["train"] = {"epochs": 1, "batch_size": 8}
        config_path = write_json(tmp_path / "config.json", config)
        run = str(tmp_path / "run")
        code = main(["train", "--config", config_path,
                     "--images", f"{pipeline['run']}/images/manifest.csv",
                     "--out", run])
        assert code == EXIT_OK
        with open(f"{run}/train/split_train.csv") as fh:
            n_train = len(fh.read().splitlines()) - 1
        with open(f"{run}/train/split_test.csv") as fh:
            n_test = len(fh.read().splitlines()) - 1
        assert n_train > 0 and n_test > 0
        with open(f"{run}/train/epoch_log.csv") as fh:
            log = fh.read()
        assert ",val," in log
        # held-out split manifests must be directly consumable by eval
        code = main(["eval",
                     "--checkpoint", f"{run}/train/checkpoint_final.json",
                     "--images", f"{run}/train/split_test.csv",
                     "--config", config_path, "--out", run])
        assert code == EXIT_OK
        with open(f"{run}/eval/metrics.json") as fh:
            assert json.load(fh)["num_images"] == n_test


class TestGradcheckCommand:
    def test_suite_passes_and_reports(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "model_end_to_end" in out
        assert "FAIL" not in out

    def test_suite_covers_every_primitive(self):
        names = [name for name, _ in gradcheck_suite(seed=1)]
        for expected in ("matmul", "softmax_rows", "layer_norm", "conv2d",
                         "gelu", "model_end_to_end"):
            assert expected in names
