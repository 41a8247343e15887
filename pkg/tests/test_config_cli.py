"""Experiment config validation and CLI exit-code contracts."""

import json
import os
import pickle
from fractions import Fraction

import numpy as np
import pytest
import yaml

from semcom import config as config_mod
from semcom.backbone import new_backbone, save_backbone
from semcom.cli import main
from semcom.exceptions import ConfigError

from conftest import natural_crops


class TestConfig:
    def test_defaults_materialize(self):
        cfg = config_mod.from_dict({})
        assert cfg.channel.snr_db == 20.0
        assert cfg.recipe.stage1_epochs == 200
        assert cfg.recipe.stage2_epochs == 100
        assert cfg.recipe.batch_size == 128
        assert cfg.recipe.stage1_lr == 0.01
        assert cfg.recipe.stage2_lr == 0.0001
        assert cfg.recipe.lr_decay_every == 50
        assert cfg.recipe.lr_decay_factor == 0.5
        assert cfg.loss.tau == 0.1
        assert cfg.loss.projection_out_dim == 32

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_mod.from_dict({"chanel": {}})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_mod.from_dict({"channel": {"snr": 20}})

    def test_invalid_value_names_section(self):
        with pytest.raises(ConfigError, match="loss"):
            config_mod.from_dict({"loss": {"tau": -2}})

    def test_ratio_strings_parse_exactly(self):
        cfg = config_mod.from_dict({"codec": {"target_ratio": "1/48"}})
        assert cfg.codec.target_ratio == Fraction(1, 48)

    def test_overrides(self):
        cfg = config_mod.from_dict({})
        out = config_mod.apply_overrides(cfg, ["channel.snr_db=5", "recipe.method=deepjscc"])
        assert out.channel.snr_db == 5.0
        assert out.recipe.method == "deepjscc"

    def test_override_unknown_key_rejected(self):
        cfg = config_mod.from_dict({})
        with pytest.raises(ConfigError):
            config_mod.apply_overrides(cfg, ["channel.snr=5"])

    def test_resolved_roundtrip(self, tmp_path):
        cfg = config_mod.from_dict({"codec": {"target_ratio": "2/5"}})
        path = config_mod.write_resolved(cfg, tmp_path)
        with open(path) as fh:
            data = yaml.safe_load(fh)
        again = config_mod.from_dict(data)
        assert again == cfg

    def test_sweep_config(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text(
            "sweep:\n  methods: [proposed]\n  snr_dbs: [20]\n  ratios: ['1/6']\n"
            "  checkpoint_dir: cells\n"
        )
        cfg, grid = config_mod.load_sweep_config(path)
        assert grid.methods == ["proposed"]
        assert grid.ratios == [Fraction(1, 6)]

    def test_empty_sweep_grid_rejected(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text("sweep:\n  methods: []\n  snr_dbs: [20]\n  ratios: ['1/6']\n")
        with pytest.raises(ConfigError):
            config_mod.load_sweep_config(path)


@pytest.fixture(scope="module")
def mini_data_root(tmp_path_factory):
    """A cifar-10-batches-py layout with natural crops (format-level fixture)."""
    root = tmp_path_factory.mktemp("data")
    base = root / "cifar-10-batches-py"
    base.mkdir()
    rng = np.random.default_rng(0)
    crops = natural_crops(240, 32, seed=4)
    per_batch = 40
    for b, name in enumerate([f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]):
        chunk = crops[b * per_batch : (b + 1) * per_batch]
        payload = {
            "data": chunk.reshape(per_batch, -1),
            "labels": rng.integers(0, 10, per_batch).tolist(),
        }
        with open(base / name, "wb") as fh:
            pickle.dump(payload, fh)
    return root


@pytest.fixture(scope="module")
def backbone_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("bb") / "resnet56.ckpt"
    save_backbone(new_backbone(blocks_per_stage=9, seed=0), path)
    return path


def smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="proposed", **extra):
    data = {
        "dataset": {"name": "cifar10", "root": str(mini_data_root), "train_subset": 32},
        "codec": {"target_ratio": "1/6", "base_width": 4},
        "channel": {"snr_db": 20.0, "noise_seed": 1},
        "recipe": {
            "method": method, "stage1_epochs": 1, "stage2_epochs": 1,
            "batch_size": 16, "stage1_lr": 0.001, "stage2_lr": 0.001,
        },
        "backbone": {"checkpoint": str(backbone_ckpt)},
        "eval": {"noise_seeds": 2, "batch_size": 16},
        "output_dir": str(tmp_path / f"run_{method}"),
    }
    data.update(extra)
    path = tmp_path / f"{method}.yaml"
    path.write_text(yaml.safe_dump(data))
    return path, data


class TestCliTrain:
    def test_smoke_train_emits_artifacts(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt)
        assert main(["train", str(cfg_path)]) == 0
        out = data["output_dir"]
        assert os.path.exists(os.path.join(out, "config.resolved.yaml"))
        assert os.path.exists(os.path.join(out, "stage1.ckpt"))
        assert os.path.exists(os.path.join(out, "stage2.ckpt"))
        assert os.path.exists(os.path.join(out, "metrics_stage1.jsonl"))
        with open(os.path.join(out, "metrics_stage1.jsonl")) as fh:
            record = json.loads(fh.readline())
        assert {"stage", "epoch", "lr", "l_rec", "l_sem", "composite"} <= set(record)

    def test_rerun_reproduces_epoch0_log_line(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        line1 = open(os.path.join(data["output_dir"], "metrics_stage1.jsonl")).readline()
        os.remove(os.path.join(data["output_dir"], "metrics_stage1.jsonl"))
        assert main(["train", str(cfg_path)]) == 0
        line2 = open(os.path.join(data["output_dir"], "metrics_stage1.jsonl")).readline()
        assert line1 == line2

    def test_invalid_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("channel:\n  snr: 20\n")
        assert main(["train", str(bad)]) == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["train", str(tmp_path / "nope.yaml")]) == 2

    def test_stage2_without_stage1_exits_3(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, _ = smoke_config(tmp_path, mini_data_root, backbone_ckpt,
                                   output_dir=str(tmp_path / "virgin"))
        assert main(["train", str(cfg_path), "--stage", "2"]) == 3

    def test_staged_flow_links_lineage(self, tmp_path, mini_data_root, backbone_ckpt):
        from semcom.checkpoint import load_checkpoint

        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt)
        assert main(["train", str(cfg_path), "--stage", "1"]) == 0
        out = data["output_dir"]
        assert os.path.exists(os.path.join(out, "stage1.ckpt"))
        assert not os.path.exists(os.path.join(out, "stage2.ckpt"))
        assert main(["train", str(cfg_path), "--stage", "2"]) == 0
        s1 = load_checkpoint(os.path.join(out, "stage1.ckpt"))
        s2 = load_checkpoint(os.path.join(out, "stage2.ckpt"))
        assert s2["parent_hash"] == s1["_content_hash"]

    def test_missing_backbone_exits_3(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, _ = smoke_config(
            tmp_path, mini_data_root, backbone_ckpt,
            backbone={"checkpoint": str(tmp_path / "ghost.ckpt")},
        )
        assert main(["train", str(cfg_path)]) == 3

    def test_override_flag_wins_and_is_persisted(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path), "--set", "channel.snr_db=5"]) == 0
        with open(os.path.join(data["output_dir"], "config.resolved.yaml")) as fh:
            resolved = yaml.safe_load(fh)
        assert resolved["channel"]["snr_db"] == 5.0


class TestCliEvaluate:
    def test_evaluate_prints_row(self, tmp_path, mini_data_root, backbone_ckpt, capsys):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        capsys.readouterr()  # drop the train command's output
        ckpt = os.path.join(data["output_dir"], "stage1.ckpt")
        assert main(["evaluate", str(cfg_path), ckpt, "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        header = out.splitlines()[0]
        assert header.startswith("method,snr_db,target_ratio,achieved_ratio,accuracy_mean")
        row = out.splitlines()[1].split(",")
        assert row[0] == "deepjscc"
        assert row[2] == "1/6"
        assert os.path.exists(os.path.join(data["output_dir"], "evaluation.csv"))

    def test_malformed_checkpoint_exits_4(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, _ = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"not a checkpoint")
        assert main(["evaluate", str(cfg_path), str(junk)]) == 4

    def test_incompatible_codec_exits_4(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        ckpt = os.path.join(data["output_dir"], "stage1.ckpt")
        other_cfg, _ = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc",
                                    codec={"target_ratio": "1/48", "base_width": 4})
        assert main(["evaluate", str(other_cfg), ckpt]) == 4


class TestCliSweepAndReconstruct:
    def test_sweep_four_cells(self, tmp_path, mini_data_root, backbone_ckpt):
        from semcom.evaluation import cell_dirname

        cells_root = tmp_path / "cells"
        for ratio in ("1/6", "1/48"):
            for method in ("deepjscc",):
                out_dir = cells_root / cell_dirname(method, 20.0, Fraction(ratio))
                cfg_path, _ = smoke_config(
                    tmp_path, mini_data_root, backbone_ckpt, method=method,
                    codec={"target_ratio": ratio, "base_width": 4},
                    output_dir=str(out_dir),
                )
                assert main(["train", str(cfg_path)]) == 0
        sweep_path = tmp_path / "grid.yaml"
        sweep_path.write_text(yaml.safe_dump({
            "sweep": {"methods": ["deepjscc"], "snr_dbs": [20.0],
                      "ratios": ["1/6", "1/48"], "checkpoint_dir": str(cells_root)},
            "dataset": {"name": "cifar10", "root": str(mini_data_root)},
            "backbone": {"checkpoint": str(backbone_ckpt)},
            "eval": {"noise_seeds": 2, "batch_size": 16, "max_images": 8},
            "output_dir": str(tmp_path / "sweep_out"),
        }))
        assert main(["sweep", str(sweep_path)]) == 0
        csv_path = tmp_path / "sweep_out" / "results.csv"
        assert csv_path.exists()
        assert len(csv_path.read_text().strip().splitlines()) == 3  # header + 2 cells
        assert (tmp_path / "sweep_out" / "accuracy_snr20.png").exists()
        assert (tmp_path / "sweep_out" / "psnr_snr20.png").exists()

    def test_empty_grid_exits_2(self, tmp_path):
        sweep_path = tmp_path / "grid.yaml"
        sweep_path.write_text(yaml.safe_dump({
            "sweep": {"methods": [], "snr_dbs": [], "ratios": []},
        }))
        assert main(["sweep", str(sweep_path)]) == 2

    def test_reconstruct_writes_image_and_sidecar(self, tmp_path, mini_data_root, backbone_ckpt):
        from PIL import Image

        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        ckpt = os.path.join(data["output_dir"], "stage1.ckpt")
        img_path = tmp_path / "input.png"
        Image.fromarray(natural_crops(1, 64, seed=8)[0].transpose(1, 2, 0)).save(img_path)
        out_path = tmp_path / "recon.png"
        assert main(["reconstruct", ckpt, str(img_path), "--snr", "20",
                     "--out", str(out_path), "--panel"]) == 0
        assert out_path.exists()
        with open(str(out_path) + ".metrics.json") as fh:
            sidecar = json.load(fh)
        assert "psnr_db" in sidecar and "ms_ssim" in sidecar
        assert (tmp_path / "recon.panel.png").exists()
        with Image.open(out_path) as im:
            assert im.size == (64, 64)

    def test_reconstruct_bad_dims_exits_2(self, tmp_path, mini_data_root, backbone_ckpt, capsys):
        from PIL import Image

        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        ckpt = os.path.join(data["output_dir"], "stage1.ckpt")
        img_path = tmp_path / "odd.png"
        Image.fromarray(np.zeros((30, 33, 3), dtype=np.uint8)).save(img_path)
        assert main(["reconstruct", ckpt, str(img_path)]) == 2
        assert "pad to" in capsys.readouterr().err

    def test_reconstruct_missing_input_exits_2(self, tmp_path, mini_data_root, backbone_ckpt):
        cfg_path, data = smoke_config(tmp_path, mini_data_root, backbone_ckpt, method="deepjscc")
        assert main(["train", str(cfg_path)]) == 0
        ckpt = os.path.join(data["output_dir"], "stage1.ckpt")
        assert main(["reconstruct", ckpt, str(tmp_path / "ghost.png")]) == 2
