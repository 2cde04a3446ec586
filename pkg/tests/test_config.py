"""Config validation, serialization, overrides, and the two reference
configurations."""

from __future__ import annotations

import json

import numpy as np
import pytest

from sdformer.config import (
    DataConfig,
    IOConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    apply_overrides,
    kitti_model_config,
    load_run_config,
    nyu_model_config,
)
from sdformer.errors import ConfigError

from conftest import make_tiny_config


class TestModelConfig:
    def test_reference_configs_validate(self):
        nyu = nyu_model_config()
        assert nyu.base_channels == 24
        assert nyu.blocks == (2, 4, 6, 8)
        assert nyu.heads == (1, 2, 4, 8)
        assert nyu.expansion == pytest.approx(2.88)
        kitti = kitti_model_config()
        assert kitti.base_channels == 12
        assert kitti.blocks == (2, 2, 6, 8)
        assert kitti.expansion == pytest.approx(2.08)

    def test_channels_double_per_level(self):
        cfg = nyu_model_config()
        assert [cfg.channels_at_level(i) for i in range(1, 5)] == [24, 48, 96, 192]

    def test_per_head_dim_constant(self):
        # every stage of each reference config has the same per-head width
        for cfg, want in ((nyu_model_config(), 8), (kitti_model_config(), 4)):
            for i in range(4):
                branch = cfg.channels_at_level(i + 1) // 3
                assert branch % cfg.heads[i] == 0
                assert branch // cfg.heads[i] == want

    def test_refinement_heads_preserve_stage1_head_dim(self):
        cfg = nyu_model_config()
        assert cfg.refinement_heads() == 3 * cfg.heads[0]
        branch = 3 * cfg.base_channels // 3
        assert branch // cfg.refinement_heads() == 8

    def test_hidden_width_floor(self):
        cfg = make_tiny_config(expansion=2.88)
        assert cfg.hidden_width(6) == int(2.88 * 6)  # floor, not round

    def test_rejects_indivisible_channels(self):
        # base channels must keep every stage divisible into 3 branches x heads
        with pytest.raises(ConfigError):
            make_tiny_config(base_channels=10)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ConfigError):
            make_tiny_config(blocks=(1, 1, 1))  # needs 4 stages
        with pytest.raises(ConfigError):
            make_tiny_config(heads=(0, 2, 4, 8))
        with pytest.raises(ConfigError):
            make_tiny_config(windows=(((4, 4), (2, 2)),) * 4)  # 3 windows per stage
        with pytest.raises(ConfigError):
            make_tiny_config(expansion=0.0)
        with pytest.raises(ConfigError):
            make_tiny_config(attention_variant="other")
        with pytest.raises(ConfigError):
            make_tiny_config(ffn_variant="other")

    def test_variants_accepted(self):
        for attn in ("dwsa", "wsa"):
            for ffn in ("gffn", "mlp"):
                cfg = make_tiny_config(attention_variant=attn, ffn_variant=ffn)
                assert cfg.attention_variant == attn
                assert cfg.ffn_variant == ffn

    def test_roundtrip_dict(self):
        cfg = nyu_model_config()
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg
        blob = json.dumps(cfg.to_dict())
        assert ModelConfig.from_dict(json.loads(blob)) == cfg


class TestTrainConfig:
    def test_defaults_match_reference_protocol(self):
        tc = TrainConfig()
        assert tc.base_lr == pytest.approx(3e-4)
        assert tc.epochs == 25

    def test_factor_threshold_length_mismatch(self):
        with pytest.raises(ConfigError):
            TrainConfig(factors=(1.0, 0.2), epoch_thresholds=(10,))

    def test_thresholds_must_increase(self):
        with pytest.raises(ConfigError):
            TrainConfig(factors=(1.0, 0.2), epoch_thresholds=(15, 10))


class TestRunConfig:
    def make_run(self, tmp_path):
        return RunConfig(
            model=make_tiny_config(),
            train=TrainConfig(factors=(1.0,), epoch_thresholds=(1,), epochs=1,
                              batch_size=2),
            data=DataConfig(dir=str(tmp_path / "d"), pattern="uniform_random",
                            count=50, target="none", size=(16, 16),
                            num_samples=4),
            io=IOConfig(checkpoint=str(tmp_path / "c.sdck"),
                        report=str(tmp_path / "r.json"),
                        log=str(tmp_path / "l.jsonl")),
        )

    def test_json_roundtrip(self, tmp_path):
        run = self.make_run(tmp_path)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(run.to_dict()))
        again = load_run_config(p)
        assert again == run

    def test_unknown_keys_rejected(self, tmp_path):
        run = self.make_run(tmp_path)
        d = run.to_dict()
        d["model"]["zzz"] = 1
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(d))
        with pytest.raises(ConfigError):
            load_run_config(p)

    def test_unreadable_and_invalid_json(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(bad)

    def test_overrides(self, tmp_path):
        run = self.make_run(tmp_path)
        d = apply_overrides(run.to_dict(), [
            "train.epochs=7",
            "model.expansion=2.5",
            "data.size=[32,32]",
            "io.checkpoint=/tmp/x.sdck",
        ])
        again = RunConfig.from_dict(d)
        assert again.train.epochs == 7
        assert again.model.expansion == pytest.approx(2.5)
        assert again.data.size == (32, 32)
        assert again.io.checkpoint == "/tmp/x.sdck"

    def test_override_bad_path_rejected(self, tmp_path):
        run = self.make_run(tmp_path)
        with pytest.raises(ConfigError):
            apply_overrides(run.to_dict(), ["train.epochs"])  # missing '='
        with pytest.raises(ConfigError):
            apply_overrides(run.to_dict(), ["epochs=1"])  # no section
        # unknown paths survive the merge but fail strict schema validation
        merged = apply_overrides(run.to_dict(), ["nosuch.key=1"])
        with pytest.raises(ConfigError):
            RunConfig.from_dict(merged)
