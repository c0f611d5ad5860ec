import json

import pytest

from turbovaed.config import (PRESETS, BlockConfig, DecoderConfig, apply_overrides, load_config, save_config)
from turbovaed.errors import ConfigError


def test_presets_have_the_table_factor_triples():
    assert load_config("ltx").factors == (8, 32, 32)
    assert load_config("dc").factors == (4, 32, 32)
    assert load_config("hunyuan").factors == (4, 8, 8)
    assert load_config("hunyuan").latent_channels == 16
    assert load_config("ltx").latent_channels == 128


def test_latent_and_video_shapes_agree():
    cfg = load_config("ltx")
    lat = cfg.latent_shape(17, 256, 256)
    assert lat == (1, 128, 3, 8, 8)
    assert cfg.video_shape(lat) == (1, 3, 17, 256, 256)
    with pytest.raises(ConfigError):
        cfg.latent_shape(16, 256, 256)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_json_round_trip(tmp_path, name):
    cfg = load_config(name)
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_with_kinds_switches_kernels():
    cfg = load_config("ltx").with_kinds(["mid"])
    assert [b.conv_kind for b in cfg.blocks] == ["dwsep", "standard", "standard", "standard", "standard", "standard"]
    assert cfg.block("mid").kernel_size == 5 and cfg.block("up_0").kernel_size == 3
    with pytest.raises(ConfigError):
        cfg.with_kinds(["head"])


def test_overrides():
    cfg = apply_overrides(load_config("ltx"), ["norm_groups=16", 'blocks.up_1.conv_kind="dwsep"',
                                               "blocks.up_1.kernel_size=5"])
    assert cfg.norm_groups == 16
    assert cfg.block("up_1").conv_kind == "dwsep"
    for bad in ["nope=1", "norm_groups", "blocks.up_9.conv_kind=dwsep", "blocks.up_1.colour=1", "norm_groups=3"]:
        with pytest.raises(ConfigError):
            apply_overrides(load_config("ltx"), [bad])


def test_validation_errors(tmp_path):
    mid, head = BlockConfig("mid", 8, 1), BlockConfig("head", 3)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [head, mid])
    with pytest.raises(ConfigError):
        DecoderConfig(4, [mid, BlockConfig("up_1", 8, 1, (2, 2)), head], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [mid, BlockConfig("head", 4)], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [BlockConfig("mid", 8, 1, conv_kind="sparse"), head], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [BlockConfig("mid", 8, 1, kernel_size=4), head], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [BlockConfig("mid", 6, 1), head], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [BlockConfig("mid", 8, 1, (2, 1)), head], norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig(4, [mid, head], temporal_padding="circular", norm_groups=4)
    with pytest.raises(ConfigError):
        DecoderConfig.from_dict({"latent_channels": 4})
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_shipped_schema_accepts_presets():
    jsonschema = pytest.importorskip("jsonschema")
    from pathlib import Path

    schema = json.loads((Path(__file__).parents[1] / "docs" / "config.schema.json").read_text())
    for name in PRESETS:
        jsonschema.validate(load_config(name).to_dict(), schema)
