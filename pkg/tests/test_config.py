import json

import pytest

from gesturekit.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    from_dict,
    load_config,
    with_section,
)


def test_defaults_valid_and_roundtrip(tmp_path):
    cfg = RunConfig().validate()
    (tmp_path / "c.json").write_text(cfg.to_json())
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_defaults_match_component_defaults():
    cfg = RunConfig()
    seg = cfg.segmentation.build()
    assert seg.cut_factor == 1.6 and seg.input_side == 64
    cc = cfg.classifier.build(4, 64, 0)
    assert cc.batch_size == 64 and cc.epochs == 30 and cc.lr_at(11) == 1e-3
    assert cfg.tracking.q == 0.05 and cfg.tracking.r == 4.0
    assert cfg.hmi.k == 5 and cfg.hmi.conf_min == 0.8


@pytest.mark.parametrize("obj,msg", [
    ({"segmentaton": {}}, "unknown section"),
    ({"tracking": {"qq": 1}}, "unknown key"),
    ({"tracking": {"q": -1}}, "tracking.q"),
    ({"tracking": {"max_coast": 2.5}}, "integer"),
    ({"hmi": {"context": "tv"}}, "hmi.context"),
    ({"hmi": {"conf_min": 1.2}}, "hmi.conf_min"),
    ({"hmi": {"k": 0}}, "hmi.k"),
    ({"classifier": {"heads": 3}}, "divide"),
    ({"classifier": {"dropout": 1.0}}, "dropout"),
    ({"classifier": {"arch": "vgg16"}}, "arch"),
    ({"classifier": {"mlp_head": []}}, "mlp_head"),
    ({"segmentation": {"input_side": 100}}, "input_side"),
    ({"segmentation": {"open_kernel": 4}}, "odd"),
    ({"segmentation": {"sat_lo": 0.9, "sat_hi": 0.1}}, "sat"),
    ({"segmentation": {"diff_threshold": "30"}}, "number"),
    ({"io": {"data": 3}}, "io.data"),
    ({"seed": -1}, "seed"),
    ({"seed": True}, "seed"),
    ({"tracking": []}, "object"),
    ([], "object"),
])
def test_validation_errors(obj, msg):
    with pytest.raises(ConfigError, match=msg):
        from_dict(obj)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{\n  oops")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(tmp_path / "bad.json")


def test_overrides():
    cfg = apply_overrides(RunConfig(), ["tracking.q=0.1", "hmi.context=mouse", "seed=9",
                                        "classifier.mlp_head=[32, 16]", "io.data=some/dir"])
    assert cfg.tracking.q == 0.1
    assert cfg.hmi.context == "mouse"
    assert cfg.seed == 9
    assert cfg.classifier.mlp_head == [32, 16]
    assert cfg.io.data == "some/dir"


@pytest.mark.parametrize("item", ["tracking.q", "nope.q=1", "tracking.zz=1", "tracking=1",
                                  "tracking.q=-3"])
def test_override_errors(item):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), [item])


def test_with_section():
    cfg = RunConfig()
    assert with_section(cfg, "hmi", k=None) is cfg
    new = with_section(cfg, "hmi", k=3, conf_min=None)
    assert new.hmi.k == 3 and new.hmi.conf_min == 0.8 and cfg.hmi.k == 5
    with pytest.raises(ConfigError):
        with_section(cfg, "hmi", k=0)


def test_config_file_is_plain_json(tmp_path):
    obj = json.loads(RunConfig().to_json())
    assert set(obj) == {"segmentation", "classifier", "tracking", "hmi", "io", "seed"}
