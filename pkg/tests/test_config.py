import pytest

from binep.config import RunConfig, apply_overrides, load_config, parse_value, preset_names
from binep.errors import ConfigError


def test_every_preset_validates_and_names_its_source():
    names = preset_names()
    assert {"mnist_1fc_fixed_alpha", "mnist_1fc_fullbin"} <= set(names)
    for n in names:
        cfg = load_config(n)
        assert cfg.source
        cfg.architecture(), cfg.relaxation(), cfg.optimizer()


def test_table_rows_encoded():
    c = load_config("mnist_1fc_fixed_alpha")
    r = c.relaxation()
    assert (r.T, r.K, r.beta) == (50, 10, 0.3)
    o = c.optimizer()
    assert o.gamma == [1e-4, 1e-5] and o.tau == [5e-7, 5e-7] and o.lr_bias == [0.05, 0.025]
    c = load_config("mnist_1fc_fullbin")
    a = c.architecture()
    assert a.hidden == (8192,) and a.output_size == 100 and a.activation == "heaviside"
    r = c.relaxation()
    assert (r.T, r.K, r.beta) == (20, 10, 2.0) and c.optimizer().gamma == [2e-6, 2e-6]


def test_overrides():
    cfg = load_config("mnist_1fc_fixed_alpha", ["data.train_subset=5000", "optim.gamma=[1e-3, 1e-4]", "out=\"x\""])
    assert cfg.data.train_subset == 5000 and cfg.optim.gamma == [1e-3, 1e-4] and cfg.out == "x"
    assert parse_value("abc") == "abc" and parse_value("true") is True
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_rejections():
    with pytest.raises(ConfigError):
        load_config(None, ["dynamics.beta=0"])
    with pytest.raises(ConfigError):
        load_config(None, ["arch.colour=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["optim.gamma=[1e-4, 1e-5, 1e-6]"])
    with pytest.raises(ConfigError):
        load_config(None, ["arch.activation=\"heaviside\""])  # needs the energy-based setting
    with pytest.raises(ConfigError):
        load_config("no_such_preset")
    with pytest.raises(ConfigError):
        load_config(None, ["gradcheck.beta=0"])


def test_toml_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('source = "t"\n[arch]\nhidden = [7]\nn_per_class = "auto"\nsetting = "energy_based"\nactivation = "heaviside"\n')
    cfg = load_config(str(p))
    assert cfg.architecture().n_per_class == 1  # 7 / 10 rounds to at least 1
    p.write_text("[arch\n")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_defaults():
    cfg = RunConfig()
    assert cfg.relaxation().dt == 0.5
    assert cfg.data.batch_size == 64
