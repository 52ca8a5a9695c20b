"""TOML-subset config loading: happy path and the error taxonomy."""

import pytest

from ddt.configio import ConfigError, config_from_sections, load_config, parse_toml_subset

FULL = """
# training run, toy scale
[network]
base_channels = 8
encoder_blocks = [1, 1, 1]
bottleneck_blocks = 1
decoder_blocks = [1, 1, 1]
refinement_blocks = 1
heads = [1, 1, 2, 2]
p_local = 4
p_global = 4
gamma = 2
ffn_expansion = 2
branch = "dual"
attention = "deformable"
dtype = "f32"

[train]
iterations = 120
lr_init = 1e-3
lr_final = 1.0e-6
batch_size = 2
patch_schedule = [[0, 32], [80, 64]]
augment = true
seed = 41
sigma_min = 0.0
sigma_max = 50.0
log_every = 10

[data]
train_images = 4
image_size = 96
"""


def test_full_document(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(FULL)
    cfg = load_config(path)
    assert cfg.network.base_channels == 8
    assert cfg.network.encoder_blocks == (1, 1, 1)
    assert cfg.network.heads == (1, 1, 2, 2)
    assert cfg.network.branch == "dual"
    assert cfg.train.iterations == 120
    assert cfg.train.lr_init == pytest.approx(1e-3)
    assert cfg.train.patch_schedule == ((0, 32), (80, 64))
    assert cfg.train.augment is True
    assert cfg.train.seed == 41
    assert cfg.data.train_images == 4
    assert cfg.data.image_size == 96


def test_defaults_when_sections_missing():
    cfg = config_from_sections(parse_toml_subset("[train]\niterations = 10\n"))
    assert cfg.network.base_channels == 32
    assert cfg.train.iterations == 10
    assert cfg.data.train_images == 8


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as exc:
        config_from_sections(parse_toml_subset("[optimizer]\nlr = 1\n"))
    assert "optimizer" in str(exc.value)


def test_unknown_key_rejected_with_line():
    text = "[network]\nbase_channels = 8\nwidth = 9\n"
    with pytest.raises(ConfigError) as exc:
        config_from_sections(parse_toml_subset(text))
    msg = str(exc.value)
    assert "width" in msg and "3" in msg


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_toml_subset("[train]\nseed = 1\nseed = 2\n")
    assert "seed" in str(exc.value)


def test_duplicate_section_rejected():
    with pytest.raises(ConfigError):
        parse_toml_subset("[train]\nseed = 1\n[train]\nlog_every = 5\n")


def test_type_errors_are_loud():
    with pytest.raises(ConfigError) as exc:
        config_from_sections(parse_toml_subset('[train]\niterations = "many"\n'))
    assert "iterations" in str(exc.value)
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset("[train]\niterations = true\n"))
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset("[network]\nheads = [1, 2.5, 4, 8]\n"))


def test_int_accepted_where_float_expected():
    cfg = config_from_sections(parse_toml_subset("[train]\nsigma_max = 30\n"))
    assert cfg.train.sigma_max == 30.0


def test_syntax_errors():
    with pytest.raises(ConfigError):
        parse_toml_subset("[train\nseed = 1\n")
    with pytest.raises(ConfigError):
        parse_toml_subset("[train]\nseed\n")
    with pytest.raises(ConfigError):
        parse_toml_subset("[train]\nseed = \n")
    with pytest.raises(ConfigError):
        parse_toml_subset("seed = 1\n")  # key before any section


def test_multiline_arrays_and_comments():
    text = (
        "[train]\n"
        "patch_schedule = [\n"
        "  [0, 64],   # warmup\n"
        "  [100, 128],\n"
        "]\n"
    )
    cfg = config_from_sections(parse_toml_subset(text))
    assert cfg.train.patch_schedule == ((0, 64), (100, 128))


def test_strings_with_escapes_and_hash():
    sections = parse_toml_subset('[data]\nimage_dir = "my # dir\\t"\n')
    value, _ = sections["data"]["image_dir"]
    assert value == "my # dir\t"


def test_underscored_integers():
    cfg = config_from_sections(parse_toml_subset("[train]\niterations = 10_000\n"))
    assert cfg.train.iterations == 10_000


def test_cross_validation_runs():
    # patch side must divide the network's block tiling requirement
    text = "[network]\np_local = 8\np_global = 8\n[train]\npatch_schedule = [[0, 48]]\n"
    with pytest.raises(ConfigError) as exc:
        config_from_sections(parse_toml_subset(text))
    assert "divisible" in str(exc.value)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        config_from_sections(
            parse_toml_subset("[train]\npatch_schedule = [[10, 64]]\n")
        )  # must start at iteration 0
    with pytest.raises(ConfigError):
        config_from_sections(
            parse_toml_subset("[train]\npatch_schedule = [[0, 64], [0, 128]]\n")
        )  # strictly increasing switch points


def test_sigma_range_validation():
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset("[train]\nsigma_min = 30\nsigma_max = 10\n"))
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset("[train]\nsigma_min = -1\n"))


def test_network_field_validation_maps_to_config_error():
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset('[network]\nbranch = "wide"\n'))
    with pytest.raises(ConfigError):
        config_from_sections(parse_toml_subset("[network]\nheads = [3, 3, 3, 3]\n"))


def test_missing_file_is_config_error():
    # unreadable config maps onto the config-error exit path, not a crash
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.toml")
