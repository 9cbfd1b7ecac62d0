import pytest

from utils.config_loader import EXPERIMENTS, ExperimentConfig, load_config, parse_config
from utils.errors import ConfigError


def test_defaults():
    config = parse_config("experiment: weyl\n")
    assert config.geometry.kind == 'circle'
    assert config.engine == 'spectral'
    assert config.eps_window.grid() == [2.0 ** -j for j in range(2, 9)]
    assert config.seed == 0
    assert config.echo()['experiment'] == 'weyl'


def test_all_experiment_names_accepted():
    for name in EXPERIMENTS:
        assert parse_config(f"experiment: {name}\n").experiment == name
    assert len(EXPERIMENTS) == 15


def test_eps_out_of_range_is_rejected_with_line():
    text = "experiment: weyl\neps_window:\n  values: [1.5, 0.5]\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert 'eps_window' in str(info.value)
    assert info.value.line == 2


def test_eps_must_decrease():
    with pytest.raises(ConfigError):
        parse_config("experiment: weyl\neps_window:\n  values: [0.25, 0.5]\n")


def test_unknown_experiment_and_keys():
    with pytest.raises(ConfigError):
        parse_config("experiment: heat\n")
    with pytest.raises(ConfigError) as info:
        parse_config("experiment: weyl\ngeometry:\n  kind: circle\n  radius: 3\n")
    assert info.value.line == 4


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("experiment: weyl\ngeometry:\n  kind: [circle\n")
    assert info.value.line is not None
    assert '行' in str(info.value)


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config("- weyl\n")


def test_json_surface(tmp_path):
    path = tmp_path / 'exp.json'
    path.write_text('{"experiment": "slice", "slices": {"count": 9}}', encoding='utf-8')
    config = load_config(path)
    assert config.slices.count == 9
    bad = tmp_path / 'bad.json'
    bad.write_text('{"experiment": \n', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(bad)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'nope.yaml')


def test_kernel_and_grid_validation():
    with pytest.raises(ConfigError):
        parse_config("experiment: weyl\nkernel:\n  plateau_radius: 2\n  support_radius: 1\n")
    with pytest.raises(ConfigError):
        parse_config("experiment: weyl\ngeometry:\n  n: 4\n")


def test_model_copy_override():
    config = ExperimentConfig(experiment='weyl')
    assert config.model_copy(update={'seed': 9}).seed == 9
