import json

import pandas as pd
import pytest
from click.testing import CliRunner

from main import cli
from utils.app_initializer import APP_VERSION

ISOMETRY = """\
experiment: isometry-check
geometry:
  kind: flat_torus
  n1: 32
  n2: 32
distribution:
  kind: sobolev_random
  s: 1.0
eps_window:
  first: 2
  last: 3
seed: 3
"""


@pytest.fixture
def runner():
    return CliRunner()


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def run(runner, tmp_path, config, out='out', *extra):
    return runner.invoke(cli, ['run', str(config), '--output-dir', str(tmp_path / out),
                               '--cache-dir', str(tmp_path / 'cache'), *extra])


def test_invalid_eps_exits_with_one(runner, tmp_path):
    config = write(tmp_path, 'bad.yaml', "experiment: weyl\neps_window:\n  values: [1.5]\n")
    result = run(runner, tmp_path, config)
    assert result.exit_code == 1
    assert 'eps_window' in result.output
    assert not (tmp_path / 'out').exists()


def test_geometry_mismatch_exits_with_one(runner, tmp_path):
    config = write(tmp_path, 'mismatch.yaml', "experiment: wf-probe\ngeometry:\n  kind: circle\n")
    assert run(runner, tmp_path, config).exit_code == 1


def test_isometry_run_writes_outputs(runner, tmp_path):
    config = write(tmp_path, 'iso.yaml', ISOMETRY)
    result = run(runner, tmp_path, config, 'out', '--threads', '2')
    assert result.exit_code == 0, result.output
    out = tmp_path / 'out'
    table = pd.read_csv(out / 'net.csv')
    assert list(table.columns[:2]) == ['eps', 'value']
    assert len(table) == 2
    verdict = json.loads((out / 'verdict.json').read_text(encoding='utf-8'))
    assert verdict['passed'] is True
    assert verdict['version'] == APP_VERSION
    assert verdict['config']['experiment'] == 'isometry-check'
    assert 'spectral_tol' in verdict['tolerances']
    assert (out / 'diag.json').exists()


def test_verdict_echo_carries_resolved_overrides(runner, tmp_path, monkeypatch):
    monkeypatch.setenv('WAVEMOLLIFY_THREADS', '5')
    config = write(tmp_path, 'iso.yaml', ISOMETRY + "output_dir: ignored\n")
    assert run(runner, tmp_path, config, 'cli', '--threads', '3').exit_code == 0
    echo = json.loads((tmp_path / 'cli' / 'verdict.json').read_text(encoding='utf-8'))['config']
    assert echo['threads'] == 3
    assert echo['output_dir'] == str(tmp_path / 'cli')
    assert echo['cache_dir'] == str(tmp_path / 'cache')

    assert run(runner, tmp_path, config, 'env').exit_code == 0
    echo = json.loads((tmp_path / 'env' / 'verdict.json').read_text(encoding='utf-8'))['config']
    assert echo['threads'] == 5


def test_same_seed_gives_identical_tables(runner, tmp_path):
    config = write(tmp_path, 'iso.yaml', ISOMETRY)
    assert run(runner, tmp_path, config, 'a', '--seed', '11').exit_code == 0
    assert run(runner, tmp_path, config, 'b', '--seed', '11').exit_code == 0
    assert (tmp_path / 'a' / 'net.csv').read_bytes() == (tmp_path / 'b' / 'net.csv').read_bytes()
    verdict = json.loads((tmp_path / 'a' / 'verdict.json').read_text(encoding='utf-8'))
    assert verdict['seed'] == 11


def test_failed_verdict_exits_with_two(runner, tmp_path):
    # 残差非负，负容差必然判定失败
    config = write(tmp_path, 'strict.yaml', ISOMETRY + "tolerances:\n  laplacian_tol: -1.0\n")
    result = run(runner, tmp_path, config)
    assert result.exit_code == 2
    verdict = json.loads((tmp_path / 'out' / 'verdict.json').read_text(encoding='utf-8'))
    assert verdict['passed'] is False
    assert verdict['tolerances']['laplacian_tol'] == -1.0


def test_cache_commands_on_empty_cache(runner, tmp_path):
    for command in ('list', 'verify'):
        result = runner.invoke(cli, ['cache', command, '--cache-dir', str(tmp_path / 'cache')])
        assert result.exit_code == 0
        assert '缓存为空' in result.output
    result = runner.invoke(cli, ['cache', 'purge', '--cache-dir', str(tmp_path / 'cache')])
    assert result.exit_code == 0
    assert '0' in result.output


def test_version_option(runner):
    result = runner.invoke(cli, ['--version'])
    assert APP_VERSION in result.output


@pytest.mark.slow
def test_weyl_run_on_circle(runner, tmp_path):
    config = write(tmp_path, 'weyl.yaml', "experiment: weyl\ngeometry:\n  kind: circle\n  n: 1280\n")
    result = run(runner, tmp_path, config)
    assert result.exit_code == 0, result.output
    verdict = json.loads((tmp_path / 'out' / 'verdict.json').read_text(encoding='utf-8'))
    assert verdict['verdict']['exponent'] == pytest.approx(0.5, abs=0.05)
    listing = runner.invoke(cli, ['cache', 'list', '--cache-dir', str(tmp_path / 'cache')])
    assert listing.exit_code == 0
    assert '1280' in listing.output
