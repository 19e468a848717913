import json
import math

import pytest

from config import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config,
    parse_attempts,
)
from errors import ConfigInvalid


def test_defaults():
    cfg = config_from_dict({'experiment': 'energy'})
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.seed == 0 and cfg.h == 128
    assert cfg.R_values == (1, 2, math.inf)
    assert cfg.verify_tiles == 1000


def test_every_experiment_name_is_accepted():
    for name in EXPERIMENT_NAMES:
        assert config_from_dict({'experiment': name}).experiment == name


def test_unknown_experiment_or_key():
    with pytest.raises(ConfigInvalid):
        config_from_dict({'experiment': 'fft'})
    with pytest.raises(ConfigInvalid):
        config_from_dict({})
    with pytest.raises(ConfigInvalid):
        config_from_dict({'experiment': 'energy', 'colour': 'red'})


def test_attempts_parsing():
    assert parse_attempts('inf') == math.inf
    assert parse_attempts(' INF ') == math.inf
    assert parse_attempts(3) == 3
    for bad in (0, -1, 2.5, True, 'forever'):
        with pytest.raises(ConfigInvalid):
            parse_attempts(bad)
    cfg = config_from_dict({'experiment': 'perr-curve', 'R_values': [1, 'inf']})
    assert cfg.R_values == (1, math.inf)


@pytest.mark.parametrize('raw', [
    {'seed': 'one'},
    {'bits': 1},
    {'h': 0},
    {'verify_tiles': 0},
    {'p_values': [0.1, 1.5]},
    {'p_values': []},
    {'k_values': [1, 'two']},
    {'momentum': 1.0},
    {'core_kind': 'MP'},
    {'dataset': 'cifar'},
    {'master_weights': 'yes'},
    {'converter': {'Cu': -1}},
    {'converter': {'Rload': 1.0}},
])
def test_bad_values(raw):
    with pytest.raises(ConfigInvalid):
        config_from_dict({'experiment': 'train', **raw})


def test_lists_become_tuples():
    cfg = config_from_dict({'experiment': 'infer', 'b_values': [4, 8], 'p_values': [0, 1]})
    assert cfg.b_values == (4, 8)
    assert cfg.p_values == (0.0, 1.0)


def test_load_config(tmp_path):
    path = tmp_path / 'cfg.json'
    path.write_text(json.dumps({'experiment': 'rrns-mc', 'trials': 50, 'converter': {'Cu': 1e-15}}))
    cfg = load_config(str(path))
    assert cfg.trials == 50
    assert cfg.converter == {'Cu': 1e-15}

    with pytest.raises(ConfigInvalid):
        load_config(str(tmp_path / 'missing.json'))
    path.write_text('{not json')
    with pytest.raises(ConfigInvalid):
        load_config(str(path))


def test_overrides_layering(monkeypatch):
    cfg = config_from_dict({'experiment': 'verify', 'seed': 5, 'output_dir': 'from-file'})
    monkeypatch.delenv('RNS_WORKBENCH_OUTPUT_DIR', raising=False)
    monkeypatch.delenv('RNS_WORKBENCH_THREADS', raising=False)
    assert apply_overrides(cfg) == cfg

    monkeypatch.setenv('RNS_WORKBENCH_OUTPUT_DIR', 'from-env')
    monkeypatch.setenv('RNS_WORKBENCH_THREADS', '4')
    env_only = apply_overrides(cfg)
    assert (env_only.output_dir, env_only.workers, env_only.seed) == ('from-env', 4, 5)

    flags = apply_overrides(cfg, seed=9, output_dir='from-flag')
    assert (flags.output_dir, flags.seed) == ('from-flag', 9)


@pytest.mark.parametrize('threads', ['many', '0'])
def test_bad_thread_count(monkeypatch, threads):
    monkeypatch.setenv('RNS_WORKBENCH_THREADS', threads)
    with pytest.raises(ConfigInvalid):
        apply_overrides(config_from_dict({'experiment': 'verify'}))


def test_shipped_configs_load():
    import glob
    import os
    paths = sorted(glob.glob(os.path.join(os.path.dirname(__file__), 'configs', '*.json')))
    assert paths
    for path in paths:
        assert load_config(path).experiment in EXPERIMENT_NAMES
