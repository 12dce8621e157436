import json
import os

import yaml

from delone_rectifier.config import ENV_OUTPUT_DIR, Config

ROOT_CONFIG = os.path.join(os.path.dirname(__file__), '..', 'config.json')


def test_defaults_are_copied():
    config = Config()
    config.set('run', 'seed', 9)
    assert Config().get('run', 'seed') == 0
    assert Config.DEFAULT_CONFIG['run']['seed'] == 0


def test_root_config_matches_defaults():
    with open(ROOT_CONFIG) as f:
        assert json.load(f) == Config.DEFAULT_CONFIG


def test_missing_file_keeps_defaults(tmp_path):
    config = Config(str(tmp_path / 'absent.json'))
    assert config.get('flattener', 'blend_width') == 0.125


def test_json_merge_is_recursive(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'rectifier': {'d_cap': 8.0}, 'extra': {'note': 'x'}}))
    config = Config(str(path))
    assert config.get('rectifier', 'd_cap') == 8.0
    assert config.get('rectifier', 'density_mismatch') == 0.02
    assert config.get('extra', 'note') == 'x'


def test_yaml_config(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text('spectral:\n  pisot_margin: 1.0e-6\n')
    config = Config(str(path))
    assert config.get('spectral', 'pisot_margin') == 1e-6
    assert config.get('spectral', 'poly_max_n') == 12


def test_unreadable_file_keeps_defaults(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"run": ')
    assert Config(str(path)).get('run', 'jobs') == 1
    listed = tmp_path / 'list.yaml'
    listed.write_text('- 1\n- 2\n')
    assert Config(str(listed)).get('run', 'jobs') == 1


def test_save_config(tmp_path):
    config = Config()
    config.set('reporting', 'format', 'yaml')
    path = str(tmp_path / 'saved.yaml')
    config.save_config(path)
    with open(path) as f:
        assert yaml.safe_load(f)['reporting']['format'] == 'yaml'
    assert Config(path).get('reporting', 'format') == 'yaml'


def test_get_and_set_sections():
    config = Config()
    assert config.get()['run']['output_dir'] == 'output'
    assert config.get('nothing', 'here', 5) == 5
    config.set('custom', value={'a': 1})
    assert config.get('custom') == {'a': 1}


def test_resolve_order(monkeypatch):
    config = Config()
    monkeypatch.delenv(ENV_OUTPUT_DIR, raising=False)
    assert config.resolve('run', 'output_dir', env=ENV_OUTPUT_DIR) == 'output'
    monkeypatch.setenv(ENV_OUTPUT_DIR, '/tmp/from-env')
    assert config.resolve('run', 'output_dir', env=ENV_OUTPUT_DIR) == '/tmp/from-env'
    assert config.resolve('run', 'output_dir', flag='cli', env=ENV_OUTPUT_DIR) == 'cli'
