"""
Tests for configuration loading and the sample store
"""

import gzip
import json

import pytest
from pathlib import Path

# Add project root to path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.data.sample_store import SampleStore, config_hash, open_stream, read_samples, read_summary
from src.utils.config import (
    PROJECT_ROOT, deep_merge, get_output_dir, load_campaign, load_config, section,
)
from src.utils.errors import ConfigError, StorageError

CAMPAIGN_TOML = """
name = "cfg"

[system]
lambdas = [2.0, 1.0]

[[targets]]
name = "top"
axis = 2

[ladder]
epsilons = [0.2, 0.1]

[output]
dir = "${RARE_EXIT_TEST_DIR}"

[engine.simulation]
block_size = 128
"""


@pytest.fixture
def campaign_file(tmp_path):
    path = tmp_path / 'campaign.toml'
    path.write_text(CAMPAIGN_TOML)
    return path


class TestLoadConfig:

    def test_engine_defaults(self):
        config = load_config()
        assert config['simulation']['max_dt'] == pytest.approx(1e-3)
        assert config['stats']['min_conditioned'] == 200
        assert config['flow']['method'] == 'DOP853'

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / 'missing.yaml'))

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / 'bad.yaml'
        path.write_text('simulation: [1, 2\n')
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestLoadCampaign:

    def test_engine_table_merges_over_defaults(self, campaign_file):
        campaign = load_campaign(str(campaign_file))
        assert campaign['engine']['simulation']['block_size'] == 128
        assert campaign['engine']['simulation']['max_dt'] == pytest.approx(1e-3)
        assert campaign['source_path'] == str(campaign_file)
        assert section(campaign, 'simulation')['block_size'] == 128

    def test_env_substitution(self, campaign_file, tmp_path, monkeypatch):
        monkeypatch.setenv('RARE_EXIT_TEST_DIR', str(tmp_path / 'out'))
        campaign = load_campaign(str(campaign_file))
        assert get_output_dir(campaign) == tmp_path / 'out'

    def test_unset_placeholder_falls_back(self, campaign_file, monkeypatch):
        monkeypatch.delenv('RARE_EXIT_TEST_DIR', raising=False)
        monkeypatch.delenv('RARE_EXIT_OUT', raising=False)
        campaign = load_campaign(str(campaign_file))
        assert get_output_dir(campaign) == PROJECT_ROOT / 'runs'

    def test_override_wins(self, campaign_file, tmp_path):
        campaign = load_campaign(str(campaign_file))
        assert get_output_dir(campaign, str(tmp_path)) == tmp_path

    def test_parse_error_names_the_line(self, tmp_path):
        path = tmp_path / 'bad.toml'
        path.write_text('name = "ok"\n[ladder\nepsilons = [0.1]\n')
        with pytest.raises(ConfigError) as info:
            load_campaign(str(path))
        assert 'line 2' in str(info.value)

    def test_missing_campaign(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_campaign(str(tmp_path / 'none.toml'))


class TestHelpers:

    def test_deep_merge_leaves_inputs_alone(self):
        base = {'a': {'b': 1, 'c': 2}}
        merged = deep_merge(base, {'a': {'c': 3}})
        assert merged == {'a': {'b': 1, 'c': 3}}
        assert base == {'a': {'b': 1, 'c': 2}}

    def test_section(self):
        assert section(None, 'stats') == {}
        assert section({'stats': {'alpha': 0.05}}, 'stats') == {'alpha': 0.05}
        assert section({'engine': {'stats': {'alpha': 0.02}}, 'stats': {}}, 'stats') == {'alpha': 0.02}


class TestConfigHash:

    def test_key_order_does_not_matter(self):
        assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})

    def test_excluded_keys(self):
        base = {'system': {'lambdas': [2.0, 1.0]}, 'simulation': {'seed': 1}, 'engine': {}}
        noisy = dict(base, output={'dir': 'x'}, metadata={'t': 1}, source_path='a.toml',
                     simulation={'seed': 1, 'threads': 8},
                     engine={'paths': {'output': 'y'}, 'logging': {'level': 'DEBUG'}})
        assert config_hash(base) == config_hash(noisy)

    def test_content_changes_hash(self):
        assert config_hash({'simulation': {'seed': 1}}) != config_hash({'simulation': {'seed': 2}})

    def test_hash_does_not_mutate(self):
        campaign = {'simulation': {'seed': 1, 'threads': 4}}
        config_hash(campaign)
        assert campaign['simulation']['threads'] == 4


class TestSampleStore:

    RECORDS = [
        {'trajectory_id': 0, 'epsilon': 0.1, 'time': 1.5, 'location': [0.1, 1.0], 'face': [2, 1]},
        {'trajectory_id': 3, 'epsilon': 0.1, 'time': 2.25, 'location': [-1.0, 0.3], 'face': [1, -1]},
    ]

    def test_paths(self, tmp_path):
        store = SampleStore(tmp_path, 'abcdef0123456789', compress=True)
        assert store.samples_path(2).name == 'samples_abcdef012345_eps02.jsonl.gz'
        assert store.summary_path().name == 'summary_abcdef012345.json'

    def test_gzip_is_deterministic(self, tmp_path):
        a = SampleStore(tmp_path / 'a', 'f' * 64, compress=True).write_samples(0, self.RECORDS)
        b = SampleStore(tmp_path / 'b', 'f' * 64, compress=True).write_samples(0, self.RECORDS)
        assert a.read_bytes() == b.read_bytes()
        assert gzip.decompress(a.read_bytes()).decode().count('\n') == 2

    def test_read_back(self, tmp_path):
        path = SampleStore(tmp_path, 'e' * 64).write_samples(1, self.RECORDS)
        frame = read_samples(path)
        assert frame['trajectory_id'].tolist() == [0, 3]
        assert frame['location'].tolist() == [[0.1, 1.0], [-1.0, 0.3]]
        assert frame['face'].tolist() == [[2, 1], [1, -1]]

    def test_empty_sample_file(self, tmp_path):
        path = SampleStore(tmp_path, 'e' * 64).write_samples(0, [])
        assert read_samples(path).empty

    def test_missing_and_corrupt_files(self, tmp_path):
        with pytest.raises(StorageError):
            read_samples(tmp_path / 'samples_x.jsonl')
        with pytest.raises(StorageError):
            read_summary(tmp_path / 'summary_x.json')
        corrupt = tmp_path / 'summary_bad.json'
        corrupt.write_text('{"cells": [')
        with pytest.raises(StorageError):
            read_summary(corrupt)

    def test_summary_round_trip(self, tmp_path):
        store = SampleStore(tmp_path, 'd' * 64)
        path = store.write_summary({'name': 'x', 'cells': []})
        assert read_summary(path) == {'name': 'x', 'cells': []}
        assert json.loads(path.read_text())['name'] == 'x'

    def test_open_stream_plain(self, tmp_path):
        path = tmp_path / 'plain.txt'
        with open_stream(path, 'w') as stream:
            stream.write('line\n')
        with open_stream(path) as stream:
            assert stream.read() == 'line\n'


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
