"""End-to-end tests for the command-line pipeline."""

import json
import os
import sys

import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src import cli
from src.cli import build_parser, config_from_args, main
from src.errors import NumericalError
from src.synthgen import pivot_design


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.delenv('SWISSMETRO_PATH', raising=False)
    design_path = tmp_path / 'design.csv'
    pivot_design(40, seed=0).to_csv(str(design_path))
    out = tmp_path / 'out'
    config = {
        'seed': 3,
        'output_dir': str(out),
        'design_path': str(design_path),
        'data_path': str(out / 'synthetic.csv'),
        'dgp': {'preset': 'linear'},
        'repetitions': 2,
        'hidden_layers': 1,
        'nodes_per_layer': 3,
        'train': {'max_epochs': 2, 'patience': 1},
        'drop_negative': False,
    }
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps(config))
    return out, str(config_path)


class TestParser:
    def test_flags_override_config(self, workspace):
        _, config_path = workspace
        args = build_parser().parse_args(['train', '--config', config_path, '--seed', '9',
                                          '--variant', 'asu', '--use_asc'])
        config = config_from_args(args)
        assert config.seed == 9
        assert config.variant == 'asu'
        assert config.use_asc is True
        assert config.repetitions == 2
        assert config.train_config().base_seed == 9

    def test_unset_flags_keep_config_values(self, workspace):
        _, config_path = workspace
        config = config_from_args(build_parser().parse_args(['mnl', '--config', config_path]))
        assert config.use_asc is False
        assert config.resume is False
        assert config.mnl_form == 'linear'

    def test_config_use_asc_can_be_switched_off(self, tmp_path):
        path = tmp_path / 'asc.json'
        path.write_text(json.dumps({'use_asc': True}))
        assert config_from_args(build_parser().parse_args(['train', '--config', str(path)])).use_asc is True
        args = build_parser().parse_args(['train', '--config', str(path), '--no-use_asc'])
        assert config_from_args(args).use_asc is False

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['fit'])


class TestExitCodes:
    def test_missing_input_is_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv('SWISSMETRO_PATH', raising=False)
        assert main(['prepare', '--output_dir', str(tmp_path)]) == 1
        assert 'Error:' in capsys.readouterr().out

    def test_missing_split_files(self, tmp_path):
        assert main(['mnl', '--output_dir', str(tmp_path)]) == 1

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps({'learning_rat': 0.1}))
        assert main(['report', '--config', str(path)]) == 1

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def explode(config):
            raise NumericalError('non-finite utilities')

        monkeypatch.setitem(cli.COMMANDS, 'train', explode)
        assert main(['train', '--output_dir', str(tmp_path)]) == 2

    def test_gen_synth_without_dgp(self, tmp_path):
        assert main(['gen-synth', '--output_dir', str(tmp_path)]) == 1


class TestPipeline:
    def test_full_pipeline(self, workspace, capsys):
        out, config_path = workspace

        assert main(['gen-synth', '--config', config_path]) == 0
        synthetic = pd.read_csv(out / 'synthetic.csv', comment='#')
        assert len(synthetic) == 360
        assert set(synthetic['CHOICE']) <= {1, 2, 3}
        assert (out / 'truth.csv').read_text().startswith('# command=gen-synth')

        assert main(['prepare', '--config', config_path]) == 0
        train = pd.read_csv(out / 'train.csv', comment='#')
        test = pd.read_csv(out / 'test.csv', comment='#')
        assert len(train) + len(test) == 360
        assert len(test) > 0
        for name in ('scaling.json', 'schema.json', 'market_shares.csv', 'attribute_stats.csv'):
            assert (out / name).exists()

        assert main(['mnl', '--config', config_path]) == 0
        estimate = json.loads((out / 'mnl_linear.json').read_text())
        assert 'metrics' in json.dumps(estimate)
        assert (out / 'mnl_linear_mu.csv').exists()

        assert main(['train', '--config', config_path]) == 0
        metrics = json.loads((out / 'train_metrics.json').read_text())
        assert metrics['repetitions'] == 2
        assert 'mean_seconds' not in metrics
        assert (out / 'ensemble' / 'manifest.json').exists()

        assert main(['welfare', '--config', config_path]) == 0
        for name in ('mu.csv', 'vtt_vowt.csv', 'mu_plot.csv', 'vtt_bins.csv',
                     'welfare_summary.json', 'truth_comparison.csv'):
            assert (out / name).exists()
        comparison = pd.read_csv(out / 'truth_comparison.csv', comment='#')
        assert set(comparison['attribute']) >= {'TT', 'TC', 'VTT'}

        assert main(['report', '--config', config_path]) == 0
        page = (out / 'report.html').read_text()
        assert 'vtt-bins-chart' in page or 'No data available.' in page
        assert 'Welfare summary' in page

    def test_every_output_carries_provenance(self, workspace):
        out, config_path = workspace
        for command in ('gen-synth', 'prepare', 'train', 'report'):
            assert main([command, '--config', config_path]) == 0

        written = [p for p in out.rglob('*') if p.is_file() and p.suffix != '.lock']
        names = {p.name for p in written}
        assert {'train.csv', 'test.csv', 'scaling.json', 'schema.json', 'market_shares.csv',
                'attribute_stats.csv', 'train_metrics.json', 'manifest.json',
                'member_000.json', 'member_001.json', 'report.html'} <= names
        for path in written:
            text = path.read_text()
            if path.suffix == '.csv':
                assert text.startswith('# command='), path.name
            elif path.suffix == '.json':
                assert 'config_hash' in json.loads(text)['provenance'], path.name
            else:
                assert '<!-- command=report config_hash=' in text, path.name

        assert json.loads((out / 'scaling.json').read_text())['provenance']['command'] == 'prepare'
        assert json.loads((out / 'ensemble' / 'member_000.json').read_text())['provenance']['command'] == 'train'

    def test_rerun_reproduces_outputs(self, workspace):
        out, config_path = workspace
        assert main(['gen-synth', '--config', config_path]) == 0
        first = (out / 'synthetic.csv').read_bytes()
        assert main(['gen-synth', '--config', config_path]) == 0
        assert (out / 'synthetic.csv').read_bytes() == first
