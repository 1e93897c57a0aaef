"""Tests for provenance stamps and stamped output files."""

import json
import os
import sys

import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src import __version__
from src.provenance import config_hash, header_lines, provenance, read_frame, write_frame, write_json


def test_hash_ignores_key_order():
    assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})
    assert config_hash({'a': 1}) != config_hash({'a': 2})
    assert len(config_hash({})) == 16


def test_stamp_contents():
    stamp = provenance({'seed': 3}, 3, 'train')
    assert stamp['command'] == 'train'
    assert stamp['seed'] == 3
    assert stamp['versions']['choicenet'] == __version__
    assert set(stamp['versions']) == {'choicenet', 'numpy', 'pandas', 'scipy'}


def test_header_lines():
    lines = header_lines(provenance({}, 0, 'welfare'))
    assert lines[0].startswith('command=welfare config_hash=')
    assert lines[1].startswith('versions choicenet=')


def test_frame_written_with_header_and_read_back(tmp_path):
    path = tmp_path / 'out.csv'
    frame = pd.DataFrame({'alternative': ['TRAIN', 'SM'], 'value': [1.25, -0.5]})
    stamp = provenance({'k': 1}, 0, 'welfare')
    write_frame(frame, str(path), stamp)
    text = path.read_text()
    assert text.startswith('# command=welfare')
    pd.testing.assert_frame_equal(read_frame(str(path)), frame)


def test_rerun_is_byte_identical(tmp_path):
    frame = pd.DataFrame({'x': [0.1, 0.2]})
    stamp = provenance({'k': 1}, 5, 'mnl')
    write_frame(frame, str(tmp_path / 'a.csv'), stamp)
    write_frame(frame, str(tmp_path / 'b.csv'), provenance({'k': 1}, 5, 'mnl'))
    assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()


def test_json_carries_stamp(tmp_path):
    path = tmp_path / 'doc.json'
    stamp = provenance({}, 1, 'train')
    write_json({'loglik': -10.5}, str(path), stamp)
    doc = json.loads(path.read_text())
    assert doc['loglik'] == -10.5
    assert doc['provenance'] == stamp
