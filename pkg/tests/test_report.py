"""Tests for the HTML welfare report."""

import os
import sys

import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.report import WelfareReport, build_report, write_report


@pytest.fixture
def plot_frame():
    return pd.DataFrame({
        'attribute_value': [60.0, 90.0, 45.0, 30.0],
        'mode': ['TRAIN', 'TRAIN', 'SM', 'SM'],
        'attribute': ['TT', 'TT', 'TT', 'TC'],
        'mu': [-3.1, -2.9, -2.5, -1.8],
    })


@pytest.fixture
def bins():
    return pd.DataFrame({
        'alternative': ['TRAIN', 'SM'],
        'bin': ['[60, 90)', '[0, 60)'],
        'lower': [60.0, 0.0],
        'upper': [90.0, 60.0],
        'mean': [1.4, 1.1],
        'count': [2, 1],
    })


@pytest.fixture
def per_mode():
    return pd.DataFrame({'measure': ['VTT'], 'alternative': ['TRAIN'], 'mean': [1.4], 'retained': [2]})


class TestReport:
    def test_all_sections_rendered(self, plot_frame, bins, per_mode):
        page = build_report(plot_frame, bins, per_mode, title='Run 7')
        assert page.startswith('<!DOCTYPE html>')
        assert '<title>Run 7</title>' in page
        assert 'mu-tt-chart' in page
        assert 'mu-tc-chart' in page
        assert 'vtt-bins-chart' in page
        assert 'dist-tt-chart' in page
        assert 'summary-table' in page
        assert 'No data available.' not in page

    def test_empty_inputs(self):
        page = build_report(None, None, None)
        assert page.count('No data available.') == 4
        assert 'Attribute statistics' not in page

    def test_empty_frames(self, plot_frame):
        page = build_report(plot_frame.iloc[:0], pd.DataFrame(), pd.DataFrame())
        assert page.count('No data available.') == 4

    def test_design_stats_section(self, plot_frame, bins, per_mode):
        stats = pd.DataFrame({'attribute': ['TT'], 'alternative': ['CAR'], 'mean': [123.4]})
        page = build_report(plot_frame, bins, per_mode, design_stats=stats)
        assert 'Attribute statistics' in page
        assert '123.400' in page

    def test_title_escaped(self):
        page = WelfareReport('<ASS & ASU>').render(None, None, None)
        assert '&lt;ASS &amp; ASU&gt;' in page

    def test_write_creates_directories(self, tmp_path):
        path = tmp_path / 'nested' / 'report.html'
        assert write_report('<html></html>', str(path)) == str(path)
        assert path.read_text() == '<html></html>'
