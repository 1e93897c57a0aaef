"""Monte Carlo recovery checks at desk scale (R=10, full-size pivot design).

Run with ``pytest -m slow``; each dataset trains a ten-member ensemble.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from scripts.run_monte_carlo import evaluate_mnl, evaluate_network, evaluate_truth, prepare_dataset
from src.architectures import Topology, Variant
from src.config import DEFAULTS, TrainConfig
from src.data import apply_scaling, minmax_normalize, prescale, stratified_split
from src.mnl import MnlForm, fit_mnl, mnl_dataset_loglik, swissmetro_spec
from src.swissmetro import ingest_swissmetro
from src.synthgen import pivot_design
from src.training import NetworkSpec, ensemble_test_loglik, train_ensemble

pytestmark = pytest.mark.slow

MODES = ('TRAIN', 'SM', 'CAR')
R = DEFAULTS.repetitions_desk


@pytest.fixture(scope='module')
def design():
    return pivot_design(DEFAULTS.swissmetro_target_rows // 9, seed=0)


@pytest.fixture(scope='module')
def linear_rows(design):
    run = prepare_dataset('linear', design, seed=0)
    return {
        'true': evaluate_truth(run),
        'mnl': evaluate_mnl(run, MnlForm.LINEAR),
        'ass': evaluate_network(run, Variant.ASS, Topology(1, 10, 'tanh'), R, TrainConfig()),
    }


@pytest.fixture(scope='module')
def log_linear_rows(design):
    run = prepare_dataset('log_linear', design, seed=0)
    return {
        'mnl': evaluate_mnl(run, MnlForm.LINEAR),
        'ass': evaluate_network(run, Variant.ASS, Topology(1, 10, 'tanh'), R, TrainConfig()),
    }


class TestLinearDataset:
    def test_mnl_recovers_parameters(self, linear_rows):
        mnl = linear_rows['mnl']
        assert mnl['B_TC'] == pytest.approx(-2.0, abs=0.1)
        assert mnl['B_TT'] == pytest.approx(-3.0, abs=0.1)

    @pytest.mark.parametrize('mode', MODES)
    def test_ass_recovers_marginal_utilities(self, linear_rows, mode):
        ass = linear_rows['ass']
        assert ass[f'{mode}_TC_estimate'] == pytest.approx(-2.0, abs=0.2)
        assert ass[f'{mode}_TT_estimate'] == pytest.approx(-3.0, abs=0.3)
        assert ass[f'{mode}_VTT_estimate'] == pytest.approx(1.5, abs=0.15)

    def test_fit_matches_correct_specification(self, linear_rows):
        truth = linear_rows['true']['test_rho_squared']
        assert linear_rows['mnl']['test_rho_squared'] == pytest.approx(truth, abs=0.03)
        assert linear_rows['ass']['test_rho_squared'] == pytest.approx(truth, abs=0.03)


class TestLogLinearDataset:
    def test_ass_beats_misspecified_mnl(self, log_linear_rows):
        assert log_linear_rows['ass']['test_ll'] > log_linear_rows['mnl']['test_ll']

    def test_ass_rho_squared_gap_over_linear_mnl(self, log_linear_rows):
        gap = log_linear_rows['ass']['test_rho_squared'] - log_linear_rows['mnl']['test_rho_squared']
        assert gap >= 0.03

    @pytest.mark.parametrize('mode', MODES)
    def test_ass_vtt_near_design_truth(self, log_linear_rows, mode):
        ass = log_linear_rows['ass']
        assert ass[f'{mode}_VTT_estimate'] == pytest.approx(ass[f'{mode}_VTT_truth'], abs=0.2)


@pytest.mark.data
class TestSwissmetroOrdering:
    """Empirical ordering on the cleaned survey: ASU >= ASS >= log-linear >= linear on test LL."""

    @pytest.fixture(scope='class')
    def survey_lls(self):
        path = os.getenv('SWISSMETRO_PATH')
        if not path or not os.path.exists(path):
            pytest.skip('SWISSMETRO_PATH not set')
        ds = ingest_swissmetro(path)
        _, scaling = minmax_normalize(prescale(ds))
        train, test = stratified_split(ds, DEFAULTS.test_fraction, DEFAULTS.split_seed)
        lls = {}
        for form in MnlForm:
            spec = swissmetro_spec(ds.schema, form)
            estimate = fit_mnl(spec, prescale(train))
            lls[form.value] = mnl_dataset_loglik(spec, estimate.values, prescale(test))
        train_n, test_n = apply_scaling(train, scaling), apply_scaling(test, scaling)
        for variant in (Variant.ASS, Variant.ASU):
            ens = train_ensemble(NetworkSpec(variant, Topology(1, 10, 'tanh'), use_asc=True),
                                 train_n, R, TrainConfig())
            lls[variant.value], _ = ensemble_test_loglik(ens, test_n)
        return lls

    def test_ordering(self, survey_lls):
        assert survey_lls['log_linear'] >= survey_lls['linear']
        assert survey_lls['ass'] >= survey_lls['log_linear']
        assert survey_lls['asu'] >= survey_lls['ass']
