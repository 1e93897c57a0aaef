"""Pseudo-synthetic choices on a fixed design and their analytic truth.

Designs are in original units (minutes, CHF). The DGP sees them divided by
``DgpSpec.prescale`` (default 100) and adds i.i.d. standard Gumbel errors.
True marginal utilities are reported per prescaled unit, which is the
per-100 convention used for the estimated ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np
import pandas as pd

from .config import DEFAULTS
from .data import AttributeSchema, ChoiceDataset, COST_LABEL, frame_to_dataset
from .errors import DomainError, SchemaError
from .mnl import MnlForm
from .nncore import softmax
from .swissmetro import swissmetro_schema

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DgpSpec:
    form: MnlForm
    beta_tc: float
    beta_tt: float
    offset: float = DEFAULTS.log_offset
    prescale: float = DEFAULTS.prescale_factor
    tt_label: str = 'TT'

    def __post_init__(self):
        object.__setattr__(self, 'form', MnlForm(self.form))
        if self.form is MnlForm.LOG_LINEAR and not self.offset > 0:
            raise ValueError(f"offset must be > 0 for the log-linear form, got {self.offset}")
        if not self.prescale > 0:
            raise ValueError(f"prescale must be > 0, got {self.prescale}")

    def beta(self, attribute: str) -> float:
        if attribute == COST_LABEL:
            return self.beta_tc
        if attribute == self.tt_label:
            return self.beta_tt
        raise SchemaError(f"the DGP has no attribute {attribute!r}", column=attribute)

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> 'DgpSpec':
        return cls(**dict(raw))

    def to_dict(self) -> dict:
        return {
            'form': self.form.value, 'beta_tc': self.beta_tc, 'beta_tt': self.beta_tt,
            'offset': self.offset, 'prescale': self.prescale, 'tt_label': self.tt_label,
        }


# True parameters of the two synthetic datasets; for the log-linear one the
# coefficients (-3, -5) are used and its MU/VTT truth is derived from them.
DATASET_LINEAR = DgpSpec(MnlForm.LINEAR, beta_tc=-2.0, beta_tt=-3.0)
DATASET_LOG_LINEAR = DgpSpec(MnlForm.LOG_LINEAR, beta_tc=-3.0, beta_tt=-5.0)


def dgp_columns(schema: AttributeSchema, dgp: DgpSpec) -> Tuple[list, list]:
    """(cost columns, time columns) in alternative order."""
    tc, tt = [], []
    for alt in schema.alternatives:
        cost = alt.cost_column
        time = alt.column_for(dgp.tt_label)
        if cost is None or time is None:
            raise SchemaError(f"alternative {alt.name!r} needs both cost and {dgp.tt_label} columns",
                              column=alt.name)
        tc.append(cost)
        tt.append(time)
    return tc, tt


def _scaled_inputs(dgp: DgpSpec, design: ChoiceDataset) -> Tuple[np.ndarray, np.ndarray]:
    if design.is_normalized:
        raise ValueError("synthetic generation expects a design in original units")
    tc_cols, tt_cols = dgp_columns(design.schema, dgp)
    to_scaled = design.prescale_factor / dgp.prescale
    tc = design.frame[tc_cols].to_numpy(dtype=float) * to_scaled
    tt = design.frame[tt_cols].to_numpy(dtype=float) * to_scaled
    return tc, tt


def _transform(dgp: DgpSpec, values: np.ndarray) -> np.ndarray:
    if dgp.form is MnlForm.LINEAR:
        return values
    shifted = values + dgp.offset
    if np.any(shifted <= 0):
        raise DomainError(f"log argument not positive (min {np.min(shifted)})")
    return np.log(shifted)


def true_utilities(dgp: DgpSpec, design: ChoiceDataset) -> np.ndarray:
    """Systematic utilities V (N, J)."""
    tc, tt = _scaled_inputs(dgp, design)
    return dgp.beta_tc * _transform(dgp, tc) + dgp.beta_tt * _transform(dgp, tt)


def sample_gumbel(rng: np.random.Generator, size=None):
    """Standard Gumbel draws via -ln(-ln u), u uniform on (0, 1)."""
    u = rng.uniform(np.finfo(float).tiny, 1.0, size)
    return -np.log(-np.log(u))


def generate_choices(design: ChoiceDataset, dgp: DgpSpec, seed: int) -> ChoiceDataset:
    """Chosen alternative = argmax(V + Gumbel); attributes are copied unchanged."""
    if design.n == 0:
        raise ValueError("design has no rows")
    V = true_utilities(dgp, design)
    rng = np.random.default_rng(seed)
    U = V + sample_gumbel(rng, V.shape)
    frame = design.frame.copy()
    frame[design.schema.choice_column] = (np.argmax(U, axis=1) + 1).astype(np.int64)
    shares = np.bincount(np.argmax(U, axis=1), minlength=V.shape[1]) / design.n
    logger.info("Generated %d synthetic choices, shares %s", design.n,
                ', '.join(f"{n}={s:.3f}" for n, s in zip(design.schema.names, shares)))
    return design.with_frame(frame)


def mu_at(dgp: DgpSpec, value_scaled, attribute: str):
    """dV/dx at a prescaled attribute value (per prescaled unit)."""
    beta = dgp.beta(attribute)
    if dgp.form is MnlForm.LINEAR:
        return beta * np.ones_like(np.asarray(value_scaled, dtype=float)) if np.ndim(value_scaled) else beta
    return beta / (np.asarray(value_scaled, dtype=float) + dgp.offset)


def _per_hundred(dgp: DgpSpec, mu_scaled):
    return mu_scaled * 100.0 / dgp.prescale


def true_mu(dgp: DgpSpec, x: Mapping[str, float], alternative: int, attribute: str,
            schema: AttributeSchema) -> float:
    """True MU (per 100 original units) of ``attribute`` for one observation in original units."""
    alt = schema.alternatives[alternative]
    column = alt.column_for(attribute)
    if column is None:
        raise SchemaError(f"alternative {alt.name!r} has no {attribute!r}", column=attribute)
    return float(_per_hundred(dgp, mu_at(dgp, float(x[column]) / dgp.prescale, attribute)))


def true_vtt(dgp: DgpSpec, x: Mapping[str, float], alternative: int, schema: AttributeSchema) -> float:
    return (true_mu(dgp, x, alternative, dgp.tt_label, schema)
            / true_mu(dgp, x, alternative, COST_LABEL, schema))


def true_loglik(dgp: DgpSpec, ds: ChoiceDataset) -> float:
    """Log-likelihood of the observed choices under the true model."""
    P = softmax(true_utilities(dgp, ds))
    return float(np.sum(np.log(P[np.arange(ds.n), ds.choice_index])))


def truth_table(dgp: DgpSpec, design: ChoiceDataset) -> pd.DataFrame:
    """One row per (observation, alternative): true V, MU_TT, MU_TC and VTT."""
    V = true_utilities(dgp, design)
    tc, tt = _scaled_inputs(dgp, design)
    mu_tc = _per_hundred(dgp, np.broadcast_to(mu_at(dgp, tc, COST_LABEL), tc.shape))
    mu_tt = _per_hundred(dgp, np.broadcast_to(mu_at(dgp, tt, dgp.tt_label), tt.shape))
    N, J = V.shape
    return pd.DataFrame({
        'row': np.repeat(np.arange(N), J),
        'alternative': np.tile(design.schema.names, N),
        'true_V': V.reshape(-1),
        'true_MU_TT': mu_tt.reshape(-1),
        'true_MU_TC': mu_tc.reshape(-1),
        'true_VTT': (mu_tt / mu_tc).reshape(-1),
    })


def design_mean_vtt(dgp: DgpSpec, design: ChoiceDataset) -> pd.Series:
    """Per-alternative mean of the true VTT over the design."""
    truth = truth_table(dgp, design)
    return truth.groupby('alternative', sort=False)['true_VTT'].mean()


def dgp_preset(name: str) -> DgpSpec:
    presets = {'linear': DATASET_LINEAR, 'log_linear': DATASET_LOG_LINEAR}
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown DGP preset {name!r}; choose from {sorted(presets)}") from None


def pivot_design(n_respondents: int, seed: int, rows_per_respondent: int = 9) -> ChoiceDataset:
    """Swissmetro-shaped design without choices, for runs without the raw survey.

    Each respondent gets a reference trip (time and cost) and every row pivots
    the three alternatives around it, the way the stated-preference survey
    varied attribute levels around a reported trip.
    """
    if n_respondents < 1 or rows_per_respondent < 1:
        raise ValueError("n_respondents and rows_per_respondent must be >= 1")
    rng = np.random.default_rng(seed)
    n = n_respondents * rows_per_respondent
    base_tt = np.repeat(rng.uniform(40.0, 300.0, n_respondents), rows_per_respondent)
    base_co = np.repeat(rng.uniform(20.0, 200.0, n_respondents), rows_per_respondent)

    def pivot(base: np.ndarray, levels: Tuple[float, ...]) -> np.ndarray:
        return np.round(base * rng.choice(levels, size=n))

    frame = pd.DataFrame({
        'TRAIN_TT': pivot(base_tt, (0.9, 1.0, 1.1)),
        'TRAIN_HE': rng.choice((30.0, 60.0, 120.0), size=n),
        'TRAIN_CO': pivot(base_co, (0.9, 1.0, 1.1)),
        'SM_TT': pivot(base_tt, (0.5, 0.6, 0.7)),
        'SM_HE': rng.choice((10.0, 20.0, 30.0), size=n),
        'SM_CO': pivot(base_co, (1.1, 1.2, 1.3)),
        'CAR_TT': pivot(base_tt, (0.8, 1.0, 1.2)),
        'CAR_CO': pivot(base_co, (0.6, 0.8, 1.0)),
        'ID': np.repeat(np.arange(1, n_respondents + 1), rows_per_respondent),
    })
    return frame_to_dataset(frame, swissmetro_schema(), require_choice=False)
