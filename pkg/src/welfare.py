"""Marginal utilities, value of time and trimming/aggregation.

MU tables are long frames with one row per (observation, alternative,
attribute) and columns ``row, alternative, attribute, column, x, value``,
where ``x`` is the attribute value in original units and ``value`` the MU in
the table's unit convention. The same format comes out of
``mnl.mnl_marginal_utility_table``, so network and MNL results share the
downstream pipeline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import DEFAULTS
from .data import (
    COST_LABEL,
    ChoiceDataset,
    ScalingRecord,
    UnitConvention,
    apply_scaling,
    denormalize,
    gradient_scale,
)
from .errors import SchemaError
from .training import TrainedEnsemble

logger = logging.getLogger(__name__)

TT_LABEL = 'TT'
# headway: the waiting-time attribute behind VoWT
HEADWAY_LABEL = 'HE'


class Aggregation(str, Enum):
    RATIO_OF_MEANS = 'ratio_of_means'
    MEAN_OF_RATIOS = 'mean_of_ratios'


@dataclass
class MuTable:
    frame: pd.DataFrame
    unit: UnitConvention = UnitConvention.PER_HUNDRED
    # (R, N, K) member MUs in ``member_columns`` order, when available
    member_values: Optional[np.ndarray] = None
    member_columns: Sequence[str] = ()

    def design_means(self) -> pd.DataFrame:
        """Mean MU per (alternative, attribute)."""
        return (self.frame.groupby(['alternative', 'attribute'], sort=False)['value']
                .mean().reset_index())


def marginal_utilities(ens: TrainedEnsemble, ds: ChoiceDataset, scaling: Optional[ScalingRecord] = None,
                       unit: UnitConvention = UnitConvention.PER_HUNDRED) -> MuTable:
    """Member input-gradients mapped to original units and averaged over members."""
    scaling = scaling or ens.scaling
    if scaling is None:
        raise ValueError("no scaling record for the ensemble")
    if not ens.members:
        raise ValueError("ensemble has no members")
    schema = ens.members[0].schema
    if list(ds.schema.attribute_columns) != list(schema.attribute_columns):
        raise SchemaError("dataset columns do not match the ensemble's schema")

    if ds.is_normalized:
        normalized, original = ds, denormalize(ds, scaling)
    else:
        normalized, original = apply_scaling(ds, scaling), ds
    columns = list(schema.attribute_columns)
    to_units = np.array([gradient_scale(c, scaling, unit) for c in columns])

    X = normalized.frame[columns].to_numpy(dtype=float)
    member_values = np.stack([m.input_gradients(X) * to_units for m in ens.members])
    mean_values = member_values.mean(axis=0)

    rows = np.arange(ds.n)
    frames = []
    for k, column in enumerate(columns):
        frames.append(pd.DataFrame({
            'row': rows,
            'alternative': schema.names[schema.alternative_of(column)],
            'attribute': schema.label_of(column),
            'column': column,
            'x': original.column(column),
            'value': mean_values[:, k],
        }))
    frame = pd.concat(frames, ignore_index=True)
    return MuTable(frame, UnitConvention(unit), member_values, columns)


def mrs(mu_num: float, mu_den: float, near_zero: float = DEFAULTS.near_zero_mu) -> float:
    """mu_num / mu_den, or nan when the denominator is within ``near_zero`` of 0."""
    if abs(mu_den) < near_zero or np.isnan(mu_den):
        return float('nan')
    return mu_num / mu_den


def mrs_array(num: np.ndarray, den: np.ndarray, near_zero: float = DEFAULTS.near_zero_mu) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    defined = np.abs(den) >= near_zero
    return np.where(defined, num / np.where(defined, den, 1.0), np.nan)


def _threshold(unit: UnitConvention, near_zero: float) -> float:
    # near_zero is stated per original unit
    return near_zero * 100.0 if UnitConvention(unit) is UnitConvention.PER_HUNDRED else near_zero


def _ratio_rows(mu: MuTable, numerator: str, measure: str, aggregation: Aggregation,
                near_zero: float) -> pd.DataFrame:
    f = mu.frame
    num = f[f['attribute'] == numerator][['row', 'alternative', 'column', 'x', 'value']]
    den = f[f['attribute'] == COST_LABEL][['row', 'alternative', 'column', 'value']]
    merged = num.merge(den, on=['row', 'alternative'], suffixes=('_num', '_den'))
    threshold = _threshold(mu.unit, near_zero)

    if Aggregation(aggregation) is Aggregation.MEAN_OF_RATIOS and mu.member_values is not None:
        index = {c: k for k, c in enumerate(mu.member_columns)}
        rows = merged['row'].to_numpy(dtype=np.int64)
        num_m = mu.member_values[:, rows, [index[c] for c in merged['column_num']]]
        den_m = mu.member_values[:, rows, [index[c] for c in merged['column_den']]]
        ratios = mrs_array(num_m, den_m, threshold)
        valid = ~np.isnan(ratios)
        counts = valid.sum(axis=0)
        totals = np.where(valid, ratios, 0.0).sum(axis=0)
        value = np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)
    else:
        value = mrs_array(merged['value_num'].to_numpy(), merged['value_den'].to_numpy(), threshold)

    out = pd.DataFrame({
        'row': merged['row'].to_numpy(),
        'alternative': merged['alternative'].to_numpy(),
        'measure': measure,
        'x': merged['x'].to_numpy(),
        'value': value,
    })
    out['defined'] = ~np.isnan(out['value'])
    tt = f[f['attribute'] == TT_LABEL][['row', 'alternative', 'x']].rename(columns={'x': 'travel_time'})
    return out.merge(tt, on=['row', 'alternative'], how='left')


def vtt(mu: MuTable, aggregation: Aggregation = Aggregation.RATIO_OF_MEANS,
        near_zero: float = DEFAULTS.near_zero_mu) -> pd.DataFrame:
    """Value of travel time per (observation, alternative); cost per minute."""
    return _ratio_rows(mu, TT_LABEL, 'VTT', aggregation, near_zero)


def vowt(mu: MuTable, aggregation: Aggregation = Aggregation.RATIO_OF_MEANS,
         near_zero: float = DEFAULTS.near_zero_mu) -> pd.DataFrame:
    """Value of waiting time (headway) for alternatives that have a headway attribute."""
    return _ratio_rows(mu, HEADWAY_LABEL, 'VoWT', aggregation, near_zero)


@dataclass
class TrimResult:
    keep: np.ndarray
    total: int
    dropped_undefined: int
    dropped_negative: int
    dropped_upper: int
    threshold: Optional[float]

    @property
    def retained(self) -> int:
        return int(self.keep.sum())

    def report(self) -> Dict[str, Any]:
        return {
            'total': self.total,
            'retained': self.retained,
            'dropped_undefined': self.dropped_undefined,
            'dropped_negative': self.dropped_negative,
            'dropped_upper': self.dropped_upper,
            'upper_threshold': self.threshold,
        }


def trim(values: Sequence[float], upper_quantile: float = DEFAULTS.trim_upper_quantile,
         drop_negative: bool = True) -> TrimResult:
    """Drop undefined values, then negatives, then values above the (1 - q) quantile.

    The upper threshold is computed on what is left after the first two rules.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to trim")
    if not 0.0 <= upper_quantile < 1.0:
        raise ValueError(f"upper_quantile must be in [0, 1), got {upper_quantile}")
    keep = ~np.isnan(v)
    dropped_undefined = int((~keep).sum())

    dropped_negative = 0
    if drop_negative:
        negative = keep & (v < 0)
        dropped_negative = int(negative.sum())
        keep &= ~negative

    dropped_upper = 0
    threshold = None
    if upper_quantile > 0 and keep.any():
        threshold = float(np.quantile(v[keep], 1.0 - upper_quantile))
        upper = keep & (v > threshold)
        dropped_upper = int(upper.sum())
        keep &= ~upper

    if not keep.any():
        logger.warning("Trimming dropped all %d values", v.size)
    return TrimResult(keep, int(v.size), dropped_undefined, dropped_negative, dropped_upper, threshold)


def bin_by_travel_time(vtt_rows: pd.DataFrame,
                       bin_edges: Sequence[float] = DEFAULTS.bin_edges_minutes) -> pd.DataFrame:
    """Mean value per (alternative, travel-time bin); bins are [lo, hi) and empty bins are absent."""
    edges = list(bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be increasing, got {edges}")
    df = vtt_rows.dropna(subset=['value', 'travel_time']).copy()
    columns = ['alternative', 'bin', 'lower', 'upper', 'mean', 'count']
    if df.empty:
        return pd.DataFrame(columns=columns)
    df['bin_index'] = pd.cut(df['travel_time'], bins=edges, right=False, labels=False)
    df = df.dropna(subset=['bin_index'])
    grouped = (df.groupby(['alternative', 'bin_index'], sort=False)['value']
               .agg(['mean', 'count']).reset_index())
    order = {name: i for i, name in enumerate(pd.unique(vtt_rows['alternative']))}
    grouped['lower'] = [edges[int(i)] for i in grouped['bin_index']]
    grouped['upper'] = [edges[int(i) + 1] for i in grouped['bin_index']]
    grouped['bin'] = [f"[{lo:g}, {hi:g})" for lo, hi in zip(grouped['lower'], grouped['upper'])]
    grouped['_alt'] = grouped['alternative'].map(order)
    grouped = grouped.sort_values(['_alt', 'lower']).reset_index(drop=True)
    return grouped[columns]


@dataclass
class WelfareSummary:
    per_mode: pd.DataFrame
    bins: pd.DataFrame
    retained: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_mode': self.per_mode.replace({np.nan: None}).to_dict(orient='records'),
            'bins': self.bins.to_dict(orient='records'),
        }

    @property
    def empty(self) -> bool:
        return self.retained.empty


def summarize_welfare(ratio_rows: Sequence[pd.DataFrame],
                      upper_quantile: float = DEFAULTS.trim_upper_quantile,
                      drop_negative: bool = True,
                      bin_edges: Sequence[float] = DEFAULTS.bin_edges_minutes) -> WelfareSummary:
    """Trim per (measure, mode), then average; VTT is also binned by travel time."""
    records: List[Dict[str, Any]] = []
    kept: List[pd.DataFrame] = []
    for rows in ratio_rows:
        if rows.empty:
            continue
        for (measure, alternative), group in rows.groupby(['measure', 'alternative'], sort=False):
            result = trim(group['value'].to_numpy(), upper_quantile, drop_negative)
            retained = group[result.keep]
            kept.append(retained)
            records.append({
                'measure': measure,
                'alternative': alternative,
                'mean': float(retained['value'].mean()) if not retained.empty else np.nan,
                **result.report(),
            })
    per_mode = pd.DataFrame(records)
    retained = pd.concat(kept, ignore_index=True) if kept else pd.DataFrame(
        columns=['row', 'alternative', 'measure', 'x', 'value', 'defined', 'travel_time'])
    vtt_kept = retained[retained['measure'] == 'VTT'] if not retained.empty else retained
    bins = bin_by_travel_time(vtt_kept, bin_edges)
    if retained.empty:
        logger.warning("No values retained after trimming")
    return WelfareSummary(per_mode, bins, retained)


def compare_to_truth(estimated: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    """Mean estimate vs mean truth per (alternative, attribute); bias = truth - estimate.

    ``estimated`` is long (row, alternative, attribute, value); ``truth`` is a
    ``synthgen.truth_table`` frame. Attributes TT, TC and VTT are compared.
    """
    long_truth = truth.melt(
        id_vars=['row', 'alternative'],
        value_vars=['true_MU_TT', 'true_MU_TC', 'true_VTT'],
        var_name='attribute', value_name='truth',
    )
    long_truth['attribute'] = long_truth['attribute'].map(
        {'true_MU_TT': TT_LABEL, 'true_MU_TC': COST_LABEL, 'true_VTT': 'VTT'})
    merged = estimated[['row', 'alternative', 'attribute', 'value']].merge(
        long_truth, on=['row', 'alternative', 'attribute'])
    merged = merged.dropna(subset=['value'])
    merged['sq_error'] = (merged['value'] - merged['truth']) ** 2
    out = (merged.groupby(['alternative', 'attribute'], sort=False)
           .agg(estimate=('value', 'mean'), truth=('truth', 'mean'), mse=('sq_error', 'mean'),
                count=('value', 'size'))
           .reset_index())
    out['bias'] = out['truth'] - out['estimate']
    out['rmse'] = np.sqrt(out['mse'])
    return out.drop(columns='mse')


def ratio_as_attribute(rows: pd.DataFrame) -> pd.DataFrame:
    """VTT/VoWT rows relabelled to the long (attribute, value) layout used by compare_to_truth."""
    return rows.rename(columns={'measure': 'attribute'})[['row', 'alternative', 'attribute', 'value']]


def plot_frame(mu: MuTable) -> pd.DataFrame:
    """attribute value, mode, attribute, MU: enough to redraw MU-vs-attribute plots."""
    return mu.frame.rename(columns={'x': 'attribute_value', 'alternative': 'mode', 'value': 'mu'})[
        ['attribute_value', 'mode', 'attribute', 'mu']]
