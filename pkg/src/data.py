"""Wide-format choice data: schema, loading, scaling and splitting.

Contract:
- ``ChoiceDataset`` wraps a DataFrame with one row per choice situation and
  is treated as immutable: every transform returns a new dataset built from a
  copy of the frame.
- Choices are stored 1-based (1..J) in the choice column, as in the input
  files; ``choice_index`` exposes the 0-based array used by the estimators.
- Scaling happens in two steps that are both recorded: a prescale (divide by
  a factor, default 100) followed by min-max normalization. Non-cost columns
  use their own bounds; all cost columns share one pooled affine map so the
  cost stack sees the same unit system for every alternative.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .config import DEFAULTS
from .errors import (
    ChoiceValidationError,
    DegenerateColumnError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

COST_LABEL = 'TC'


def default_label(column: str) -> str:
    """Attribute label for a column: TRAIN_TT -> TT, TT1 -> TT."""
    if '_' in column:
        return column.rsplit('_', 1)[1]
    stripped = re.sub(r'\d+$', '', column)
    return stripped or column


@dataclass(frozen=True)
class AlternativeColumns:
    """Columns read by one alternative's utility."""
    name: str
    cost_column: Optional[str]
    non_cost_columns: Tuple[str, ...] = ()
    labels: Mapping[str, str] = field(default_factory=dict)

    @property
    def columns(self) -> Tuple[str, ...]:
        own = tuple(self.non_cost_columns)
        return own + ((self.cost_column,) if self.cost_column else ())

    def label_of(self, column: str) -> str:
        if column == self.cost_column:
            return COST_LABEL
        return self.labels.get(column, default_label(column))

    def column_for(self, label: str) -> Optional[str]:
        for column in self.columns:
            if self.label_of(column) == label:
                return column
        return None


@dataclass(frozen=True)
class AttributeSchema:
    """Binding of file columns to alternatives and roles."""
    alternatives: Tuple[AlternativeColumns, ...]
    choice_column: str = 'CHOICE'
    respondent_column: Optional[str] = 'ID'

    def __post_init__(self):
        if len(self.alternatives) < 1:
            raise SchemaError("schema needs at least one alternative")
        seen: Dict[str, str] = {}
        for alt in self.alternatives:
            for column in alt.columns:
                if column in seen:
                    raise SchemaError(
                        f"column {column!r} bound to both {seen[column]!r} and {alt.name!r}",
                        column=column,
                    )
                seen[column] = alt.name

    @property
    def names(self) -> List[str]:
        return [alt.name for alt in self.alternatives]

    @property
    def n_alternatives(self) -> int:
        return len(self.alternatives)

    @property
    def attribute_columns(self) -> List[str]:
        """All attribute columns, alternative order then own-column order."""
        return [c for alt in self.alternatives for c in alt.columns]

    @property
    def cost_columns(self) -> List[str]:
        return [alt.cost_column for alt in self.alternatives if alt.cost_column]

    @property
    def non_cost_columns(self) -> List[str]:
        return [c for alt in self.alternatives for c in alt.non_cost_columns]

    def column_index(self, column: str) -> int:
        try:
            return self.attribute_columns.index(column)
        except ValueError:
            raise SchemaError(f"unknown column {column!r}", column=column) from None

    def alternative_of(self, column: str) -> int:
        for j, alt in enumerate(self.alternatives):
            if column in alt.columns:
                return j
        raise SchemaError(f"unknown column {column!r}", column=column)

    def label_of(self, column: str) -> str:
        return self.alternatives[self.alternative_of(column)].label_of(column)

    def validate_costs(self) -> None:
        """Every alternative must carry exactly one cost column."""
        for alt in self.alternatives:
            if not alt.cost_column:
                raise SchemaError(
                    f"alternative {alt.name!r} has no cost column", column=alt.name,
                )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'choice_column': self.choice_column,
            'respondent_column': self.respondent_column,
            'alternatives': [
                {
                    'name': alt.name,
                    'cost_column': alt.cost_column,
                    'non_cost_columns': list(alt.non_cost_columns),
                    'labels': dict(alt.labels),
                }
                for alt in self.alternatives
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'AttributeSchema':
        if 'alternatives' not in raw:
            raise SchemaError("schema document has no 'alternatives' list")
        alternatives = tuple(
            AlternativeColumns(
                name=str(item['name']),
                cost_column=item.get('cost_column'),
                non_cost_columns=tuple(item.get('non_cost_columns', ())),
                labels=dict(item.get('labels', {})),
            )
            for item in raw['alternatives']
        )
        return cls(
            alternatives=alternatives,
            choice_column=raw.get('choice_column', 'CHOICE'),
            respondent_column=raw.get('respondent_column', 'ID'),
        )


def schema_from_json(path: str) -> AttributeSchema:
    with open(path, encoding='utf-8') as f:
        return AttributeSchema.from_dict(json.load(f))


@dataclass(frozen=True)
class ScalingRecord:
    """Bounds used by min-max normalization, recorded on prescaled data."""
    bounds: Mapping[str, Tuple[float, float]]
    cost_columns: Tuple[str, ...] = ()
    cost_bounds: Optional[Tuple[float, float]] = None
    prescale_factor: float = 1.0

    def bounds_for(self, column: str) -> Tuple[float, float]:
        if column in self.cost_columns:
            assert self.cost_bounds is not None
            return self.cost_bounds
        if column in self.bounds:
            return self.bounds[column]
        raise SchemaError(f"column {column!r} has no recorded scaling", column=column)

    def range_for(self, column: str) -> float:
        lo, hi = self.bounds_for(column)
        return hi - lo

    @property
    def columns(self) -> List[str]:
        return list(self.bounds) + list(self.cost_columns)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'prescale_factor': self.prescale_factor,
            'bounds': {k: [float(lo), float(hi)] for k, (lo, hi) in self.bounds.items()},
            'cost_columns': list(self.cost_columns),
            'cost_bounds': list(self.cost_bounds) if self.cost_bounds else None,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'ScalingRecord':
        cost_bounds = raw.get('cost_bounds')
        return cls(
            bounds={k: (float(v[0]), float(v[1])) for k, v in raw['bounds'].items()},
            cost_columns=tuple(raw.get('cost_columns', ())),
            cost_bounds=(float(cost_bounds[0]), float(cost_bounds[1])) if cost_bounds else None,
            prescale_factor=float(raw.get('prescale_factor', 1.0)),
        )

    def to_json(self, path: str, provenance: Optional[Mapping[str, Any]] = None) -> None:
        document = self.to_dict()
        if provenance:
            document['provenance'] = dict(provenance)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path: str) -> 'ScalingRecord':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class ChoiceDataset:
    """Choice situations in wide format.

    ``prescale_factor`` tracks the divisor already applied to the attribute
    columns; ``scaling`` is set once the dataset has been min-max normalized.
    """
    frame: pd.DataFrame
    schema: AttributeSchema
    prescale_factor: float = 1.0
    scaling: Optional[ScalingRecord] = None

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def has_choices(self) -> bool:
        return self.schema.choice_column in self.frame.columns

    @property
    def choices(self) -> np.ndarray:
        """Chosen alternative, 1-based."""
        if not self.has_choices:
            raise SchemaError(
                "dataset has no choice column (design only)", column=self.schema.choice_column,
            )
        return self.frame[self.schema.choice_column].to_numpy(dtype=np.int64)

    @property
    def choice_index(self) -> np.ndarray:
        """Chosen alternative, 0-based."""
        return self.choices - 1

    @property
    def is_normalized(self) -> bool:
        return self.scaling is not None

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)

    def attribute_matrix(self) -> np.ndarray:
        """N x K array of attribute columns in schema order."""
        columns = self.schema.attribute_columns
        if not columns:
            return np.zeros((self.n, 0))
        return self.frame[columns].to_numpy(dtype=float)

    def subset(self, positions: Iterable[int]) -> 'ChoiceDataset':
        frame = self.frame.iloc[list(positions)].reset_index(drop=True)
        return replace(self, frame=frame)

    def with_frame(self, frame: pd.DataFrame, **changes: Any) -> 'ChoiceDataset':
        return replace(self, frame=frame.reset_index(drop=True), **changes)

    def to_csv(self, path: str, header_lines: Iterable[str] = ()) -> None:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            for line in header_lines:
                f.write(f"# {line}\n")
            self.frame.to_csv(f, index=False, lineterminator='\n')


def _required_columns(schema: AttributeSchema, require_choice: bool) -> List[str]:
    columns = list(schema.attribute_columns)
    if require_choice:
        columns.append(schema.choice_column)
    if schema.respondent_column:
        columns.append(schema.respondent_column)
    return columns


def _parse_numeric(raw: pd.DataFrame, columns: List[str]) -> pd.DataFrame:
    parsed = pd.DataFrame(index=raw.index)
    for column in columns:
        values = pd.to_numeric(raw[column], errors='coerce')
        bad = values.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            cell = raw[column].iloc[row]
            if pd.isna(cell) or str(cell).strip() == '':
                raise ParseError(f"missing value in column {column!r} at row {row}", row=row, column=column)
            raise ParseError(
                f"non-numeric value {cell!r} in column {column!r} at row {row}", row=row, column=column,
            )
        parsed[column] = values.astype(float)
    return parsed


def validate_choices(choices: np.ndarray, n_alternatives: int) -> None:
    if choices.size == 0:
        return
    bad = (choices < 1) | (choices > n_alternatives)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ChoiceValidationError(
            f"choice {choices[row]} at row {row} outside 1..{n_alternatives}"
        )


def frame_to_dataset(raw: pd.DataFrame, schema: AttributeSchema, *,
                     require_choice: bool = True) -> ChoiceDataset:
    """Validate and coerce a raw frame into a ChoiceDataset."""
    has_choice = schema.choice_column in raw.columns
    for column in _required_columns(schema, require_choice):
        if column not in raw.columns:
            raise SchemaError(f"missing column {column!r}", column=column)

    columns = list(schema.attribute_columns)
    if has_choice:
        columns.append(schema.choice_column)
    if schema.respondent_column:
        columns.append(schema.respondent_column)
    frame = _parse_numeric(raw.reset_index(drop=True), columns)

    if has_choice:
        choice = frame[schema.choice_column].to_numpy()
        if not np.all(np.equal(np.mod(choice, 1), 0)):
            row = int(np.flatnonzero(np.mod(choice, 1) != 0)[0])
            raise ParseError(
                f"choice {choice[row]} at row {row} is not an integer",
                row=row, column=schema.choice_column,
            )
        frame[schema.choice_column] = choice.astype(np.int64)
        validate_choices(frame[schema.choice_column].to_numpy(), schema.n_alternatives)
    if schema.respondent_column:
        frame[schema.respondent_column] = frame[schema.respondent_column].astype(np.int64)
    return ChoiceDataset(frame=frame, schema=schema)


def load_wide_csv(path: str, schema: AttributeSchema, *, require_choice: bool = True) -> ChoiceDataset:
    """Load one choice situation per row; lines starting with '#' are provenance."""
    raw = pd.read_csv(path, comment='#', dtype=str, keep_default_na=False, skipinitialspace=True)
    ds = frame_to_dataset(raw, schema, require_choice=require_choice)
    logger.info("Loaded %d rows from %s", ds.n, path)
    return ds


def prescale(ds: ChoiceDataset, factor: float = DEFAULTS.prescale_factor) -> ChoiceDataset:
    """Divide every attribute column by ``factor``."""
    if not factor > 0:
        raise ValueError(f"prescale factor must be > 0, got {factor}")
    if ds.is_normalized:
        raise ValueError("prescale must be applied before min-max normalization")
    frame = ds.frame.copy()
    columns = ds.schema.attribute_columns
    frame[columns] = frame[columns] / factor
    return ds.with_frame(frame, prescale_factor=ds.prescale_factor * factor)


def fit_scaling(ds: ChoiceDataset) -> ScalingRecord:
    """Record per-column bounds (non-cost) and pooled bounds (cost)."""
    bounds: Dict[str, Tuple[float, float]] = {}
    for column in ds.schema.non_cost_columns:
        values = ds.column(column)
        lo, hi = float(values.min()), float(values.max())
        if not hi > lo:
            raise DegenerateColumnError(f"column {column!r} is constant ({lo})", column=column)
        bounds[column] = (lo, hi)

    cost_columns = tuple(ds.schema.cost_columns)
    cost_bounds = None
    if cost_columns:
        pooled = ds.frame[list(cost_columns)].to_numpy(dtype=float)
        lo, hi = float(pooled.min()), float(pooled.max())
        if not hi > lo:
            name = 'cost group (' + ', '.join(cost_columns) + ')'
            raise DegenerateColumnError(f"{name} is constant ({lo})", column=name)
        cost_bounds = (lo, hi)
    return ScalingRecord(
        bounds=bounds, cost_columns=cost_columns, cost_bounds=cost_bounds,
        prescale_factor=ds.prescale_factor,
    )


def _affine(ds: ChoiceDataset, scaling: ScalingRecord, inverse: bool) -> pd.DataFrame:
    frame = ds.frame.copy()
    for column in ds.schema.attribute_columns:
        lo, hi = scaling.bounds_for(column)
        if inverse:
            frame[column] = frame[column] * (hi - lo) + lo
        else:
            frame[column] = (frame[column] - lo) / (hi - lo)
    return frame


def minmax_normalize(ds: ChoiceDataset) -> Tuple[ChoiceDataset, ScalingRecord]:
    """Map attributes to [0, 1]; returns the normalized dataset and its bounds."""
    if ds.n == 0:
        raise ValueError("cannot normalize an empty dataset")
    scaling = fit_scaling(ds)
    return ds.with_frame(_affine(ds, scaling, inverse=False), scaling=scaling), scaling


def apply_scaling(ds: ChoiceDataset, scaling: ScalingRecord) -> ChoiceDataset:
    """Prescale and normalize ``ds`` (original units) with recorded bounds."""
    if ds.is_normalized:
        raise ValueError("dataset is already normalized")
    for column in ds.schema.attribute_columns:
        scaling.bounds_for(column)
    remaining = scaling.prescale_factor / ds.prescale_factor
    staged = prescale(ds, remaining) if remaining != 1.0 else ds
    return staged.with_frame(_affine(staged, scaling, inverse=False), scaling=scaling)


def denormalize(ds: ChoiceDataset, scaling: Optional[ScalingRecord] = None,
                *, undo_prescale: bool = True) -> ChoiceDataset:
    """Invert min-max normalization (and optionally the prescale)."""
    scaling = scaling or ds.scaling
    if scaling is None:
        raise ValueError("dataset carries no scaling record")
    frame = _affine(ds, scaling, inverse=True)
    factor = scaling.prescale_factor
    if undo_prescale and factor != 1.0:
        columns = ds.schema.attribute_columns
        frame[columns] = frame[columns] * factor
        factor = 1.0
    return ds.with_frame(frame, scaling=None, prescale_factor=factor)


def _floor_count(n: int, fraction: float) -> int:
    # 100 * 0.57 is 56.999... in floating point
    return int(np.floor(n * fraction + 1e-9))


def stratified_split(ds: ChoiceDataset, test_fraction: float = DEFAULTS.test_fraction,
                     seed: int = DEFAULTS.split_seed) -> Tuple[ChoiceDataset, ChoiceDataset]:
    """Seeded per-class shuffle and partition; remainders go to train.

    Both outputs are shuffled again as a whole, so the train order is random
    (and reproducible) rather than grouped by class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    choices = ds.choices
    train_idx: List[int] = []
    test_idx: List[int] = []
    for cls in np.unique(choices):
        members = np.flatnonzero(choices == cls)
        if len(members) < 2:
            raise ValueError(f"choice class {cls} has fewer than 2 observations")
        shuffled = rng.permutation(members)
        n_test = _floor_count(len(members), test_fraction)
        test_idx.extend(shuffled[:n_test].tolist())
        train_idx.extend(shuffled[n_test:].tolist())
    train_order = rng.permutation(np.asarray(train_idx, dtype=np.int64))
    test_order = rng.permutation(np.asarray(test_idx, dtype=np.int64))
    return ds.subset(train_order), ds.subset(test_order)


def validation_tail(train: ChoiceDataset,
                    fraction: float = DEFAULTS.validation_fraction) -> Tuple[ChoiceDataset, ChoiceDataset]:
    """Hold out the last ``floor(N * fraction)`` rows, order preserved."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    n_val = _floor_count(train.n, fraction)
    cut = train.n - n_val
    return train.subset(range(cut)), train.subset(range(cut, train.n))


class UnitConvention(str, Enum):
    ORIGINAL = 'original'
    PER_HUNDRED = 'per100'


def gradient_scale(column: str, scaling: ScalingRecord,
                   unit: UnitConvention = UnitConvention.PER_HUNDRED) -> float:
    """Multiplier taking d/dx_normalized to d/dx in the requested units."""
    factor = 1.0 / (scaling.range_for(column) * scaling.prescale_factor)
    if UnitConvention(unit) is UnitConvention.PER_HUNDRED:
        factor *= 100.0
    return factor


def gradient_to_original_units(grad_normalized: float, column: str, scaling: ScalingRecord,
                               unit: UnitConvention = UnitConvention.ORIGINAL) -> float:
    """Chain rule from normalized space back to original (or per-100) units."""
    return grad_normalized * gradient_scale(column, scaling, unit)


def market_shares(ds: ChoiceDataset) -> pd.DataFrame:
    counts = np.bincount(ds.choice_index, minlength=ds.schema.n_alternatives)
    total = counts.sum()
    return pd.DataFrame({
        'alternative': ds.schema.names,
        'frequency': counts,
        'share': counts / total if total else np.zeros_like(counts, dtype=float),
    })


def describe_attributes(ds: ChoiceDataset) -> pd.DataFrame:
    """Mean, median, std, min and max per alternative and attribute."""
    rows = []
    for alt in ds.schema.alternatives:
        for column in alt.columns:
            values = ds.frame[column]
            rows.append({
                'attribute': alt.label_of(column),
                'alternative': alt.name,
                'column': column,
                'mean': values.mean(),
                'median': values.median(),
                'std': values.std(),
                'min': values.min(),
                'max': values.max(),
            })
    return pd.DataFrame(rows)
