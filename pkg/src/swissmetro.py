"""Swissmetro stated-preference survey: raw-file ingestion and download.

The raw release is tab-separated with one row per choice situation. Columns
used here (names configurable through ``column_map``):

    ID, GA, TRAIN_AV, SM_AV, CAR_AV, TRAIN_TT, TRAIN_CO, TRAIN_HE,
    SM_TT, SM_CO, SM_HE, CAR_TT, CAR_CO, CHOICE

CHOICE codes: 0 unknown, 1 train, 2 Swissmetro, 3 car.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import pandas as pd
import requests

from .config import DEFAULTS
from .data import AlternativeColumns, AttributeSchema, ChoiceDataset, frame_to_dataset
from .errors import SchemaError

logger = logging.getLogger(__name__)

RAW_COLUMNS = (
    'ID', 'GA', 'TRAIN_AV', 'SM_AV', 'CAR_AV',
    'TRAIN_TT', 'TRAIN_CO', 'TRAIN_HE',
    'SM_TT', 'SM_CO', 'SM_HE',
    'CAR_TT', 'CAR_CO', 'CHOICE',
)
AVAILABILITY_COLUMNS = ('TRAIN_AV', 'SM_AV', 'CAR_AV')
PUBLIC_TRANSPORT_COSTS = ('TRAIN_CO', 'SM_CO')


def swissmetro_schema() -> AttributeSchema:
    """Train, SM and car; cost and time for all, headway for train and SM."""
    return AttributeSchema(
        alternatives=(
            AlternativeColumns('TRAIN', 'TRAIN_CO', ('TRAIN_TT', 'TRAIN_HE')),
            AlternativeColumns('SM', 'SM_CO', ('SM_TT', 'SM_HE')),
            AlternativeColumns('CAR', 'CAR_CO', ('CAR_TT',)),
        ),
        choice_column='CHOICE',
        respondent_column='ID',
    )


@dataclass
class SwissmetroFilterConfig:
    """Cleaning rules applied to the raw release.

    ``column_map`` renames raw headers to the canonical names above, for
    releases that spell them differently.
    """
    column_map: Dict[str, str] = field(default_factory=dict)
    require_all_available: bool = True
    drop_choice_codes: Tuple[int, ...] = (0,)
    annual_card_zero_cost: bool = True
    keep_purposes: Optional[Tuple[int, ...]] = None
    expected_rows: Optional[int] = DEFAULTS.swissmetro_target_rows

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'SwissmetroFilterConfig':
        values = dict(raw)
        for key in ('drop_choice_codes', 'keep_purposes'):
            if values.get(key) is not None:
                values[key] = tuple(int(v) for v in values[key])
        return cls(**values)

    @classmethod
    def from_json(cls, path: str) -> 'SwissmetroFilterConfig':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def read_raw_swissmetro(path: str, column_map: Optional[Mapping[str, str]] = None) -> pd.DataFrame:
    """Read the raw release (tab- or comma-separated, detected by pandas)."""
    raw = pd.read_csv(path, sep=None, engine='python')
    raw.columns = [str(c).strip() for c in raw.columns]
    if column_map:
        unknown = [c for c in column_map if c not in raw.columns]
        if unknown:
            raise SchemaError(
                f"column map refers to unknown raw columns: {', '.join(unknown)}", column=unknown[0],
            )
        raw = raw.rename(columns=dict(column_map))
    return raw


def clean_swissmetro(raw: pd.DataFrame, filters: SwissmetroFilterConfig) -> pd.DataFrame:
    """Apply availability, non-response and annual-card rules; logs each drop."""
    required = list(RAW_COLUMNS)
    if filters.keep_purposes is not None:
        required.append('PURPOSE')
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing raw Swissmetro column {missing[0]!r}", column=missing[0])

    df = raw.copy()
    total = len(df)

    if filters.require_all_available:
        available = (df[list(AVAILABILITY_COLUMNS)] == 1).all(axis=1)
        logger.info("Dropping %d rows with an unavailable alternative", int((~available).sum()))
        df = df[available]

    if filters.drop_choice_codes:
        non_response = df['CHOICE'].isin(filters.drop_choice_codes)
        logger.info("Dropping %d rows with choice codes %s", int(non_response.sum()),
                    list(filters.drop_choice_codes))
        df = df[~non_response]

    if filters.keep_purposes is not None:
        keep = df['PURPOSE'].isin(filters.keep_purposes)
        logger.info("Dropping %d rows outside trip purposes %s", int((~keep).sum()),
                    list(filters.keep_purposes))
        df = df[keep]

    df = df.copy()
    if filters.annual_card_zero_cost:
        holders = df['GA'] == 1
        df.loc[holders, list(PUBLIC_TRANSPORT_COSTS)] = 0
        logger.info("Set public-transport cost to 0 for %d annual-card rows", int(holders.sum()))

    logger.info("Swissmetro cleaning kept %d of %d rows", len(df), total)
    if filters.expected_rows is not None and len(df) != filters.expected_rows:
        logger.warning("Swissmetro cleaning produced %d rows, expected %d; check the filter config",
                       len(df), filters.expected_rows)
    return df.reset_index(drop=True)


def ingest_swissmetro(path: str, filters: Optional[SwissmetroFilterConfig] = None) -> ChoiceDataset:
    """Load and clean the raw release into a train/SM/car ChoiceDataset."""
    filters = filters or SwissmetroFilterConfig()
    schema = swissmetro_schema()
    cleaned = clean_swissmetro(read_raw_swissmetro(path, filters.column_map), filters)
    keep = schema.attribute_columns + [schema.choice_column, schema.respondent_column]
    ds = frame_to_dataset(cleaned[keep], schema)
    logger.info("Swissmetro: %d situations from %d respondents",
                ds.n, ds.frame[schema.respondent_column].nunique())
    return ds


def download_swissmetro(dest: str, url: str = DEFAULTS.swissmetro_url, *,
                        overwrite: bool = False, max_retries: int = 3) -> str:
    """Download the raw release to ``dest``; retries transient failures."""
    if os.path.exists(dest) and not overwrite:
        raise FileExistsError(f"{dest} already exists (pass overwrite=True to replace it)")

    for attempt in range(max_retries + 1):
        try:
            response = requests.get(url, timeout=30)
            response.raise_for_status()
            break
        except requests.exceptions.RequestException as e:
            if attempt < max_retries:
                delay = 2 ** attempt
                logger.warning("Download of %s failed: %s. Retrying in %ss...", url, e, delay)
                time.sleep(delay)
                continue
            logger.error("Download of %s failed after %d retries: %s", url, max_retries, e)
            raise

    parent = os.path.dirname(os.path.abspath(dest))
    os.makedirs(parent, exist_ok=True)
    with open(dest, 'wb') as f:
        f.write(response.content)
    logger.info("Saved %d bytes from %s to %s", len(response.content), url, dest)
    return dest
