#!/usr/bin/env python3
"""Monte Carlo study: recover known marginal utilities and values of time.

For each synthetic dataset (linear and log-linear utility), choices are
simulated on a fixed design and every requested model is estimated on the
same split. One CSV row per (dataset, model) reports goodness of fit and
per-mode mean MU_TC, MU_TT and VTT next to their true values.

Examples:
    python scripts/run_monte_carlo.py --dry-run
    python scripts/run_monte_carlo.py --repetitions 10
    python scripts/run_monte_carlo.py \
        --datasets linear,log_linear \
        --models true,mnl_linear,mnl_log_linear,ass,asu \
        --design reports/swissmetro_design.csv \
        --output reports/monte_carlo_summary.csv --resume
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from filelock import FileLock

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))
sys.path.insert(0, str(PROJECT_ROOT / 'src'))

from src.architectures import Topology, Variant, parameter_count
from src.config import DEFAULTS, TrainConfig
from src.data import (
    ChoiceDataset,
    ScalingRecord,
    UnitConvention,
    apply_scaling,
    load_wide_csv,
    minmax_normalize,
    prescale,
    stratified_split,
)
from src.mnl import MnlForm, fit_mnl, mnl_dataset_loglik, mnl_marginal_utility_table, monte_carlo_spec
from src.swissmetro import swissmetro_schema
from src.synthgen import DgpSpec, dgp_preset, generate_choices, pivot_design, true_loglik, truth_table
from src.training import (
    NetworkSpec,
    ensemble_test_loglik,
    read_csv_rows,
    rho_squared,
    train_ensemble,
    write_csv,
)
from src.welfare import MuTable, compare_to_truth, marginal_utilities, ratio_as_attribute, vtt

MODEL_CHOICES = ('true', 'mnl_linear', 'mnl_log_linear', 'ass', 'asu', 'fc')
DATASET_CHOICES = ('linear', 'log_linear')


@dataclass
class DatasetRun:
    name: str
    dgp: DgpSpec
    full: ChoiceDataset
    train: ChoiceDataset
    test: ChoiceDataset
    scaling: ScalingRecord


def parse_name_list(raw: str) -> List[str]:
    values = [part.strip() for part in raw.split(',') if part.strip()]
    if not values:
        raise argparse.ArgumentTypeError('expected at least one name')
    return values


def prepare_dataset(name: str, design: ChoiceDataset, seed: int,
                    test_fraction: float = DEFAULTS.test_fraction) -> DatasetRun:
    dgp = dgp_preset(name)
    full = generate_choices(design, dgp, seed)
    _, scaling = minmax_normalize(prescale(full, DEFAULTS.prescale_factor))
    train, test = stratified_split(full, test_fraction, seed)
    return DatasetRun(name, dgp, full, train, test, scaling)


def _fit_columns(train_ll: float, test_ll: float, run: DatasetRun) -> Dict[str, Any]:
    J = run.full.schema.n_alternatives
    return {
        'train_ll': round(train_ll, 6),
        'test_ll': round(test_ll, 6),
        'full_ll': round(train_ll + test_ll, 6),
        'test_rho_squared': round(rho_squared(test_ll, run.test.n, J), 6),
    }


def _welfare_columns(mu: MuTable, run: DatasetRun) -> Dict[str, Any]:
    """Per-mode mean estimate, truth and bias for MU_TC, MU_TT and VTT."""
    estimated = pd.concat([mu.frame[['row', 'alternative', 'attribute', 'value']],
                           ratio_as_attribute(vtt(mu))], ignore_index=True)
    comparison = compare_to_truth(estimated, truth_table(run.dgp, run.full))
    columns: Dict[str, Any] = {}
    for _, row in comparison.iterrows():
        prefix = f"{row['alternative']}_{row['attribute']}"
        columns[f'{prefix}_estimate'] = round(float(row['estimate']), 6)
        columns[f'{prefix}_truth'] = round(float(row['truth']), 6)
        columns[f'{prefix}_bias'] = round(float(row['bias']), 6)
    return columns


def evaluate_truth(run: DatasetRun) -> Dict[str, Any]:
    row: Dict[str, Any] = {'n_parameters': 2}
    row.update(_fit_columns(true_loglik(run.dgp, run.train), true_loglik(run.dgp, run.test), run))
    return row


def evaluate_mnl(run: DatasetRun, form: MnlForm) -> Dict[str, Any]:
    spec = monte_carlo_spec(run.full.schema, form)
    train = prescale(run.train, DEFAULTS.prescale_factor)
    test = prescale(run.test, DEFAULTS.prescale_factor)
    estimate = fit_mnl(spec, train)
    row: Dict[str, Any] = {'n_parameters': spec.n_parameters, 'converged': estimate.converged}
    row.update({name: round(value, 6) for name, value in zip(estimate.names, estimate.values)})
    row.update(_fit_columns(estimate.loglik, mnl_dataset_loglik(spec, estimate.values, test), run))
    full = prescale(run.full, DEFAULTS.prescale_factor)
    mu = MuTable(mnl_marginal_utility_table(spec, estimate.values, full), UnitConvention.PER_HUNDRED)
    row.update(_welfare_columns(mu, run))
    return row


def evaluate_network(run: DatasetRun, variant: Variant, topology: Topology, R: int,
                     cfg: TrainConfig) -> Dict[str, Any]:
    train = apply_scaling(run.train, run.scaling)
    test = apply_scaling(run.test, run.scaling)
    ens = train_ensemble(NetworkSpec(variant, topology, use_asc=False), train, R, cfg, test=test)
    train_ll, _ = ensemble_test_loglik(ens, train)
    test_ll, pooled_test_ll = ensemble_test_loglik(ens, test)
    row: Dict[str, Any] = {
        'n_parameters': parameter_count(ens.members[0]),
        'topology': topology.label,
        'repetitions': R,
        'test_ll_of_mean_prob': round(pooled_test_ll, 6),
    }
    row.update(_fit_columns(train_ll, test_ll, run))
    row.update(_welfare_columns(marginal_utilities(ens, run.full, run.scaling), run))
    return row


def evaluate_model(run: DatasetRun, model: str, topology: Topology, R: int,
                   cfg: TrainConfig) -> Dict[str, Any]:
    if model == 'true':
        metrics = evaluate_truth(run)
    elif model == 'mnl_linear':
        metrics = evaluate_mnl(run, MnlForm.LINEAR)
    elif model == 'mnl_log_linear':
        metrics = evaluate_mnl(run, MnlForm.LOG_LINEAR)
    elif model in ('ass', 'asu', 'fc'):
        metrics = evaluate_network(run, Variant(model), topology, R, cfg)
    else:
        raise ValueError(f"unknown model {model!r}; choose from {', '.join(MODEL_CHOICES)}")
    return {'dataset': run.name, 'model': model, **metrics}


def _row_key(row: Dict[str, Any]) -> Tuple[str, str]:
    return str(row['dataset']), str(row['model'])


def run_study(datasets: List[str], models: List[str], design: ChoiceDataset, *,
              seed: int, topology: Topology, R: int, cfg: TrainConfig,
              output: Optional[Path] = None, resume: bool = False) -> List[Dict[str, Any]]:
    """Evaluate every (dataset, model) pair, rewriting ``output`` after each one."""
    requested = {(d, m) for d in datasets for m in models}
    rows: List[Dict[str, Any]] = []
    if output is not None and resume:
        rows = [r for r in read_csv_rows(output) if _row_key(r) in requested]
        if rows:
            print(f'Resumed {len(rows)} completed runs from {output}')
    completed = {_row_key(r) for r in rows}

    for name in datasets:
        pending = [m for m in models if (name, m) not in completed]
        if not pending:
            print(f'Skipping completed dataset {name}')
            continue
        run = prepare_dataset(name, design, seed)
        for model in pending:
            print(f'Running dataset={name} model={model}...')
            rows.append(evaluate_model(run, model, topology, R, cfg))
            completed.add((name, model))
            if output is not None:
                with FileLock(f"{output}.lock", timeout=30):
                    write_csv(rows, output)
                print(f'Saved progress: {len(rows)}/{len(requested)} runs -> {output}')
    return rows


def print_summary(rows: List[Dict[str, Any]]) -> None:
    for row in rows:
        vtt_cols = [k for k in row if k.endswith('_VTT_estimate')]
        vtt_text = ' '.join(f"{k.split('_')[0]}={float(row[k]):.2f}" for k in vtt_cols)
        print(f"{row['dataset']:<10} {row['model']:<15} test LL={float(row['test_ll']):9.2f} "
              f"rho2={float(row['test_rho_squared']):.3f} {vtt_text}")


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description='Run the synthetic-data model comparison.',
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument('--datasets', type=parse_name_list, default=list(DATASET_CHOICES),
                        help='Comma-separated DGP presets.')
    parser.add_argument('--models', type=parse_name_list,
                        default=['true', 'mnl_linear', 'mnl_log_linear', 'ass'],
                        help=f"Comma-separated models from {', '.join(MODEL_CHOICES)}.")
    parser.add_argument('--design', type=str, default=None,
                        help='Wide CSV design in Swissmetro layout (default: generated pivot design).')
    parser.add_argument('--seed', type=int, default=DEFAULTS.base_seed)
    parser.add_argument('--repetitions', type=int, default=DEFAULTS.repetitions_desk)
    parser.add_argument('--hidden-layers', type=int, default=1)
    parser.add_argument('--nodes', type=int, default=10)
    parser.add_argument('--activation', choices=['relu', 'tanh'], default='tanh')
    parser.add_argument('--workers', type=int, default=1)
    parser.add_argument('--output', type=Path, default=Path('reports/monte_carlo_summary.csv'))
    parser.add_argument('--dry-run', action='store_true',
                        help='Print planned runs without estimating anything.')
    parser.add_argument('--resume', action='store_true',
                        help='Resume from existing output CSV and skip completed runs.')
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'])
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s:%(name)s:%(message)s", force=True)
    unknown = [m for m in args.models if m not in MODEL_CHOICES]
    unknown += [d for d in args.datasets if d not in DATASET_CHOICES]
    if unknown:
        print(f"Unknown dataset or model names: {', '.join(unknown)}")
        return 1

    print(f'Datasets: {", ".join(args.datasets)}')
    print(f'Models: {", ".join(args.models)}')
    if args.dry_run:
        for idx, (name, model) in enumerate(((d, m) for d in args.datasets for m in args.models), start=1):
            print(f'{idx}: dataset={name} model={model}')
        return 0

    if args.design:
        design = load_wide_csv(args.design, swissmetro_schema(), require_choice=False)
    else:
        design = pivot_design(DEFAULTS.swissmetro_target_rows // 9, args.seed)
    topology = Topology(args.hidden_layers, args.nodes, args.activation)
    cfg = TrainConfig(base_seed=args.seed, workers=args.workers)

    try:
        rows = run_study(args.datasets, args.models, design, seed=args.seed, topology=topology,
                         R=args.repetitions, cfg=cfg, output=args.output, resume=args.resume)
    except KeyboardInterrupt:
        print('\nInterrupted; completed runs are saved.')
        return 1
    print(f'Wrote {len(rows)} runs to {args.output}')
    print_summary(rows)
    return 0


if __name__ == '__main__':
    raise SystemExit(main())
