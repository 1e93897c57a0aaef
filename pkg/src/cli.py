"""Command-line pipeline: data preparation, estimation, welfare and reports.

Every command reads a RunConfig (JSON via --config, overridden by flags) and
writes its outputs under ``output_dir`` with a provenance stamp.

Exit codes: 0 success, 1 validation or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import pandas as pd

from .architectures import Topology, Variant
from .config import DEFAULTS, RunConfig, ensure_output_dir, load_environment
from .data import (
    AttributeSchema,
    ChoiceDataset,
    ScalingRecord,
    UnitConvention,
    apply_scaling,
    describe_attributes,
    load_wide_csv,
    market_shares,
    minmax_normalize,
    prescale,
    schema_from_json,
    stratified_split,
)
from .errors import ChoiceDataError, NumericalError
from .mnl import (
    MnlForm,
    fit_mnl,
    format_estimate_table,
    mnl_dataset_loglik,
    mnl_marginal_utility_table,
    monte_carlo_spec,
    save_estimate,
    swissmetro_spec,
)
from .provenance import header_lines, provenance, write_frame, write_json
from .report import build_report, write_report
from .swissmetro import SwissmetroFilterConfig, download_swissmetro, ingest_swissmetro, swissmetro_schema
from .synthgen import DgpSpec, dgp_preset, generate_choices, pivot_design, true_loglik, truth_table
from .training import (
    NetworkSpec,
    grid_search,
    goodness_of_fit,
    load_ensemble,
    rho_squared,
    save_ensemble,
    default_grid,
    train_ensemble,
)
from .welfare import (
    Aggregation,
    MuTable,
    compare_to_truth,
    marginal_utilities,
    plot_frame,
    ratio_as_attribute,
    summarize_welfare,
    vowt,
    vtt,
)

logger = logging.getLogger(__name__)


# --- config helpers --------------------------------------------------------------

def _out(config: RunConfig, name: str) -> str:
    return str(ensure_output_dir(config.output_dir) / name)


def _path(value: Optional[str], config: RunConfig, default_name: str) -> str:
    return value or os.path.join(config.output_dir, default_name)


def _schema(config: RunConfig) -> AttributeSchema:
    if config.schema:
        return AttributeSchema.from_dict(config.schema)
    if config.schema_path:
        return schema_from_json(config.schema_path)
    default = os.path.join(config.output_dir, 'schema.json')
    if os.path.exists(default):
        return schema_from_json(default)
    return swissmetro_schema()


def _scaling(config: RunConfig) -> ScalingRecord:
    return ScalingRecord.from_json(_path(config.scaling_path, config, 'scaling.json'))


def _dgp(config: RunConfig) -> Optional[DgpSpec]:
    if not config.dgp:
        return None
    values = dict(config.dgp)
    preset = values.pop('preset', None)
    if preset:
        return replace(dgp_preset(preset), **values)
    return DgpSpec.from_dict(values)


def _load_split(config: RunConfig):
    schema = _schema(config)
    train = load_wide_csv(_path(config.train_path, config, 'train.csv'), schema)
    test = load_wide_csv(_path(config.test_path, config, 'test.csv'), schema)
    return train, test


def _full_data(config: RunConfig) -> ChoiceDataset:
    if config.data_path:
        return load_wide_csv(config.data_path, _schema(config))
    train, test = _load_split(config)
    return train.with_frame(pd.concat([train.frame, test.frame], ignore_index=True))


def _stamp(config: RunConfig, command: str) -> dict:
    return provenance(config.to_dict(), config.seed, command)


# --- commands ----------------------------------------------------------------------

def cmd_fetch_data(config: RunConfig) -> int:
    env = load_environment()
    dest = config.swissmetro_path or env['swissmetro_path'] or _out(config, 'swissmetro.dat')
    download_swissmetro(dest, env['swissmetro_url'], overwrite=config.overwrite)
    print(f"Swissmetro data saved to {dest}")
    return 0


def cmd_prepare(config: RunConfig) -> int:
    """Ingest, record scaling and split; CSVs stay in original units."""
    env = load_environment()
    swissmetro_path = config.swissmetro_path or (None if config.data_path else env['swissmetro_path'])
    if swissmetro_path:
        ds = ingest_swissmetro(swissmetro_path, SwissmetroFilterConfig.from_dict(config.swissmetro_filters))
    elif config.data_path:
        ds = load_wide_csv(config.data_path, _schema(config))
    else:
        raise ValueError("prepare needs data_path or swissmetro_path (or SWISSMETRO_PATH)")
    if ds.n == 0:
        raise ValueError("dataset is empty")

    _, scaling = minmax_normalize(prescale(ds, config.prescale_factor))
    train, test = stratified_split(ds, config.test_fraction, config.seed)
    stamp = _stamp(config, 'prepare')

    train.to_csv(_out(config, 'train.csv'), header_lines(stamp))
    test.to_csv(_out(config, 'test.csv'), header_lines(stamp))
    scaling.to_json(_out(config, 'scaling.json'), stamp)
    write_json(ds.schema.to_dict(), _out(config, 'schema.json'), stamp)
    shares = market_shares(ds)
    write_frame(shares, _out(config, 'market_shares.csv'), stamp)
    write_frame(describe_attributes(ds), _out(config, 'attribute_stats.csv'), stamp)

    print(f"Prepared {ds.n} observations: train={train.n} test={test.n}")
    print(shares.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return 0


def cmd_gen_synth(config: RunConfig) -> int:
    dgp = _dgp(config)
    if dgp is None:
        raise ValueError("gen-synth needs a 'dgp' section (e.g. {\"preset\": \"linear\"})")
    if config.design_path:
        design = load_wide_csv(config.design_path, _schema(config), require_choice=False)
    else:
        logger.info("No design_path; using a generated pivot design")
        design = pivot_design(DEFAULTS.swissmetro_target_rows // 9, config.seed)
    if design.n == 0:
        raise ValueError("design has no rows")
    synthetic = generate_choices(design, dgp, config.seed)
    stamp = _stamp(config, 'gen-synth')
    synthetic.to_csv(_out(config, 'synthetic.csv'), header_lines(stamp))
    write_frame(truth_table(dgp, design), _out(config, 'truth.csv'), stamp)

    shares = market_shares(synthetic)
    print(f"Generated {synthetic.n} synthetic choices ({dgp.form.value}, "
          f"beta_TC={dgp.beta_tc}, beta_TT={dgp.beta_tt})")
    print(shares.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    print(f"True log-likelihood: {true_loglik(dgp, synthetic):.2f}")
    return 0


def _normalized_split(config: RunConfig):
    train, test = _load_split(config)
    scaling = _scaling(config)
    return apply_scaling(train, scaling), apply_scaling(test, scaling)


def cmd_grid_search(config: RunConfig) -> int:
    train, test = _normalized_split(config)
    grid = config.grid or default_grid()
    stamp = _stamp(config, 'grid-search')
    result = grid_search(
        grid, train, test, config.repetitions, config.train_config(),
        variant=Variant(config.variant), use_asc=config.use_asc,
        output=Path(_out(config, 'grid_search.csv')), resume=config.resume,
        header_lines=header_lines(stamp),
    )
    write_json({'selected': result.selected, 'configurations': len(result.rows)},
               _out(config, 'grid_selected.json'), stamp)
    best = result.selected
    print(f"Evaluated {len(result.rows)} configurations")
    print(f"Selected: {best['hidden_layers']} layer(s) x {best['nodes_per_layer']} nodes, "
          f"{best['activation']} (mean test LL {float(best['mean_test_ll']):.2f})")
    return 0


def cmd_train(config: RunConfig) -> int:
    train, test = _normalized_split(config)
    spec = NetworkSpec(
        Variant(config.variant),
        Topology(config.hidden_layers, config.nodes_per_layer, config.activation),
        config.use_asc,
    )
    ens = train_ensemble(spec, train, config.repetitions, config.train_config(), test=test)
    stamp = _stamp(config, 'train')
    save_ensemble(ens, config.ensemble_dir or _out(config, 'ensemble'), stamp)

    fit = goodness_of_fit(ens, train, test)
    seconds = fit.pop('mean_seconds')
    write_json(fit, _out(config, 'train_metrics.json'), stamp)
    print(f"Trained {ens.size} x {spec.variant.value} {spec.topology.label} "
          f"({fit['n_parameters']} parameters, {seconds:.1f}s per run)")
    print(f"Test LL (mean of members): {fit['test_ll_mean_of_members']:.2f}")
    print(f"Test LL (mean probability): {fit['test_ll_of_mean_prob']:.2f}")
    print(f"Test rho-squared: {fit['test_rho_squared']:.3f}")
    return 0


def cmd_mnl(config: RunConfig) -> int:
    train, test = _load_split(config)
    form = MnlForm(config.mnl_form)
    presets: Dict[str, Callable] = {'monte_carlo': monte_carlo_spec, 'swissmetro': swissmetro_spec}
    if config.mnl_preset not in presets:
        raise ValueError(f"unknown MNL preset {config.mnl_preset!r}; choose from {sorted(presets)}")
    spec = presets[config.mnl_preset](train.schema, form)

    train_s = prescale(train, config.prescale_factor)
    test_s = prescale(test, config.prescale_factor)
    estimate = fit_mnl(spec, train_s, tol=config.mnl_tolerance, max_iterations=config.mnl_max_iterations)
    test_ll = mnl_dataset_loglik(spec, estimate.values, test_s)
    J = train.schema.n_alternatives
    metrics = {
        'train_ll': estimate.loglik,
        'test_ll': test_ll,
        'full_ll': estimate.loglik + test_ll,
        'test_rho_squared': rho_squared(test_ll, test.n, J),
        'n_train': train.n,
        'n_test': test.n,
    }
    stamp = _stamp(config, 'mnl')
    save_estimate(estimate, _out(config, f'mnl_{form.value}.json'), {**stamp, 'metrics': metrics})

    full = prescale(train.with_frame(pd.concat([train.frame, test.frame], ignore_index=True)),
                    config.prescale_factor)
    mu_frame = mnl_marginal_utility_table(spec, estimate.values, full, UnitConvention(config.unit))
    write_frame(mu_frame, _out(config, f'mnl_{form.value}_mu.csv'), stamp)

    print(format_estimate_table(estimate))
    print(f"Test LL: {test_ll:.2f}  test rho-squared: {metrics['test_rho_squared']:.3f}")
    return 0


def cmd_welfare(config: RunConfig) -> int:
    ens = load_ensemble(config.ensemble_dir or os.path.join(config.output_dir, 'ensemble'))
    scaling = ens.scaling or _scaling(config)
    ds = _full_data(config)
    mu = marginal_utilities(ens, ds, scaling, UnitConvention(config.unit))
    return _welfare_outputs(config, mu, ds, 'welfare')


def _welfare_outputs(config: RunConfig, mu: MuTable, ds: ChoiceDataset, command: str) -> int:
    aggregation = Aggregation(config.aggregation)
    vtt_rows = vtt(mu, aggregation)
    vowt_rows = vowt(mu, aggregation)
    summary = summarize_welfare([vtt_rows, vowt_rows], config.trim_upper_quantile,
                                config.drop_negative, config.bin_edges)
    stamp = _stamp(config, command)

    write_frame(mu.frame, _out(config, 'mu.csv'), stamp)
    write_frame(pd.concat([vtt_rows, vowt_rows], ignore_index=True), _out(config, 'vtt_vowt.csv'), stamp)
    write_frame(plot_frame(mu), _out(config, 'mu_plot.csv'), stamp)
    write_frame(summary.bins, _out(config, 'vtt_bins.csv'), stamp)
    write_json(summary.to_dict(), _out(config, 'welfare_summary.json'), stamp)

    dgp = _dgp(config)
    if dgp is not None:
        # true MUs are per 100 units; VTT is the same in either convention
        parts = [ratio_as_attribute(vtt_rows)]
        if mu.unit is UnitConvention.PER_HUNDRED:
            parts.insert(0, mu.frame[['row', 'alternative', 'attribute', 'value']])
        estimated = pd.concat(parts, ignore_index=True)
        comparison = compare_to_truth(estimated, truth_table(dgp, ds))
        write_frame(comparison, _out(config, 'truth_comparison.csv'), stamp)
        print(comparison.to_string(index=False, float_format=lambda v: f"{v:.3f}"))

    print(summary.per_mode[['measure', 'alternative', 'mean', 'retained', 'dropped_negative',
                            'dropped_upper']].to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    if summary.empty:
        print("Warning: no VTT/VoWT values retained after trimming")
        return 1
    return 0


def cmd_report(config: RunConfig) -> int:
    def optional_frame(name: str) -> Optional[pd.DataFrame]:
        path = os.path.join(config.output_dir, name)
        return pd.read_csv(path, comment='#') if os.path.exists(path) else None

    per_mode = None
    summary_path = os.path.join(config.output_dir, 'welfare_summary.json')
    if os.path.exists(summary_path):
        with open(summary_path, encoding='utf-8') as f:
            per_mode = pd.DataFrame(json.load(f).get('per_mode', []))
    html = build_report(optional_frame('mu_plot.csv'), optional_frame('vtt_bins.csv'), per_mode,
                        optional_frame('attribute_stats.csv'), stamp=_stamp(config, 'report'))
    path = write_report(html, _out(config, 'report.html'))
    print(f"Report written to {path}")
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    'fetch-data': cmd_fetch_data,
    'prepare': cmd_prepare,
    'gen-synth': cmd_gen_synth,
    'grid-search': cmd_grid_search,
    'train': cmd_train,
    'mnl': cmd_mnl,
    'welfare': cmd_welfare,
    'report': cmd_report,
}


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Neural and logit discrete-choice estimation with welfare measures',
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', type=str, default=None, help='JSON run configuration')
    parser.add_argument('--seed', type=int, default=None, help='Top-level seed')
    parser.add_argument('--workers', type=int, default=None, help='Worker processes for training')
    parser.add_argument('--output_dir', type=str, default=None, help='Output directory')
    parser.add_argument('--data_path', type=str, default=None)
    parser.add_argument('--design_path', type=str, default=None)
    parser.add_argument('--schema_path', type=str, default=None)
    parser.add_argument('--swissmetro_path', type=str, default=None)
    parser.add_argument('--ensemble_dir', type=str, default=None)
    parser.add_argument('--variant', choices=[v.value for v in Variant], default=None)
    parser.add_argument('--hidden_layers', type=int, default=None)
    parser.add_argument('--nodes_per_layer', type=int, default=None)
    parser.add_argument('--activation', choices=['relu', 'tanh'], default=None)
    parser.add_argument('--use_asc', action=argparse.BooleanOptionalAction, default=None,
                        help='Attach ASC bias nodes to all but the first alternative')
    parser.add_argument('--repetitions', type=int, default=None,
                        help=f'Ensemble size (desk scale {DEFAULTS.repetitions_desk}, '
                             f'full scale {DEFAULTS.repetitions_full})')
    parser.add_argument('--resume', action='store_true', default=None,
                        help='Resume grid search from its CSV')
    parser.add_argument('--overwrite', action='store_true', default=None,
                        help='fetch-data: replace an existing download')
    parser.add_argument('--mnl_form', choices=[f.value for f in MnlForm], default=None)
    parser.add_argument('--mnl_preset', choices=['monte_carlo', 'swissmetro'], default=None)
    parser.add_argument('--mnl_max_iterations', type=int, default=None)
    parser.add_argument('--aggregation', choices=[a.value for a in Aggregation], default=None)
    parser.add_argument('--unit', choices=[u.value for u in UnitConvention], default=None)
    parser.add_argument('--log_level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'])
    return parser


OVERRIDABLE = (
    'seed', 'workers', 'output_dir', 'data_path', 'design_path', 'schema_path', 'swissmetro_path',
    'ensemble_dir', 'variant', 'hidden_layers', 'nodes_per_layer', 'activation', 'use_asc',
    'repetitions', 'resume', 'overwrite', 'mnl_form', 'mnl_preset', 'mnl_max_iterations', 'aggregation', 'unit',
)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_json(args.config)
    return config.with_overrides(**{k: getattr(args, k) for k in OVERRIDABLE})


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(levelname)s:%(name)s:%(message)s",
        force=True,
    )
    try:
        config = config_from_args(args)
        return COMMANDS[args.command](config)
    except KeyboardInterrupt:
        print("\nInterrupted.")
        return 1
    except NumericalError as e:
        print(f"Numerical error: {e}")
        return 2
    except (ChoiceDataError, ValueError, FileNotFoundError, FileExistsError) as e:
        print(f"Error: {e}")
        return 1
