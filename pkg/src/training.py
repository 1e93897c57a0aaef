"""Training runs, ensembles, hyperparameter grid search and fit metrics.

Reproducibility: member r of an ensemble is initialized from
``default_rng(base_seed + r)`` and shuffles its mini-batches with an
independent stream derived from the same seed, so results do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from filelock import FileLock
from tqdm import tqdm

from .architectures import (
    Topology,
    UtilityNetwork,
    Variant,
    build_network,
    choice_probabilities,
    load_network,
    parameter_count,
    save_network,
)
from .config import DEFAULTS, TrainConfig
from .data import ChoiceDataset, ScalingRecord, validation_tail
from .nncore import AdamState, adam_step, cross_entropy

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
GRID_KEYS = ('hidden_layers', 'nodes_per_layer', 'activation')


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture shared by every member of an ensemble."""
    variant: Variant
    topology: Topology
    use_asc: bool = False

    def build(self, ds: ChoiceDataset, rng: np.random.Generator) -> UtilityNetwork:
        return build_network(self.variant, self.topology, ds.schema, self.use_asc, rng)

    def to_dict(self) -> Dict[str, Any]:
        return {'variant': Variant(self.variant).value, 'topology': self.topology.to_dict(),
                'use_asc': self.use_asc}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'NetworkSpec':
        return cls(Variant(raw['variant']), Topology(**raw['topology']), bool(raw.get('use_asc', False)))


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int = DEFAULTS.patience):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = float('inf')
        self.wait = 0

    def update(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainHistory:
    fit_ce: List[float] = field(default_factory=list)
    val_ce: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    seconds: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        # wall-clock time is left out so persisted runs stay byte-identical
        return {'fit_ce': self.fit_ce, 'val_ce': self.val_ce, 'stopped_epoch': self.stopped_epoch}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'TrainHistory':
        return cls(list(raw['fit_ce']), list(raw['val_ce']), int(raw['stopped_epoch']))


def _mean_ce(net: UtilityNetwork, X: np.ndarray, y: np.ndarray) -> float:
    return cross_entropy(choice_probabilities(net, X), y)


def train_once(net: UtilityNetwork, fit: ChoiceDataset, val: ChoiceDataset, cfg: TrainConfig,
               seed: int) -> Tuple[UtilityNetwork, TrainHistory]:
    """Mini-batch Adam on the fit set with early stopping on validation CE.

    The network is updated in place and returned as it stands after the
    final epoch.
    """
    if fit.n == 0 or val.n == 0:
        raise ValueError(f"empty training data (fit={fit.n}, val={val.n})")
    X_fit, y_fit = net.design_matrix(fit), fit.choice_index
    X_val, y_val = net.design_matrix(val), val.choice_index

    params = net.parameters()
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    shuffle_rng = np.random.default_rng([seed, 1])
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(fit.n)
        for lo in range(0, fit.n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            _, grads = net.loss_and_gradients(X_fit[idx], y_fit[idx])
            adam_step(params, grads, state)
        history.fit_ce.append(_mean_ce(net, X_fit, y_fit))
        history.val_ce.append(_mean_ce(net, X_val, y_val))
        history.stopped_epoch = epoch
        logger.debug("epoch %d fit CE %.5f val CE %.5f", epoch, history.fit_ce[-1], history.val_ce[-1])
        if stopper.update(history.val_ce[-1]):
            logger.debug("Early stopping at epoch %d (best val CE %.5f)", epoch, stopper.best)
            break

    history.seconds = time.perf_counter() - start
    return net, history


@dataclass
class TrainedEnsemble:
    spec: NetworkSpec
    members: List[UtilityNetwork]
    seeds: List[int]
    histories: List[TrainHistory]
    scaling: Optional[ScalingRecord] = None
    metrics: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.members)


def _train_member(job: Tuple[NetworkSpec, ChoiceDataset, ChoiceDataset, TrainConfig, int]):
    spec, fit, val, cfg, seed = job
    net = spec.build(fit, np.random.default_rng(seed))
    return train_once(net, fit, val, cfg, seed)


def member_loglik(net: UtilityNetwork, ds: ChoiceDataset) -> float:
    P = choice_probabilities(net, net.design_matrix(ds))
    chosen = np.maximum(P[np.arange(ds.n), ds.choice_index], DEFAULTS.ce_clamp)
    return float(np.sum(np.log(chosen)))


def train_ensemble(spec: NetworkSpec, train: ChoiceDataset, R: int, cfg: TrainConfig,
                   test: Optional[ChoiceDataset] = None) -> TrainedEnsemble:
    """R independently seeded runs sharing one validation tail of ``train``."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    fit, val = validation_tail(train, cfg.validation_fraction)
    seeds = [cfg.base_seed + r for r in range(R)]
    jobs = [(spec, fit, val, cfg, seed) for seed in seeds]
    desc = f"{Variant(spec.variant).value} {spec.topology.label}"

    if cfg.workers > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(tqdm(executor.map(_train_member, jobs), total=R, desc=desc, leave=False))
    else:
        results = [_train_member(job) for job in tqdm(jobs, desc=desc, leave=False)]

    members = [net for net, _ in results]
    histories = [h for _, h in results]
    metrics = []
    for r, (net, history) in enumerate(results):
        row = {
            'repetition': r,
            'seed': seeds[r],
            'stopped_epoch': history.stopped_epoch,
            'fit_ll': member_loglik(net, fit),
            'val_ll': member_loglik(net, val),
            'train_ll': member_loglik(net, train),
        }
        if test is not None:
            row['test_ll'] = member_loglik(net, test)
        metrics.append(row)
    return TrainedEnsemble(spec, members, seeds, histories, train.scaling, metrics)


def ensemble_test_loglik(ens: TrainedEnsemble, test: ChoiceDataset) -> Tuple[float, float]:
    """(mean over members of member LL, LL of member-averaged probabilities)."""
    if not ens.members:
        raise ValueError("ensemble has no members")
    rows = np.arange(test.n)
    y = test.choice_index
    member_probs = [choice_probabilities(m, m.design_matrix(test)) for m in ens.members]
    member_ll = [float(np.sum(np.log(np.maximum(P[rows, y], DEFAULTS.ce_clamp)))) for P in member_probs]
    mean_prob = np.mean(member_probs, axis=0)
    ll_of_mean = float(np.sum(np.log(np.maximum(mean_prob[rows, y], DEFAULTS.ce_clamp))))
    return float(np.mean(member_ll)), ll_of_mean


def rho_squared(ll_test: float, n_test: int, n_alternatives: int) -> float:
    """1 - LL / (N ln(1/J))."""
    if n_test < 1:
        raise ValueError(f"n_test must be >= 1, got {n_test}")
    if n_alternatives < 2:
        raise ValueError(f"need at least 2 alternatives, got {n_alternatives}")
    return 1.0 - ll_test / (n_test * np.log(1.0 / n_alternatives))


def goodness_of_fit(ens: TrainedEnsemble, train: ChoiceDataset, test: ChoiceDataset) -> Dict[str, Any]:
    """Full/train/test LL under both aggregates, test rho-squared and timing."""
    J = train.schema.n_alternatives
    train_mean, train_pooled = ensemble_test_loglik(ens, train)
    test_mean, test_pooled = ensemble_test_loglik(ens, test)
    return {
        'variant': Variant(ens.spec.variant).value,
        'topology': ens.spec.topology.label,
        'repetitions': ens.size,
        'n_parameters': parameter_count(ens.members[0]),
        'n_train': train.n,
        'n_test': test.n,
        'full_ll_mean_of_members': train_mean + test_mean,
        'full_ll_of_mean_prob': train_pooled + test_pooled,
        'train_ll_mean_of_members': train_mean,
        'train_ll_of_mean_prob': train_pooled,
        'test_ll_mean_of_members': test_mean,
        'test_ll_of_mean_prob': test_pooled,
        'test_rho_squared': rho_squared(test_mean, test.n, J),
        'test_rho_squared_of_mean_prob': rho_squared(test_pooled, test.n, J),
        'mean_stopped_epoch': float(np.mean([h.stopped_epoch for h in ens.histories])),
        'mean_seconds': float(np.mean([h.seconds for h in ens.histories])),
    }


# --- grid search ---------------------------------------------------------------

def default_grid() -> List[Dict[str, Any]]:
    """1 layer x {5..10, 15, 20, 30} and 2 layers x {5, 10, 20, 30}, each with relu and tanh."""
    shapes = [(1, n) for n in (5, 6, 7, 8, 9, 10, 15, 20, 30)] + [(2, n) for n in (5, 10, 20, 30)]
    return [
        {'hidden_layers': layers, 'nodes_per_layer': nodes, 'activation': activation}
        for (layers, nodes), activation in product(shapes, ('relu', 'tanh'))
    ]


def _grid_key(row: Dict[str, Any]) -> Tuple[str, ...]:
    return (str(int(float(row['hidden_layers']))), str(int(float(row['nodes_per_layer']))),
            str(row['activation']))


def _metric(row: Dict[str, Any], key: str) -> float:
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError):
        return float('-inf')


def select_best(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """Best mean test LL; ties go to fewer parameters, then tanh."""
    if not rows:
        raise ValueError("no grid results to select from")
    return max(rows, key=lambda r: (_metric(r, 'mean_test_ll'), -_metric(r, 'n_parameters'),
                                    str(r['activation']) == 'tanh'))


def read_csv_rows(path: Path) -> List[Dict[str, Any]]:
    if not path.exists():
        return []
    with path.open(newline='', encoding='utf-8') as f:
        return list(csv.DictReader(line for line in f if not line.startswith('#')))


def write_csv(rows: List[Dict[str, Any]], path: Path, header_lines: Iterable[str] = ()) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames: List[str] = []
    for row in rows:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    with path.open('w', newline='', encoding='utf-8') as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class GridResult:
    rows: List[Dict[str, Any]]
    selected: Dict[str, Any]

    def selected_topology(self) -> Topology:
        return Topology(int(float(self.selected['hidden_layers'])),
                        int(float(self.selected['nodes_per_layer'])),
                        self.selected['activation'])


def grid_search(grid: Sequence[Dict[str, Any]], train: ChoiceDataset, test: ChoiceDataset, R: int,
                cfg: TrainConfig, *, variant: Variant = Variant.ASS, use_asc: bool = False,
                output: Optional[Path] = None, resume: bool = False,
                header_lines: Iterable[str] = ()) -> GridResult:
    """Score every configuration by its R-member ensemble on the test set.

    With ``output`` set, the CSV is rewritten after each configuration and
    ``resume`` skips configurations already present in it.
    """
    if not grid:
        raise ValueError("grid is empty")
    header_lines = list(header_lines)
    requested = {_grid_key(g) for g in grid}
    rows: List[Dict[str, Any]] = []
    if output is not None and resume:
        rows = [r for r in read_csv_rows(output) if _grid_key(r) in requested]
        if rows:
            logger.info("Resumed %d completed configurations from %s", len(rows), output)
    completed = {_grid_key(r) for r in rows}

    progress = tqdm(list(enumerate(grid, start=1)), desc='grid', leave=True)
    for config_id, config in progress:
        key = _grid_key(config)
        if key in completed:
            tqdm.write(f"Skipping completed configuration {config_id}: {config}")
            continue
        topology = Topology(int(config['hidden_layers']), int(config['nodes_per_layer']), config['activation'])
        ens = train_ensemble(NetworkSpec(variant, topology, use_asc), train, R, cfg, test=test)
        mean_ll, pooled_ll = ensemble_test_loglik(ens, test)
        row = {
            'config_id': config_id,
            'hidden_layers': topology.hidden_layers,
            'nodes_per_layer': topology.nodes_per_layer,
            'activation': topology.activation.value,
            'n_parameters': parameter_count(ens.members[0]),
            'mean_test_ll': round(mean_ll, 6),
            'test_ll_of_mean_prob': round(pooled_ll, 6),
            'mean_test_rho_squared': round(rho_squared(mean_ll, test.n, test.schema.n_alternatives), 6),
            'mean_stopped_epoch': round(float(np.mean([h.stopped_epoch for h in ens.histories])), 3),
        }
        rows.append(row)
        completed.add(key)
        tqdm.write(f"[{config_id}/{len(grid)}] {topology.label}: mean test LL {mean_ll:.2f}")
        if output is not None:
            with FileLock(f"{output}.lock", timeout=30):
                write_csv(sorted(rows, key=lambda r: int(r['config_id'])), output, header_lines)

    rows = sorted(rows, key=lambda r: int(r['config_id']))
    selected = select_best(rows)
    logger.info("Selected configuration %s x %s %s", selected['hidden_layers'],
                selected['nodes_per_layer'], selected['activation'])
    return GridResult(rows, selected)


# --- persistence -----------------------------------------------------------------

def save_ensemble(ens: TrainedEnsemble, directory: str, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """One JSON file per member plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for r, net in enumerate(ens.members):
        name = f"member_{r:03d}.json"
        save_network(net, str(out / name), provenance)
        files.append(name)
    manifest = {
        'spec': ens.spec.to_dict(),
        'seeds': ens.seeds,
        'members': files,
        'histories': [h.to_dict() for h in ens.histories],
        'metrics': ens.metrics,
        'scaling': ens.scaling.to_dict() if ens.scaling else None,
    }
    if provenance:
        manifest['provenance'] = provenance
    manifest_path = out / MANIFEST
    with FileLock(f"{manifest_path}.lock", timeout=30):
        with manifest_path.open('w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("Saved %d-member ensemble to %s", ens.size, out)
    return out


def load_ensemble(directory: str) -> TrainedEnsemble:
    out = Path(directory)
    manifest_path = out / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"no ensemble manifest in {directory}")
    with FileLock(f"{manifest_path}.lock", timeout=30):
        with manifest_path.open(encoding='utf-8') as f:
            manifest = json.load(f)
    members = [load_network(os.path.join(directory, name)) for name in manifest['members']]
    scaling = ScalingRecord.from_dict(manifest['scaling']) if manifest.get('scaling') else None
    return TrainedEnsemble(
        spec=NetworkSpec.from_dict(manifest['spec']),
        members=members,
        seeds=list(manifest['seeds']),
        histories=[TrainHistory.from_dict(h) for h in manifest['histories']],
        scaling=scaling,
        metrics=list(manifest.get('metrics', [])),
    )
