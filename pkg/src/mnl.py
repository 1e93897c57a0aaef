"""Linear and log-linear multinomial logit baselines.

The model is stored as a design tensor ``Z`` of shape (N, J, P) so that
utilities are ``Z @ theta``; log-linear specifications transform attribute
values to ``ln(x + offset)`` when the tensor is built. Estimation minimizes
the observation-averaged negative log-likelihood with scipy's BFGS and
analytic gradients; convergence is declared when the max-norm of that
averaged gradient drops below the tolerance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from .config import DEFAULTS
from .data import AttributeSchema, ChoiceDataset, COST_LABEL, UnitConvention
from .errors import DimensionError, DomainError, SchemaError
from .nncore import softmax

logger = logging.getLogger(__name__)


class MnlForm(str, Enum):
    LINEAR = 'linear'
    LOG_LINEAR = 'log_linear'


class TermScope(str, Enum):
    GENERIC = 'generic'
    SPECIFIC = 'specific'


@dataclass(frozen=True)
class MnlTerm:
    """One coefficient and the column it multiplies in each alternative it enters."""
    name: str
    scope: TermScope
    label: str
    columns: Mapping[str, str]

    @classmethod
    def generic(cls, name: str, schema: AttributeSchema, label: str) -> 'MnlTerm':
        columns = {}
        for alt in schema.alternatives:
            column = alt.column_for(label)
            if column is None:
                raise SchemaError(
                    f"generic term {name!r} needs attribute {label!r} in every alternative; "
                    f"{alt.name!r} has none", column=label,
                )
            columns[alt.name] = column
        return cls(name, TermScope.GENERIC, label, columns)

    @classmethod
    def specific(cls, name: str, schema: AttributeSchema, alternative: str, label: str) -> 'MnlTerm':
        alt = next((a for a in schema.alternatives if a.name == alternative), None)
        if alt is None:
            raise SchemaError(f"unknown alternative {alternative!r}", column=alternative)
        column = alt.column_for(label)
        if column is None:
            raise SchemaError(f"alternative {alternative!r} has no {label!r} attribute", column=label)
        return cls(name, TermScope.SPECIFIC, label, {alternative: column})


@dataclass(frozen=True)
class MnlSpec:
    form: MnlForm
    alternatives: Tuple[str, ...]
    terms: Tuple[MnlTerm, ...]
    asc_alternatives: Tuple[str, ...] = ()
    log_offset: float = DEFAULTS.log_offset

    def __post_init__(self):
        object.__setattr__(self, 'form', MnlForm(self.form))
        if self.form is MnlForm.LOG_LINEAR and not self.log_offset > 0:
            raise ValueError(f"log_offset must be > 0 for the log-linear form, got {self.log_offset}")
        for alt in self.asc_alternatives:
            if alt not in self.alternatives:
                raise SchemaError(f"ASC for unknown alternative {alt!r}", column=alt)

    @property
    def parameter_names(self) -> List[str]:
        return [f"ASC_{alt}" for alt in self.asc_alternatives] + [t.name for t in self.terms]

    @property
    def n_parameters(self) -> int:
        return len(self.asc_alternatives) + len(self.terms)

    def transform(self, values: np.ndarray, column: str = '') -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.form is MnlForm.LINEAR:
            return values
        shifted = values + self.log_offset
        if np.any(shifted <= 0):
            raise DomainError(f"log argument not positive in column {column!r} (min {shifted.min()})")
        return np.log(shifted)


@dataclass
class MnlEstimate:
    names: List[str]
    values: np.ndarray
    loglik: float
    converged: bool
    gradient_norm: float
    iterations: int
    n_obs: int
    form: str = MnlForm.LINEAR.value
    log_offset: float = DEFAULTS.log_offset

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(v) for v in self.values)))

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['values'] = [float(v) for v in self.values]
        values['estimates'] = self.as_dict()
        return values

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'MnlEstimate':
        values = {k: v for k, v in raw.items() if k != 'estimates'}
        values['values'] = np.asarray(values['values'], dtype=float)
        return cls(**values)


def monte_carlo_spec(schema: AttributeSchema, form: MnlForm = MnlForm.LINEAR,
                     log_offset: float = DEFAULTS.log_offset) -> MnlSpec:
    """Generic cost and time coefficients, no constants (matches the synthetic DGPs)."""
    terms = (
        MnlTerm.generic('B_TC', schema, COST_LABEL),
        MnlTerm.generic('B_TT', schema, 'TT'),
    )
    return MnlSpec(MnlForm(form), tuple(schema.names), terms, (), log_offset)


def swissmetro_spec(schema: AttributeSchema, form: MnlForm = MnlForm.LINEAR,
                    log_offset: float = DEFAULTS.log_offset) -> MnlSpec:
    """Generic cost; alternative-specific time and headway; ASCs on all but the first alternative."""
    terms = [MnlTerm.generic('B_TC', schema, COST_LABEL)]
    for label in ('TT', 'HE'):
        for alt in schema.alternatives:
            if alt.column_for(label) is not None:
                terms.append(MnlTerm.specific(f"B_{label}_{alt.name}", schema, alt.name, label))
    return MnlSpec(MnlForm(form), tuple(schema.names), tuple(terms), tuple(schema.names[1:]), log_offset)


def mnl_design(spec: MnlSpec, ds: ChoiceDataset) -> np.ndarray:
    """Design tensor Z (N, J, P) in ``spec.parameter_names`` order."""
    J = len(spec.alternatives)
    Z = np.zeros((ds.n, J, spec.n_parameters))
    alt_index = {name: j for j, name in enumerate(spec.alternatives)}
    for p, alt in enumerate(spec.asc_alternatives):
        Z[:, alt_index[alt], p] = 1.0
    offset = len(spec.asc_alternatives)
    for p, term in enumerate(spec.terms, start=offset):
        for alt, column in term.columns.items():
            if column not in ds.frame.columns:
                raise SchemaError(f"dataset lacks column {column!r}", column=column)
            Z[:, alt_index[alt], p] = spec.transform(ds.column(column), column)
    return Z


def _check_theta(spec: MnlSpec, theta: Sequence[float]) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != spec.n_parameters:
        raise DimensionError(f"expected {spec.n_parameters} parameters, got {theta.size}")
    return theta


def mnl_utilities(spec: MnlSpec, theta: Sequence[float], x: Mapping[str, float]) -> np.ndarray:
    """J utilities for one observation given as column -> value."""
    theta = _check_theta(spec, theta)
    V = np.zeros(len(spec.alternatives))
    for p, alt in enumerate(spec.asc_alternatives):
        V[spec.alternatives.index(alt)] += theta[p]
    offset = len(spec.asc_alternatives)
    for p, term in enumerate(spec.terms, start=offset):
        for alt, column in term.columns.items():
            V[spec.alternatives.index(alt)] += theta[p] * float(spec.transform(x[column], column))
    return V


def _loglik_from_design(Z: np.ndarray, y: np.ndarray, theta: np.ndarray) -> Tuple[float, np.ndarray]:
    V = Z @ theta
    V = V - V.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(V).sum(axis=1))
    rows = np.arange(len(y))
    ll = float(np.sum(V[rows, y] - log_norm))
    P = np.exp(V - log_norm[:, None])
    grad = (Z[rows, y, :] - np.einsum('nj,njp->np', P, Z)).sum(axis=0)
    return ll, grad


def mnl_loglik_and_grad(spec: MnlSpec, theta: Sequence[float], ds: ChoiceDataset) -> Tuple[float, np.ndarray]:
    """Unaveraged log-likelihood and its analytic gradient."""
    theta = _check_theta(spec, theta)
    return _loglik_from_design(mnl_design(spec, ds), ds.choice_index, theta)


def mnl_probabilities(spec: MnlSpec, theta: Sequence[float], ds: ChoiceDataset) -> np.ndarray:
    theta = _check_theta(spec, theta)
    return softmax(mnl_design(spec, ds) @ theta)


def mnl_dataset_loglik(spec: MnlSpec, theta: Sequence[float], ds: ChoiceDataset) -> float:
    ll, _ = mnl_loglik_and_grad(spec, theta, ds)
    return ll


def fit_mnl(spec: MnlSpec, ds: ChoiceDataset, init: Optional[Sequence[float]] = None,
            tol: float = DEFAULTS.mnl_tolerance,
            max_iterations: int = DEFAULTS.mnl_max_iterations) -> MnlEstimate:
    """Maximum-likelihood estimate by BFGS; starts at zero unless ``init`` is given."""
    if ds.n == 0:
        raise ValueError("cannot fit an MNL on an empty dataset")
    Z = mnl_design(spec, ds)
    y = ds.choice_index
    n = ds.n
    x0 = np.zeros(spec.n_parameters) if init is None else _check_theta(spec, init).copy()

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        ll, grad = _loglik_from_design(Z, y, theta)
        return -ll / n, -grad / n

    result = minimize(
        objective, x0, jac=True, method='BFGS',
        options={'gtol': tol, 'norm': np.inf, 'maxiter': max_iterations},
    )
    theta = np.asarray(result.x, dtype=float)
    ll, grad = _loglik_from_design(Z, y, theta)
    grad_norm = float(np.max(np.abs(grad / n))) if grad.size else 0.0
    converged = grad_norm < tol
    if not converged:
        logger.warning("MNL did not converge: gradient max-norm %.3g after %d iterations (%s)",
                       grad_norm, int(result.nit), result.message)
    else:
        logger.info("MNL converged in %d iterations, LL=%.4f", int(result.nit), ll)
    return MnlEstimate(
        names=spec.parameter_names,
        values=theta,
        loglik=ll,
        converged=converged,
        gradient_norm=grad_norm,
        iterations=int(result.nit),
        n_obs=n,
        form=spec.form.value,
        log_offset=spec.log_offset,
    )


def mnl_marginal_utils(spec: MnlSpec, theta: Sequence[float],
                       x: Mapping[str, float]) -> Dict[str, Dict[str, float]]:
    """alternative -> attribute label -> dV/dx for one observation."""
    theta = _check_theta(spec, theta)
    result: Dict[str, Dict[str, float]] = {alt: {} for alt in spec.alternatives}
    offset = len(spec.asc_alternatives)
    for p, term in enumerate(spec.terms, start=offset):
        for alt, column in term.columns.items():
            if spec.form is MnlForm.LINEAR:
                mu = theta[p]
            else:
                spec.transform(x[column], column)
                mu = theta[p] / (float(x[column]) + spec.log_offset)
            result[alt][term.label] = result[alt].get(term.label, 0.0) + float(mu)
    return result


def mnl_marginal_utility_table(spec: MnlSpec, theta: Sequence[float], ds: ChoiceDataset,
                               unit: UnitConvention = UnitConvention.PER_HUNDRED) -> pd.DataFrame:
    """Per-observation MU in the long format used by ``welfare``.

    ``ds`` holds the values the model was estimated on (usually prescaled);
    its ``prescale_factor`` converts MU back to original or per-100 units.
    """
    theta = _check_theta(spec, theta)
    factor = 1.0 / ds.prescale_factor
    if UnitConvention(unit) is UnitConvention.PER_HUNDRED:
        factor *= 100.0
    offset = len(spec.asc_alternatives)
    pieces: Dict[Tuple[str, str], np.ndarray] = {}
    columns: Dict[Tuple[str, str], str] = {}
    for p, term in enumerate(spec.terms, start=offset):
        for alt, column in term.columns.items():
            if spec.form is MnlForm.LINEAR:
                mu = np.full(ds.n, theta[p])
            else:
                values = ds.column(column)
                spec.transform(values, column)
                mu = theta[p] / (values + spec.log_offset)
            key = (alt, term.label)
            pieces[key] = pieces.get(key, 0.0) + mu
            columns[key] = column
    frames = []
    rows = np.arange(ds.n)
    for (alt, label), mu in pieces.items():
        frames.append(pd.DataFrame({
            'row': rows,
            'alternative': alt,
            'attribute': label,
            'column': columns[(alt, label)],
            'x': ds.column(columns[(alt, label)]) * ds.prescale_factor,
            'value': mu * factor,
        }))
    if not frames:
        return pd.DataFrame(columns=['row', 'alternative', 'attribute', 'column', 'x', 'value'])
    return pd.concat(frames, ignore_index=True)


def format_estimate_table(estimate: MnlEstimate) -> str:
    table = pd.DataFrame({'Value': estimate.values}, index=pd.Index(estimate.names, name='Name'))
    lines = [
        f"Form: {estimate.form}" + (f" (offset {estimate.log_offset:g})" if estimate.form == MnlForm.LOG_LINEAR.value else ''),
        table.to_string(float_format=lambda v: f"{v:.4f}"),
        f"Final log-likelihood: {estimate.loglik:.3f}",
        f"Observations: {estimate.n_obs}",
        f"Converged: {estimate.converged} (gradient max-norm {estimate.gradient_norm:.2e}, "
        f"{estimate.iterations} iterations)",
    ]
    return "\n".join(lines)


def save_estimate(estimate: MnlEstimate, path: str, provenance: Optional[Dict[str, Any]] = None) -> None:
    document = estimate.to_dict()
    if provenance:
        document['provenance'] = provenance
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True)


def load_estimate(path: str) -> MnlEstimate:
    with open(path, encoding='utf-8') as f:
        raw = json.load(f)
    raw.pop('provenance', None)
    return MnlEstimate.from_dict(raw)
