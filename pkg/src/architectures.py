"""Utility networks: ASS-NN, ASU-DNN and a fully-connected baseline.

Each alternative's utility is the sum of a non-cost stack (its own non-cost
columns) and a cost stack (its single cost column), plus an optional ASC.
ASS shares one cost stack between all alternatives: the blocks are stored
once under ``cost.*`` and every alternative refers to them, so the shared
weights cannot drift apart. ASU gives every alternative its own cost stack.
FC maps all columns to J utilities with a single stack.

Inputs are design matrices in schema attribute-column order (see
``AttributeSchema.attribute_columns``), already normalized.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .data import AttributeSchema, ChoiceDataset
from .errors import DimensionError, SchemaError
from .nncore import (
    ActivationKind,
    DenseCache,
    ParameterBlock,
    accumulate_tied_gradients,
    blocks_from_dict,
    blocks_to_dict,
    cross_entropy,
    dense_backward,
    dense_forward,
    glorot_init,
    layer_sizes,
    softmax,
    softmax_cross_entropy_grad,
)

logger = logging.getLogger(__name__)

SHARED_COST_TAG = 'cost'


class Variant(str, Enum):
    ASS = 'ass'
    ASU = 'asu'
    FC = 'fc'


@dataclass(frozen=True)
class Topology:
    hidden_layers: int = 1
    nodes_per_layer: int = 10
    activation: ActivationKind = ActivationKind.TANH

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.nodes_per_layer < 1:
            raise ValueError(f"nodes_per_layer must be >= 1, got {self.nodes_per_layer}")
        object.__setattr__(self, 'activation', ActivationKind(self.activation))

    @property
    def label(self) -> str:
        return f"{self.hidden_layers}x{self.nodes_per_layer} {self.activation.value}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'hidden_layers': self.hidden_layers,
            'nodes_per_layer': self.nodes_per_layer,
            'activation': self.activation.value,
        }


@dataclass(frozen=True)
class StackSpec:
    """One feed-forward stack: block keys in layer order and the design columns it reads."""
    keys: Tuple[str, ...]
    columns: Tuple[int, ...]
    sizes: Tuple[Tuple[int, int], ...]
    tie_tag: Optional[str] = None


@dataclass(frozen=True)
class AlternativeGraph:
    non_cost: Optional[StackSpec]
    cost: Optional[StackSpec]


def _stack_spec(prefix: str, columns: List[int], topology: Topology, n_outputs: int = 1,
                tie_tag: Optional[str] = None) -> StackSpec:
    sizes = layer_sizes(len(columns), topology.hidden_layers, topology.nodes_per_layer, n_outputs)
    keys = [f"{prefix}.h{i + 1}" for i in range(topology.hidden_layers)] + [f"{prefix}.out"]
    return StackSpec(tuple(keys), tuple(columns), tuple(sizes), tie_tag)


def network_layout(variant: Variant, topology: Topology,
                   schema: AttributeSchema) -> Tuple[List[AlternativeGraph], Optional[StackSpec]]:
    """Per-alternative stacks (ASS/ASU) or the single FC stack."""
    variant = Variant(variant)
    if schema.n_alternatives < 2:
        raise SchemaError("a choice network needs at least 2 alternatives")
    if variant is Variant.ASS:
        schema.validate_costs()

    if variant is Variant.FC:
        columns = list(range(len(schema.attribute_columns)))
        return [], _stack_spec('fc', columns, topology, n_outputs=schema.n_alternatives)

    shared = None
    graphs = []
    for alt in schema.alternatives:
        non_cost_cols = [schema.column_index(c) for c in alt.non_cost_columns]
        non_cost = _stack_spec(f"{alt.name}.f", non_cost_cols, topology) if non_cost_cols else None
        cost = None
        if alt.cost_column:
            cost_cols = [schema.column_index(alt.cost_column)]
            if variant is Variant.ASS:
                shared = shared or _stack_spec('cost', cost_cols, topology, tie_tag=SHARED_COST_TAG)
                cost = StackSpec(shared.keys, tuple(cost_cols), shared.sizes, SHARED_COST_TAG)
            else:
                cost = _stack_spec(f"{alt.name}.g", cost_cols, topology)
        graphs.append(AlternativeGraph(non_cost, cost))
    return graphs, None


def _stack_params(n_inputs: int, topology: Topology, n_outputs: int = 1) -> int:
    return sum(o * i + o for o, i in layer_sizes(n_inputs, topology.hidden_layers,
                                                 topology.nodes_per_layer, n_outputs))


def expected_parameter_count(variant: Variant, topology: Topology, schema: AttributeSchema,
                             use_asc: bool) -> int:
    """Closed-form parameter count, independent of any built network."""
    variant = Variant(variant)
    J = schema.n_alternatives
    asc = (J - 1) if use_asc else 0
    if variant is Variant.FC:
        return _stack_params(len(schema.attribute_columns), topology, J) + asc
    total = sum(_stack_params(len(a.non_cost_columns), topology)
                for a in schema.alternatives if a.non_cost_columns)
    n_cost = sum(1 for a in schema.alternatives if a.cost_column)
    cost_stacks = 1 if variant is Variant.ASS else n_cost
    return total + cost_stacks * _stack_params(1, topology) + asc


@dataclass
class UtilityNetwork:
    variant: Variant
    topology: Topology
    schema: AttributeSchema
    use_asc: bool
    blocks: Dict[str, ParameterBlock]
    asc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.graphs, self.fc = network_layout(self.variant, self.topology, self.schema)
        for stack in self._stacks():
            for key, (out_dim, in_dim) in zip(stack.keys, stack.sizes):
                block = self.blocks.get(key)
                if block is None:
                    raise DimensionError(f"missing parameter block {key!r}")
                if block.weights.shape != (out_dim, in_dim):
                    raise DimensionError(
                        f"block {key!r} has shape {block.weights.shape}, expected {(out_dim, in_dim)}"
                    )
        n_asc = self.schema.n_alternatives - 1 if self.use_asc else 0
        self.asc = np.asarray(self.asc, dtype=float).reshape(-1)
        if self.asc.size == 0 and n_asc:
            self.asc = np.zeros(n_asc)
        if self.asc.size != n_asc:
            raise DimensionError(f"expected {n_asc} ASCs, got {self.asc.size}")

    def _stacks(self) -> List[StackSpec]:
        if self.fc is not None:
            return [self.fc]
        return [s for g in self.graphs for s in (g.non_cost, g.cost) if s is not None]

    @property
    def n_alternatives(self) -> int:
        return self.schema.n_alternatives

    @property
    def n_inputs(self) -> int:
        return len(self.schema.attribute_columns)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Canonical parameter arrays by name; updating them updates the network."""
        params: Dict[str, np.ndarray] = {}
        for key, block in self.blocks.items():
            params[f"{key}.W"] = block.weights
            params[f"{key}.b"] = block.bias
        if self.asc.size:
            params['asc'] = self.asc
        return params

    def copy(self) -> 'UtilityNetwork':
        return UtilityNetwork(
            self.variant, self.topology, self.schema, self.use_asc,
            {k: b.copy() for k, b in self.blocks.items()}, self.asc.copy(),
        )

    def design_matrix(self, ds: ChoiceDataset) -> np.ndarray:
        columns = self.schema.attribute_columns
        missing = [c for c in columns if c not in ds.frame.columns]
        if missing:
            raise SchemaError(f"dataset lacks network input column {missing[0]!r}", column=missing[0])
        return ds.frame[columns].to_numpy(dtype=float)

    # --- forward / backward -------------------------------------------------

    def _run_stack(self, stack: StackSpec, X: np.ndarray) -> Tuple[np.ndarray, List[DenseCache]]:
        h = X[:, list(stack.columns)]
        caches = []
        last = len(stack.keys) - 1
        for i, key in enumerate(stack.keys):
            act = self.topology.activation if i < last else ActivationKind.IDENTITY
            h, cache = dense_forward(h, self.blocks[key], act)
            caches.append(cache)
        return h, caches

    def _check_batch(self, x: np.ndarray) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[np.newaxis, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise DimensionError(f"expected {self.n_inputs} input columns, got shape {x.shape}")
        return X, single

    def _forward(self, X: np.ndarray):
        N, J = X.shape[0], self.n_alternatives
        V = np.zeros((N, J))
        caches: Dict[Tuple[int, str], List[DenseCache]] = {}
        if self.fc is not None:
            out, caches[(-1, 'fc')] = self._run_stack(self.fc, X)
            V += out
        else:
            for j, graph in enumerate(self.graphs):
                for part, stack in (('f', graph.non_cost), ('g', graph.cost)):
                    if stack is None:
                        continue
                    out, caches[(j, part)] = self._run_stack(stack, X)
                    V[:, j] += out[:, 0]
        if self.asc.size:
            V[:, 1:] += self.asc
        return V, caches

    def forward(self, x: np.ndarray) -> np.ndarray:
        X, single = self._check_batch(x)
        V, _ = self._forward(X)
        return V[0] if single else V

    def loss_and_gradients(self, X: np.ndarray, y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        """Cross-entropy on (X, y) and its gradient for every canonical parameter."""
        X, _ = self._check_batch(X)
        V, caches = self._forward(X)
        P = softmax(V)
        loss = cross_entropy(P, y)
        dV = softmax_cross_entropy_grad(P, y)

        collected: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
        for (j, part), stack_caches in caches.items():
            upstream = dV if j < 0 else dV[:, j:j + 1]
            stack = self.fc if j < 0 else (self.graphs[j].non_cost if part == 'f' else self.graphs[j].cost)
            for key, cache in zip(reversed(stack.keys), reversed(stack_caches)):
                dW, db, upstream = dense_backward(cache, upstream)
                collected.setdefault(key, []).append((dW, db))

        grads: Dict[str, np.ndarray] = {}
        for key in self.blocks:
            dW, db = accumulate_tied_gradients(collected[key])
            grads[f"{key}.W"] = dW
            grads[f"{key}.b"] = db
        if self.asc.size:
            grads['asc'] = dV[:, 1:].sum(axis=0)
        return loss, grads

    def input_gradients(self, x: np.ndarray) -> np.ndarray:
        """dV_j / dx_k for every column k, where j is the alternative owning k.

        Cross-alternative derivatives are not materialized; for ASS/ASU they
        are zero by construction.
        """
        X, single = self._check_batch(x)
        N = X.shape[0]
        out = np.zeros((N, self.n_inputs))
        _, caches = self._forward(X)
        if self.fc is not None:
            owner = np.array([self.schema.alternative_of(c) for c in self.schema.attribute_columns])
            for j in range(self.n_alternatives):
                upstream = np.zeros((N, self.n_alternatives))
                upstream[:, j] = 1.0
                for cache in reversed(caches[(-1, 'fc')]):
                    _, _, upstream = dense_backward(cache, upstream)
                out[:, owner == j] = upstream[:, owner == j]
        else:
            for (j, part), stack_caches in caches.items():
                stack = self.graphs[j].non_cost if part == 'f' else self.graphs[j].cost
                upstream = np.ones((N, 1))
                for cache in reversed(stack_caches):
                    _, _, upstream = dense_backward(cache, upstream)
                out[:, list(stack.columns)] = upstream
        return out[0] if single else out

    def cost_utility(self, c: np.ndarray, alternative: int) -> np.ndarray:
        """g_j(c): the cost stack of ``alternative`` evaluated at normalized costs ``c``."""
        if self.fc is not None:
            raise ValueError("the fully-connected variant has no separable cost function")
        stack = self.graphs[alternative].cost
        if stack is None:
            raise SchemaError(f"alternative {self.schema.names[alternative]!r} has no cost stack")
        c = np.asarray(c, dtype=float).reshape(-1, 1)
        h = c
        last = len(stack.keys) - 1
        for i, key in enumerate(stack.keys):
            act = self.topology.activation if i < last else ActivationKind.IDENTITY
            h, _ = dense_forward(h, self.blocks[key], act)
        return h[:, 0]

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            'variant': self.variant.value,
            'topology': self.topology.to_dict(),
            'use_asc': self.use_asc,
            'schema': self.schema.to_dict(),
            'asc': self.asc.tolist(),
            'blocks': blocks_to_dict(self.blocks),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'UtilityNetwork':
        return cls(
            variant=Variant(raw['variant']),
            topology=Topology(**raw['topology']),
            schema=AttributeSchema.from_dict(raw['schema']),
            use_asc=bool(raw['use_asc']),
            blocks=blocks_from_dict(raw['blocks']),
            asc=np.asarray(raw.get('asc', []), dtype=float),
        )


def build_network(variant: Variant, topology: Topology, schema: AttributeSchema,
                  use_asc: bool, rng: np.random.Generator) -> UtilityNetwork:
    """Glorot-initialized network; block creation order is alternative order, then layer order."""
    graphs, fc = network_layout(variant, topology, schema)
    stacks = [fc] if fc is not None else [s for g in graphs for s in (g.non_cost, g.cost) if s is not None]
    blocks: Dict[str, ParameterBlock] = {}
    for stack in stacks:
        for key, (out_dim, in_dim) in zip(stack.keys, stack.sizes):
            if key not in blocks:
                blocks[key] = glorot_init(out_dim, in_dim, rng, stack.tie_tag)
    n_asc = schema.n_alternatives - 1 if use_asc else 0
    net = UtilityNetwork(Variant(variant), topology, schema, use_asc, blocks, np.zeros(n_asc))
    logger.debug("Built %s network %s with %d parameters", net.variant.value, topology.label,
                 parameter_count(net))
    return net


def utilities(net: UtilityNetwork, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def choice_probabilities(net: UtilityNetwork, x: np.ndarray) -> np.ndarray:
    return softmax(net.forward(x))


def input_gradients(net: UtilityNetwork, x: np.ndarray) -> np.ndarray:
    return net.input_gradients(x)


def loss_and_gradients(net: UtilityNetwork, X: np.ndarray, y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    return net.loss_and_gradients(X, y)


def parameter_count(net: UtilityNetwork) -> int:
    return sum(b.n_params for b in net.blocks.values()) + net.asc.size


def save_network(net: UtilityNetwork, path: str, provenance: Optional[Mapping[str, Any]] = None) -> None:
    document = net.to_dict()
    if provenance:
        document['provenance'] = dict(provenance)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f)


def load_network(path: str) -> UtilityNetwork:
    with open(path, encoding='utf-8') as f:
        return UtilityNetwork.from_dict(json.load(f))
