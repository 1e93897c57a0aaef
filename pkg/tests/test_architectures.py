"""Tests for the ASS, ASU and fully-connected utility networks."""

import itertools
import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.architectures import (
    Topology,
    Variant,
    build_network,
    choice_probabilities,
    expected_parameter_count,
    input_gradients,
    load_network,
    loss_and_gradients,
    parameter_count,
    save_network,
    utilities,
)
from src.data import AlternativeColumns, AttributeSchema
from src.errors import DimensionError, SchemaError
from src.swissmetro import swissmetro_schema


@pytest.fixture
def schema():
    return swissmetro_schema()


@pytest.fixture
def X():
    rng = np.random.default_rng(5)
    return rng.uniform(0.0, 1.0, size=(6, 8))


@pytest.fixture
def y():
    return np.array([0, 1, 2, 1, 0, 2])


def _net(variant, schema, use_asc=False, layers=1, nodes=3, activation='tanh', seed=1):
    return build_network(Variant(variant), Topology(layers, nodes, activation), schema, use_asc,
                         np.random.default_rng(seed))


def _column(schema, name):
    return schema.column_index(name)


class TestParameterCount:
    @pytest.mark.parametrize('variant, use_asc, expected', [
        ('ass', False, 144),
        ('ass', True, 146),
        ('asu', False, 206),
        ('fc', False, 123),
    ])
    def test_one_layer_ten_nodes(self, schema, variant, use_asc, expected):
        topology = Topology(1, 10, 'tanh')
        assert expected_parameter_count(Variant(variant), topology, schema, use_asc) == expected
        net = build_network(Variant(variant), topology, schema, use_asc, np.random.default_rng(0))
        assert parameter_count(net) == expected

    def test_two_layers(self, schema):
        topology = Topology(2, 5, 'relu')
        net = build_network(Variant.ASS, topology, schema, False, np.random.default_rng(0))
        assert parameter_count(net) == expected_parameter_count(Variant.ASS, topology, schema, False)

    def test_ass_has_fewer_parameters_than_asu(self, schema):
        topology = Topology(1, 10, 'tanh')
        ass = expected_parameter_count(Variant.ASS, topology, schema, False)
        asu = expected_parameter_count(Variant.ASU, topology, schema, False)
        assert asu - ass == 2 * 31


class TestConstruction:
    def test_shared_cost_blocks_stored_once(self, schema):
        net = _net('ass', schema)
        cost_keys = [k for k in net.blocks if k.startswith('cost.')]
        assert cost_keys == ['cost.h1', 'cost.out']
        assert all(net.blocks[k].tie_tag == 'cost' for k in cost_keys)
        assert not any('.g.' in k for k in net.blocks)

    def test_asu_has_cost_stack_per_alternative(self, schema):
        net = _net('asu', schema)
        assert {k for k in net.blocks if '.g.' in k} == {
            'TRAIN.g.h1', 'TRAIN.g.out', 'SM.g.h1', 'SM.g.out', 'CAR.g.h1', 'CAR.g.out',
        }

    def test_single_alternative_rejected(self):
        schema = AttributeSchema(alternatives=(AlternativeColumns('ONLY', 'ONLY_CO', ('ONLY_TT',)),))
        with pytest.raises(SchemaError):
            _net('ass', schema)

    def test_ass_needs_cost_everywhere(self):
        schema = AttributeSchema(alternatives=(
            AlternativeColumns('A', 'A_CO', ('A_TT',)),
            AlternativeColumns('WALK', None, ('WALK_TT',)),
        ))
        with pytest.raises(SchemaError):
            _net('ass', schema)
        # ASU tolerates an alternative without a cost column
        assert _net('asu', schema).forward(np.array([0.2, 0.4, 0.6])).shape == (2,)

    def test_same_seed_same_network(self, schema, X):
        a = _net('ass', schema, seed=9)
        b = _net('ass', schema, seed=9)
        np.testing.assert_array_equal(a.forward(X), b.forward(X))

    def test_wrong_input_width(self, schema):
        with pytest.raises(DimensionError):
            _net('ass', schema).forward(np.ones(7))


class TestForward:
    @pytest.mark.parametrize('variant', ['ass', 'asu', 'fc'])
    def test_probabilities_are_a_distribution(self, schema, X, variant):
        P = choice_probabilities(_net(variant, schema), X)
        assert P.shape == (6, 3)
        np.testing.assert_allclose(P.sum(axis=1), np.ones(6))
        assert np.all(P > 0)

    def test_single_row_matches_batch(self, schema, X):
        net = _net('ass', schema)
        np.testing.assert_allclose(utilities(net, X[2]), utilities(net, X)[2])

    def test_asc_shifts_all_but_first_alternative(self, schema, X):
        net = _net('ass', schema, use_asc=True)
        base = net.forward(X)
        net.parameters()['asc'][:] = [0.5, -1.0]
        shifted = net.forward(X)
        np.testing.assert_allclose(shifted[:, 0], base[:, 0])
        np.testing.assert_allclose(shifted[:, 1], base[:, 1] + 0.5)
        np.testing.assert_allclose(shifted[:, 2], base[:, 2] - 1.0)

    @pytest.mark.parametrize('variant', ['ass', 'asu'])
    def test_utility_depends_only_on_own_attributes(self, schema, variant):
        net = _net(variant, schema)
        rng = np.random.default_rng(11)
        base = rng.uniform(0.0, 1.0, size=(1000, 8))
        for j, alt in enumerate(schema.alternatives):
            own = [schema.column_index(c) for c in alt.columns]
            others = [k for k in range(8) if k not in own]
            moved = base.copy()
            moved[:, others] += rng.normal(0.0, 0.5, size=(1000, len(others)))
            before, after = net.forward(base), net.forward(moved)
            np.testing.assert_array_equal(after[:, j], before[:, j])
            assert not np.allclose(np.delete(after, j, axis=1), np.delete(before, j, axis=1))

    def test_fully_connected_mixes_alternatives(self, schema, X):
        net = _net('fc', schema)
        moved = X.copy()
        moved[:, _column(schema, 'CAR_TT')] += 0.3
        before, after = net.forward(X), net.forward(moved)
        assert not np.allclose(after[:, 0], before[:, 0])
        assert not np.allclose(after[:, 1], before[:, 1])


class TestFungibility:
    @pytest.mark.parametrize('layers', [1, 2])
    def test_ass_cost_function_is_shared(self, schema, layers):
        net = _net('ass', schema, layers=layers, nodes=4)
        c = np.random.default_rng(4).uniform(-0.5, 1.5, size=1000)
        for j, m in itertools.combinations(range(schema.n_alternatives), 2):
            np.testing.assert_array_equal(net.cost_utility(c, j), net.cost_utility(c, m))

    def test_ass_same_cost_same_cost_marginal_utility(self, schema):
        net = _net('ass', schema)
        x = np.full(8, 0.4)
        grads = net.input_gradients(x)
        mu = [grads[_column(schema, c)] for c in ('TRAIN_CO', 'SM_CO', 'CAR_CO')]
        assert mu[0] == pytest.approx(mu[1])
        assert mu[0] == pytest.approx(mu[2])

    def test_asu_cost_functions_differ(self, schema):
        net = _net('asu', schema)
        c = np.linspace(0.0, 1.0, 11)
        assert not np.allclose(net.cost_utility(c, 0), net.cost_utility(c, 1))

    def test_fc_has_no_cost_function(self, schema):
        with pytest.raises(ValueError):
            _net('fc', schema).cost_utility(np.array([0.5]), 0)


class TestGradients:
    @pytest.mark.parametrize('variant, layers, use_asc', [
        ('ass', 1, False),
        ('ass', 2, True),
        ('asu', 1, True),
        ('fc', 2, False),
    ])
    def test_parameter_gradients_match_finite_differences(self, schema, variant, layers, use_asc):
        rng = np.random.default_rng(21)
        net = _net(variant, schema, use_asc=use_asc, layers=layers)
        if use_asc:
            net.parameters()['asc'][:] = [0.2, -0.1]
        X = rng.uniform(0.0, 1.0, size=(100, 8))
        y = rng.integers(0, schema.n_alternatives, size=100)
        params = net.parameters()
        names = sorted(params)
        eps = 1e-6
        for row in range(100):
            name = names[rng.integers(len(names))]
            flat = params[name].reshape(-1)
            idx = int(rng.integers(flat.size))
            x_row, y_row = X[row:row + 1], y[row:row + 1]
            _, grads = loss_and_gradients(net, x_row, y_row)
            assert set(grads) == set(params)
            original = flat[idx]
            flat[idx] = original + eps
            plus, _ = loss_and_gradients(net, x_row, y_row)
            flat[idx] = original - eps
            minus, _ = loss_and_gradients(net, x_row, y_row)
            flat[idx] = original
            numeric = (plus - minus) / (2 * eps)
            assert grads[name].reshape(-1)[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-8), (name, idx)

    def test_tied_gradient_is_sum_over_alternatives(self, schema, X, y):
        ass = _net('ass', schema)
        asu = _net('asu', schema)
        for key, block in ass.blocks.items():
            if key.startswith('cost.'):
                layer = key.split('.', 1)[1]
                for name in schema.names:
                    asu.blocks[f"{name}.g.{layer}"] = block.copy()
            else:
                asu.blocks[key] = block.copy()
        np.testing.assert_allclose(asu.forward(X), ass.forward(X))

        _, ass_grads = loss_and_gradients(ass, X, y)
        _, asu_grads = loss_and_gradients(asu, X, y)
        for layer in ('h1', 'out'):
            for part in ('W', 'b'):
                total = sum(asu_grads[f"{name}.g.{layer}.{part}"] for name in schema.names)
                np.testing.assert_allclose(ass_grads[f"cost.{layer}.{part}"], total, atol=1e-12)

    @pytest.mark.parametrize('variant', ['ass', 'asu', 'fc'])
    def test_input_gradients_match_finite_differences(self, schema, variant):
        net = _net(variant, schema, layers=2)
        X = np.random.default_rng(8).uniform(0.0, 1.0, size=(100, 8))
        analytic = input_gradients(net, X)
        eps = 1e-6
        for column in schema.attribute_columns:
            k = schema.column_index(column)
            j = schema.alternative_of(column)
            plus, minus = X.copy(), X.copy()
            plus[:, k] += eps
            minus[:, k] -= eps
            numeric = (net.forward(plus)[:, j] - net.forward(minus)[:, j]) / (2 * eps)
            np.testing.assert_allclose(analytic[:, k], numeric, rtol=1e-5, atol=1e-8)


class TestPersistence:
    @pytest.mark.parametrize('variant', ['ass', 'fc'])
    def test_save_and_load(self, schema, X, tmp_path, variant):
        net = _net(variant, schema, use_asc=True)
        net.parameters()['asc'][:] = [0.3, 0.1]
        path = tmp_path / 'net.json'
        save_network(net, str(path))
        restored = load_network(str(path))
        np.testing.assert_allclose(restored.forward(X), net.forward(X))
        assert parameter_count(restored) == parameter_count(net)

    def test_saved_member_carries_provenance(self, schema, X, tmp_path):
        net = _net('ass', schema)
        path = tmp_path / 'net.json'
        save_network(net, str(path), {'command': 'train', 'seed': 3})
        assert json.loads(path.read_text())['provenance'] == {'command': 'train', 'seed': 3}
        np.testing.assert_array_equal(load_network(str(path)).forward(X), net.forward(X))

    def test_copy_is_independent(self, schema, X):
        net = _net('ass', schema)
        clone = net.copy()
        clone.parameters()['cost.out.b'][:] += 1.0
        assert not np.allclose(clone.forward(X), net.forward(X))
