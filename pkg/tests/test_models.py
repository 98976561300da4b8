import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqfl import quantum as qc
from vqfl.data import generate_blobs, scaler_fit, scaler_transform
from vqfl.dataset import LabeledDataset
from vqfl.models import (
    ModelError,
    QcnnModel,
    VqcModel,
    argmax_class,
    class_probabilities,
    cross_entropy_loss,
    encode_features,
    evaluate,
    model_circuit,
    predict,
    train,
)
from vqfl.optimize import OptimizerConfig


def separable_blobs(seed=0, n=200):
    ds = generate_blobs(n, 2, 2, class_separation=6.0, seed=seed)
    return scaler_transform(ds, scaler_fit(ds, "minmax"))


class TestEncoding:
    def test_zero_features_identity(self):
        state = qc.run_circuit(qc.CircuitSpec(3, tuple(encode_features([0, 0, 0], 3))))
        np.testing.assert_allclose(state.amplitudes, qc.QuantumState.zero(3).amplitudes, atol=1e-15)

    def test_pi_gives_one(self):
        state = qc.run_circuit(qc.CircuitSpec(1, tuple(encode_features([math.pi], 1))))
        np.testing.assert_allclose(state.amplitudes, [0, 1], atol=1e-12)

    def test_half_pi_pair_uniform(self):
        single = np.array([math.cos(math.pi / 4) ** 2, math.sin(math.pi / 4) ** 2])
        expected = np.kron(single, single)
        state = qc.run_circuit(qc.CircuitSpec(2, tuple(encode_features([math.pi / 2, math.pi / 2], 2))))
        np.testing.assert_allclose(qc.probabilities(state), expected, atol=1e-15)
        np.testing.assert_allclose(qc.probabilities(state), 0.25, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            encode_features([0.1, 0.2], 3)


class TestVqc:
    def test_param_count(self):
        assert VqcModel(3, 2, 2).num_params == 9
        with pytest.raises(ModelError):
            VqcModel(2, 1, 2, params=np.zeros(3))
        with pytest.raises(ModelError):
            VqcModel(2, 1, 5)
        with pytest.raises(ModelError):
            VqcModel(2, 0, 2)

    def test_zero_everything_is_class_zero(self):
        np.testing.assert_allclose(class_probabilities(VqcModel(1, 1, 2), [0.0]), [1.0, 0.0])

    def test_uniform_superposition_parity(self):
        # final RY(pi/2) layer on |00> gives the uniform distribution
        model = VqcModel(2, 1, 2, params=[0, 0, math.pi / 2, math.pi / 2])
        np.testing.assert_allclose(class_probabilities(model, [0, 0]), [0.5, 0.5], atol=1e-12)

    def test_single_rotation_half(self):
        model = VqcModel(1, 1, 2, params=[math.pi / 2, 0.0])
        expected = [math.cos(math.pi / 4) ** 2, math.sin(math.pi / 4) ** 2]
        np.testing.assert_allclose(class_probabilities(model, [0.0]), expected, atol=1e-15)

    def test_batched_matches_gate_level_circuit(self):
        rng = np.random.default_rng(3)
        model = VqcModel(3, 2, 3, params=rng.uniform(-3, 3, 9))
        xs = rng.uniform(-3, 3, (5, 3))
        for xrow, probs in zip(xs, model.batch_class_probabilities(xs)):
            full = qc.probabilities(qc.run_circuit(model_circuit(model, xrow)))
            expected = [full[np.arange(8) % 3 == c].sum() for c in range(3)]
            np.testing.assert_allclose(probs, expected, atol=1e-12)

    def test_ring_for_three_qubits(self):
        cx = [t for k, t, _ in VqcModel(3, 1, 2).ansatz_ops() if k is qc.GateKind.CX]
        assert cx == [(0, 1), (1, 2), (2, 0)]
        cx2 = [t for k, t, _ in VqcModel(2, 1, 2).ansatz_ops() if k is qc.GateKind.CX]
        assert cx2 == [(0, 1)]


class TestQcnn:
    def test_structure(self):
        model = QcnnModel(8)
        assert model.num_params == 21
        assert [len(a) for a in model.active_after_stages()] == [8, 4, 2, 1]
        assert model.readout_qubit == 0

    def test_requires_power_of_two(self):
        with pytest.raises(ModelError):
            QcnnModel(3)
        with pytest.raises(ModelError):
            QcnnModel(4, num_classes=3)

    def test_readout_by_sign(self):
        model = QcnnModel(2, params=np.zeros(3))
        np.testing.assert_allclose(class_probabilities(model, [0, 0]), [1, 0], atol=1e-12)
        assert predict(model, [math.pi, 0]) == 1

    def test_matches_gate_level_expectation(self):
        rng = np.random.default_rng(11)
        model = QcnnModel(4, params=rng.uniform(-2, 2, 9))
        x = rng.uniform(-2, 2, 4)
        z = qc.expectation_z(qc.run_circuit(model_circuit(model, x)), model.readout_qubit)
        np.testing.assert_allclose(class_probabilities(model, x), [(1 + z) / 2, (1 - z) / 2], atol=1e-12)


class TestLossAndPredict:
    def test_perfect_model_zero_loss(self):
        model = VqcModel(1, 1, 2)
        data = LabeledDataset([[0.0], [0.0]], [0, 0])
        assert cross_entropy_loss(model, data) < 1e-9

    def test_uniform_predictor_ln2(self):
        model = VqcModel(1, 1, 2, params=[math.pi / 2, 0.0])
        data = LabeledDataset([[0.0], [0.0]], [0, 1])
        assert cross_entropy_loss(model, data) == pytest.approx(math.log(2), abs=1e-6)

    def test_one_qubit_against_per_sample_oracle(self):
        a, b = 0.3, -1.1
        xs = [0.5, -2.0, 1.7]
        ys = [0, 1, 1]
        losses = []
        for xv, yv in zip(xs, ys):
            # two RY rotations compose: RY(x) RY(a) RY(b) |0> = RY(x + a + b) |0>
            p1 = math.sin((xv + a + b) / 2) ** 2
            losses.append(-math.log((p1 if yv == 1 else 1 - p1) + 1e-12))
        model = VqcModel(1, 1, 2, params=[a, b])
        data = LabeledDataset(np.array(xs)[:, None], ys)
        assert cross_entropy_loss(model, data) == pytest.approx(sum(losses) / 3, abs=1e-12)

    def test_empty_dataset(self):
        with pytest.raises(ModelError):
            cross_entropy_loss(VqcModel(1), LabeledDataset(np.zeros((0, 1)), []))

    def test_tie_rule(self):
        assert argmax_class(np.array([1.0, 0.0])) == 0
        assert argmax_class(np.array([0.5, 0.5])) == 0
        assert argmax_class(np.array([0.2, 0.4, 0.4])) == 1
        np.testing.assert_array_equal(argmax_class(np.array([[0.3, 0.7], [0.5, 0.5]])), [1, 0])

    def test_predict_dimension(self):
        with pytest.raises(ModelError):
            predict(VqcModel(2), [0.1])


class TestTraining:
    def test_maxiter_zero(self):
        model = VqcModel(2, 1, 2, params=[0.1, 0.2, 0.3, 0.4])
        params, trace = train(model, separable_blobs(n=40), OptimizerConfig(maxiter=0))
        np.testing.assert_array_equal(params, model.params)
        assert len(trace.evaluations) == 1

    def test_final_not_worse(self):
        data = separable_blobs(1, 60)
        _, trace = train(VqcModel(2, 1, 2), data, OptimizerConfig(maxiter=30))
        assert trace.best_value <= trace.values[0]

    def test_separable_blobs_accuracy(self):
        data = separable_blobs(0)
        model = VqcModel(2, 1, 2)
        params, _ = train(model, data, OptimizerConfig(maxiter=200))
        acc, _ = evaluate(model.with_params(params), data)
        assert acc >= 0.9

    def test_qcnn_trains(self):
        data = separable_blobs(2, 100)
        model = QcnnModel(2)
        params, trace = train(model, data, OptimizerConfig(maxiter=100))
        assert trace.best_value < trace.values[0]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_probability_simplex_and_determinism(n, layers, seed):
    rng = np.random.default_rng(seed)
    classes = int(rng.integers(2, 2**n + 1))
    model = VqcModel(n, layers, classes, params=rng.uniform(-4, 4, n * (layers + 1)))
    x = rng.uniform(-math.pi, math.pi, n)
    p = class_probabilities(model, x)
    assert p.shape == (classes,)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-10
    assert np.array_equal(p, class_probabilities(model, x.copy()))
