"""MLP: distributed inference, training kernels, serialization, oracles."""

import numpy as np
import pytest

from pimsim.errors import ValidationError
from pimsim.kernels import Activation, sigmoid_approx
from pimsim.machine import allocate_dpus
from pimsim.nn import (
    InferenceExec,
    MlpConfig,
    MlpModel,
    TrainConfig,
    distributed_matmul,
    evaluate,
    feedforward,
    init_model,
    load_model,
    reference_forward,
    reference_matmul,
    save_model,
    train,
)
from pimsim.planner import ElemType, MatrixBuf, Placement, make_plan

SIG = Activation.SIGMOID


def _model_481(seed=0):
    return init_model(MlpConfig((4, 8, 1), (SIG, SIG)), seed=seed)


def test_config_needs_three_layers():
    with pytest.raises(ValidationError):
        MlpConfig((4, 1), (SIG,))


def test_feedforward_zero_input_gives_sigmoid_of_zero():
    model = _model_481()
    exec_ctx = InferenceExec.create(2, 1)
    out = feedforward(model, np.zeros((4, 4), dtype=np.float32), exec_ctx)
    # zero input -> hidden pre-activations all zero -> a = sigma_fast(0)
    hidden = sigmoid_approx(np.float32(0.0))
    z_out = np.dot(np.full(8, np.float64(hidden)),
                   model.weights[1].astype(np.float64)[:, 0])
    expected = sigmoid_approx(np.float32(z_out))
    assert np.allclose(out.to_array(), expected, atol=1e-7)


def test_feedforward_matches_device_oracle():
    rng = np.random.default_rng(42)
    model = _model_481(seed=3)
    x = (rng.random((25, 4), dtype=np.float32) * 2 - 1)
    exec_ctx = InferenceExec.create(3, 2)
    out = feedforward(model, x, exec_ctx).to_array()
    oracle = reference_forward(model, x, device_arithmetic=True)
    assert np.abs(out - oracle).max() <= 1e-4
    assert out.tobytes() == oracle.tobytes()


def test_feedforward_plan_invariance():
    rng = np.random.default_rng(17)
    model = _model_481(seed=9)
    x = (rng.random((23, 4), dtype=np.float32) * 2 - 1)
    outs = set()
    for n1, n2, placement in [(1, 1, Placement.MRAM_STREAM),
                              (4, 1, Placement.MRAM_STREAM),
                              (3, 2, Placement.MRAM_STREAM),
                              (2, 1, Placement.WRAM_RESIDENT),
                              (5, 1, Placement.WRAM_RESIDENT)]:
        exec_ctx = InferenceExec.create(n1, n2, placement)
        outs.add(feedforward(model, x, exec_ctx).to_array().tobytes())
    assert len(outs) == 1


def test_feedforward_many_random_models_match_reference():
    rng = np.random.default_rng(100)
    for trial in range(50):
        sizes = (int(rng.integers(2, 6)), int(rng.integers(2, 9)), 1)
        model = init_model(MlpConfig(sizes, (SIG, SIG)), seed=trial)
        x = (rng.random((int(rng.integers(1, 12)), sizes[0]), dtype=np.float32) * 2 - 1)
        exec_ctx = InferenceExec.create(int(rng.integers(1, 3)), 1)
        out = feedforward(model, x, exec_ctx).to_array()
        assert out.tobytes() == reference_forward(
            model, x, device_arithmetic=True).tobytes()


@pytest.mark.slow
def test_feedforward_net1_shape_completes():
    from pimsim.data import preset
    net = preset("Net1")
    model = init_model(MlpConfig(net.layer_sizes, net.activations), seed=1)
    x = np.zeros((9984, 512), dtype=np.float32)
    exec_ctx = InferenceExec.create(16, 1)
    out = feedforward(model, x, exec_ctx)
    assert (out.logical_rows, out.logical_cols) == (9984, 1)


def test_layer_sync_no_padding_leakage():
    # gathered distributed product equals the host product bit for bit,
    # including ragged splits whose blocks carry padding
    rng = np.random.default_rng(55)
    a = (rng.random((11, 5), dtype=np.float32) * 2 - 1)
    b = (rng.random((5, 3), dtype=np.float32) * 2 - 1)
    et = ElemType.FP32
    A, B = MatrixBuf.from_array(a, et), MatrixBuf.from_array(b, et)
    system = allocate_dpus(6)
    plan = make_plan(A, B, 3, 2, 16, Placement.MRAM_STREAM, system.config)
    out = distributed_matmul(system, A, B, plan).to_array()
    assert out.shape == (11, 3)
    assert out.tobytes() == reference_matmul(a, b, et).tobytes()


# -- training -------------------------------------------------------------------

def test_train_zero_learning_rate_keeps_weights():
    model = _model_481()
    rng = np.random.default_rng(0)
    x = rng.random((6, 4)).astype(np.float32)
    y = np.ones((6, 1), dtype=np.float32)
    trained, losses = train(model, x, y, TrainConfig(learning_rate=0.0, epochs=3))
    for w0, w1 in zip(model.weights, trained.weights):
        assert np.array_equal(w0, w1)
    assert len(losses) == 3


def test_train_zero_epochs_returns_init():
    model = _model_481()
    x = np.zeros((2, 4), dtype=np.float32)
    y = np.zeros((2, 1), dtype=np.float32)
    trained, losses = train(model, x, y, TrainConfig(epochs=0))
    assert losses == []
    for w0, w1 in zip(model.weights, trained.weights):
        assert np.array_equal(w0, w1)


def _hand_backprop_step(weights, x, y, lr):
    """Straightforward batch backprop in float32, shared device sigmoid."""
    lr = np.float32(lr)
    acts = [x]
    for w in weights:
        acts.append(sigmoid_approx(acts[-1] @ w))
    err = y - acts[-1]
    delta = err * (acts[-1] * (1 - acts[-1]))
    deltas = [delta]
    for li in range(len(weights) - 1, 0, -1):
        back = deltas[0] @ weights[li].T
        deltas.insert(0, back * (acts[li] * (1 - acts[li])))
    return [w + lr * (acts[li].T @ deltas[li]) for li, w in enumerate(weights)]


def test_one_backprop_step_matches_hand_oracle():
    model = init_model(MlpConfig((2, 2, 1), (SIG, SIG)), seed=7)
    rng = np.random.default_rng(7)
    x = (rng.random((4, 2), dtype=np.float32) * 2 - 1)
    y = rng.integers(0, 2, (4, 1)).astype(np.float32)
    trained, _ = train(model, x, y, TrainConfig(learning_rate=0.1, epochs=1))
    expected = _hand_backprop_step(model.weights, x, y, 0.1)
    for got, want in zip(trained.weights, expected):
        assert np.abs(got - want).max() <= 1e-6


def test_train_loss_decreases_on_iris_subset():
    from pimsim.data import load_iris, split_iris
    ds = split_iris(load_iris(), seed=0)
    model = _model_481()
    _, losses = train(model, ds.train_x, ds.train_y,
                      TrainConfig(epochs=40, batch_size=122))
    assert losses[-1] < losses[0]


def test_train_minibatches_run_and_update():
    model = _model_481()
    rng = np.random.default_rng(2)
    x = rng.random((10, 4)).astype(np.float32)
    y = rng.integers(0, 2, (10, 1)).astype(np.float32)
    trained, losses = train(model, x, y,
                            TrainConfig(learning_rate=0.1, epochs=2, batch_size=4))
    assert len(losses) == 2
    assert any(not np.array_equal(w0, w1)
               for w0, w1 in zip(model.weights, trained.weights))


def test_feedforward_integer_models_match_reference():
    for et in (ElemType.INT32, ElemType.INT8):
        model = init_model(MlpConfig((4, 8, 2), (SIG, SIG), elem_type=et), seed=4)
        rng = np.random.default_rng(4)
        x = rng.integers(-8, 8, (9, 4)).astype(et.np_dtype)
        exec_ctx = InferenceExec.create(2, 1)
        out = feedforward(model, x, exec_ctx).to_array()
        oracle = reference_forward(model, x, device_arithmetic=True)
        assert out.tobytes() == oracle.tobytes()


def test_train_rejects_relu_networks():
    model = init_model(MlpConfig((4, 8, 1), (Activation.RELU, SIG)), seed=0)
    with pytest.raises(ValidationError):
        train(model, np.zeros((2, 4), dtype=np.float32),
              np.zeros((2, 1), dtype=np.float32), TrainConfig(epochs=1))


# -- evaluation -------------------------------------------------------------------

def test_evaluate_perfect_separation():
    model = _model_481()
    x = np.zeros((4, 4), dtype=np.float32)
    out = reference_forward(model, x, device_arithmetic=True).reshape(-1)
    labels = (out >= 0.5).astype(np.float32)
    assert evaluate(model, x, labels) == 1.0


def test_evaluate_threshold_tie_maps_to_one():
    # outputs exactly at the threshold count as class 1
    config = MlpConfig((4, 8, 1), (SIG, SIG))
    model = MlpModel(config, [np.zeros((4, 8), dtype=np.float32),
                              np.zeros((8, 1), dtype=np.float32)])
    x = np.zeros((3, 4), dtype=np.float32)
    out = float(reference_forward(model, x, device_arithmetic=True)[0, 0])
    assert evaluate(model, x, np.ones(3, dtype=np.float32), threshold=out) == 1.0
    assert evaluate(model, x, np.zeros(3, dtype=np.float32), threshold=out) == 0.0


# -- reference oracle --------------------------------------------------------------

def test_reference_identity_weights():
    config = MlpConfig((2, 2, 2), (SIG, SIG))
    model = MlpModel(config, [np.eye(2, dtype=np.float32),
                              np.eye(2, dtype=np.float32)])
    x = np.array([[0.3, -0.7]])
    out = reference_forward(model, x)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    assert np.allclose(out, sig(sig(x)))


def test_reference_zero_weights_gives_half():
    config = MlpConfig((3, 4, 2), (SIG, SIG))
    model = MlpModel(config, [np.zeros((3, 4), dtype=np.float32),
                              np.zeros((4, 2), dtype=np.float32)])
    out = reference_forward(model, np.random.default_rng(1).random((5, 3)))
    assert np.allclose(out, 0.5)


def test_reference_matmul_matches_independent_matmul():
    rng = np.random.default_rng(12)
    a = (rng.random((9, 7), dtype=np.float32) * 2 - 1)
    b = (rng.random((7, 4), dtype=np.float32) * 2 - 1)
    ref = reference_matmul(a, b, ElemType.FP32)
    direct = (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    assert np.allclose(ref, direct, rtol=1e-6)


# -- serialization ------------------------------------------------------------------

def test_model_round_trip(tmp_path):
    model = _model_481(seed=5)
    path = tmp_path / "model.bin"
    save_model(model, str(path))
    loaded = load_model(str(path))
    assert loaded.config == model.config
    for w0, w1 in zip(model.weights, loaded.weights):
        assert np.array_equal(w0, w1)


def test_model_header_bytes(tmp_path):
    config = MlpConfig((2, 3, 1), (SIG, Activation.RELU))
    model = MlpModel(config, [np.zeros((2, 3), dtype=np.float32),
                              np.zeros((3, 1), dtype=np.float32)])
    path = tmp_path / "model.bin"
    save_model(model, str(path))
    raw = path.read_bytes()
    assert raw[:4] == b"PMLP"
    header = np.frombuffer(raw[4:4 + 4 * (2 + 3 + 2)], dtype="<u4")
    # dtype code, layer count, sizes, activation codes
    assert header.tolist() == [0, 3, 2, 3, 1, 0, 1]
    assert len(raw) == 4 + 4 * 7 + 4 * (2 * 3 + 3 * 1)


def test_load_rejects_bad_magic(tmp_path):
    from pimsim.errors import ParseError
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(ParseError):
        load_model(str(path))
