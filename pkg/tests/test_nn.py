import math

import numpy as np
import pytest

from cookbench.errors import FormatError, ParameterError, ShapeError
from cookbench.nn import (
    Conv2d,
    Dense,
    Flatten,
    LossForm,
    LossSpec,
    MaxPool2d,
    ModelParams,
    ModelSpec,
    ReLU,
    backward_params,
    build_spec,
    forward,
    init_params,
    input_gradient,
    input_gradient_batch,
    load_params,
    log_softmax,
    loss_value,
    mean_cross_entropy,
    params_fingerprint,
    params_from_bytes,
    params_to_bytes,
    read_checkpoint_fingerprint,
    save_params,
    small_cnn,
    small_mlp,
    softmax,
)

H = 1e-5
REL_TOL = 1e-4


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def linear_model(w0=0.5, w1=-0.5):
    spec = ModelSpec((Dense(1, 2),), 2, (1,))
    return spec, ModelParams([{"W": np.array([[w0], [w1]]), "b": np.zeros(2)}])


# Each architecture exercises one or more layer types; together they cover
# dense, conv2d (stride 1 and 2, one and several channels), relu, maxpool
# and flatten.
ARCHS = {
    "dense": lambda: ModelSpec((Dense(6, 4), ReLU(), Dense(4, 3)), 3, (6,)),
    "conv_s1": lambda: ModelSpec((Conv2d(1, 3, 3), ReLU(), Flatten(), Dense(48, 2)), 2, (6, 6)),
    "conv_s2_multich": lambda: ModelSpec((Conv2d(2, 3, 3, stride=2), Flatten(), Dense(48, 3)), 3, (2, 9, 9)),
    "pool": lambda: ModelSpec((Conv2d(1, 2, 3), MaxPool2d(2), Flatten(), Dense(18, 2)), 2, (8, 8)),
    "small_cnn": lambda: small_cnn((16, 16), 2),
    "small_mlp": lambda: small_mlp((3, 4, 4), 3, hidden=8),
}


def _setup(name, seed=0, batch=3):
    spec = ARCHS[name]()
    params = init_params(spec, seed)
    rng = np.random.default_rng(seed)
    for d in params.tensors:  # non-zero biases so every term is exercised
        if "b" in d:
            d["b"] = rng.uniform(-0.3, 0.3, d["b"].shape)
    x = rng.uniform(0, 1, (batch,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, batch)
    return spec, params, x, y


@pytest.mark.parametrize("name", sorted(ARCHS))
def test_param_gradients_match_finite_differences(name):
    spec, params, x, y = _setup(name)
    _, grads = backward_params(spec, params, x, y)
    rng = np.random.default_rng(1)
    probes = 0
    slots = [(i, k) for i, d in enumerate(params.tensors) for k in d]
    while probes < 120:
        i, k = slots[rng.integers(len(slots))]
        idx = tuple(rng.integers(0, s) for s in params.tensors[i][k].shape)
        orig = params.tensors[i][k][idx]
        params.tensors[i][k][idx] = orig + H
        up = mean_cross_entropy(forward(spec, params, x), y)
        params.tensors[i][k][idx] = orig - H
        down = mean_cross_entropy(forward(spec, params, x), y)
        params.tensors[i][k][idx] = orig
        num = (up - down) / (2 * H)
        assert rel_err(grads.tensors[i][k][idx], num) <= REL_TOL, (name, i, k, idx)
        probes += 1


@pytest.mark.parametrize("name", sorted(ARCHS))
@pytest.mark.parametrize("form", [LossForm.TARGET_LOGIT, LossForm.TARGET_LOG_PROB])
def test_input_gradients_match_finite_differences(name, form):
    spec, params, x, _ = _setup(name, seed=2, batch=1)
    x = x[0]
    loss = LossSpec(form, target_class=1)
    g = input_gradient(spec, params, x, loss)
    assert g.shape == x.shape
    rng = np.random.default_rng(3)
    for _ in range(100):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[idx] += H
        xm[idx] -= H
        num = (loss_value(forward(spec, params, xp[None])[0], loss) - loss_value(forward(spec, params, xm[None])[0], loss)) / (2 * H)
        assert rel_err(g[idx], num) <= REL_TOL, (name, idx)


def test_batch_input_gradients_are_per_sample():
    spec, params, x, _ = _setup("small_cnn", batch=4)
    classes = np.array([0, 1, 1, 0])
    _, dx, _ = input_gradient_batch(spec, params, x, LossForm.TARGET_LOG_PROB, classes)
    for i in range(4):
        single = input_gradient(spec, params, x[i], LossSpec(LossForm.TARGET_LOG_PROB, int(classes[i])))
        assert np.allclose(dx[i], single, rtol=0, atol=1e-14)


# -- worked examples ----------------------------------------------------------


def test_linear_forward():
    spec, params = linear_model()
    assert forward(spec, params, np.array([[1.0]])).tolist() == [[0.5, -0.5]]


def test_relu_inside_network():
    spec = ModelSpec((Dense(2, 2), ReLU()), 2, (2,))
    params = ModelParams([{"W": np.eye(2), "b": np.zeros(2)}, {}])
    assert forward(spec, params, np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]


def test_conv_all_ones():
    spec = ModelSpec((Conv2d(1, 1, 3), Flatten()), 4, (4, 4))
    params = ModelParams([{"W": np.ones((1, 1, 3, 3)), "b": np.zeros(1)}, {}])
    assert np.all(forward(spec, params, np.ones((1, 4, 4))) == 9.0)


def test_conv_against_direct_loop():
    spec = ModelSpec((Conv2d(2, 3, 3, stride=2), Flatten()), 27, (2, 7, 7))
    params = init_params(spec, 9)
    params.tensors[0]["b"] = np.array([0.1, -0.2, 0.3])
    x = np.random.default_rng(0).normal(size=(1, 2, 7, 7))
    out = forward(spec, params, x).reshape(3, 3, 3)
    W, b = params.tensors[0]["W"], params.tensors[0]["b"]
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref = b[o] + sum(
                    W[o, c, u, v] * x[0, c, 2 * i + u, 2 * j + v] for c in range(2) for u in range(3) for v in range(3)
                )
                assert out[o, i, j] == pytest.approx(ref, abs=1e-12)


def test_maxpool_drops_remainder():
    spec = ModelSpec((MaxPool2d(2), Flatten()), 4, (5, 5))
    x = np.arange(25, dtype=float).reshape(1, 5, 5)
    assert forward(spec, ModelParams([{}, {}]), x).tolist() == [[6.0, 8.0, 16.0, 18.0]]


def test_loss_values():
    z = np.array([0.5, -0.5])
    assert loss_value(z, LossSpec(LossForm.TARGET_LOGIT, 0)) == -0.5
    assert loss_value(z, LossSpec(LossForm.TARGET_LOG_PROB, 0)) == pytest.approx(0.313261687518, abs=1e-12)
    for c in (-3.0, 0.0, 7.5):
        assert loss_value(np.full(3, c), LossSpec(LossForm.TARGET_LOG_PROB, 1)) == pytest.approx(math.log(3), abs=1e-12)
    assert loss_value(z, LossSpec(LossForm.CROSS_ENTROPY), label=1) == pytest.approx(1.313261687518, abs=1e-12)


def test_loss_errors():
    with pytest.raises(ParameterError):
        loss_value(np.zeros(2), LossSpec(LossForm.TARGET_LOGIT, 2))
    with pytest.raises(ParameterError):
        LossSpec(LossForm.TARGET_LOGIT)
    with pytest.raises(ParameterError):
        LossSpec(LossForm.CROSS_ENTROPY, 0)
    with pytest.raises(ParameterError):
        loss_value(np.zeros(2), LossSpec(LossForm.CROSS_ENTROPY))


def test_zero_weight_bias_gradient():
    spec = ModelSpec((Dense(3, 2),), 2, (3,))
    params = ModelParams([{"W": np.zeros((2, 3)), "b": np.zeros(2)}])
    _, g = backward_params(spec, params, np.ones((1, 3)), [1])
    assert g.tensors[0]["b"].tolist() == [0.5, -0.5]


def test_duplicated_sample_gradient():
    spec, params, x, y = _setup("small_cnn", batch=1)
    _, g1 = backward_params(spec, params, x, y)
    _, g2 = backward_params(spec, params, np.concatenate([x, x]), np.concatenate([y, y]))
    assert np.allclose(g1.flat(), g2.flat(), rtol=0, atol=1e-15)


def test_linear_input_gradients():
    spec, params = linear_model()
    for x in (np.array([0.0]), np.array([3.3])):
        assert input_gradient(spec, params, x, LossSpec(LossForm.TARGET_LOGIT, 0)).tolist() == [-0.5]
    g = input_gradient(spec, params, np.array([1.0]), LossSpec(LossForm.TARGET_LOG_PROB, 0))
    assert g[0] == pytest.approx(-0.268941421370, abs=1e-12)


def test_shape_errors():
    spec, params = linear_model()
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        input_gradient(spec, params, np.zeros(2), LossSpec(LossForm.TARGET_LOGIT, 0))
    with pytest.raises(ShapeError):
        backward_params(spec, params, np.zeros((2, 1)), [0])
    with pytest.raises(ShapeError):
        ModelSpec((Dense(4, 3),), 2, (4,))
    with pytest.raises(ShapeError):
        ModelSpec((Conv2d(1, 1, 5), Flatten()), 1, (3, 3))


# -- softmax ------------------------------------------------------------------


def test_softmax_rows_sum_to_one():
    z = np.random.default_rng(0).normal(scale=50, size=(200, 7))
    assert np.all(np.abs(softmax(z).sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(np.isfinite(log_softmax(np.array([[1000.0, -1000.0]]))))


def test_log_prob_loss_non_negative():
    z = np.random.default_rng(1).normal(scale=10, size=(100, 4))
    for row in z:
        for c in range(4):
            assert loss_value(row, LossSpec(LossForm.TARGET_LOG_PROB, c)) >= 0.0


# -- init and determinism -----------------------------------------------------


def test_init_bounds_and_zero_bias():
    spec, _ = linear_model()
    p = init_params(spec, 5)
    assert np.all(np.abs(p.tensors[0]["W"]) <= math.sqrt(6.0))
    assert p.tensors[0]["b"].tolist() == [0.0, 0.0]


def test_init_deterministic_and_seed_sensitive():
    spec = small_cnn((16, 16), 2)
    a, b, c = init_params(spec, 1), init_params(spec, 1), init_params(spec, 2)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert np.any(a.flat() != c.flat())


def test_forward_is_pure():
    spec, params, x, _ = _setup("small_cnn", batch=5)
    assert forward(spec, params, x).tobytes() == forward(spec, params, x).tobytes()


def test_small_cnn_shapes():
    spec = small_cnn((16, 16), 2)
    assert spec.shapes() == [(16, 16), (8, 14, 14), (8, 14, 14), (8, 7, 7), (16, 5, 5), (16, 5, 5), (16, 2, 2), (64,), (2,)]
    assert build_spec("small_mlp", (4, 4, 4), 3).name == "small_mlp"
    with pytest.raises(ParameterError):
        build_spec("resnet", (16, 16), 2)


# -- DCM1 container -----------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    spec, params, _, _ = _setup("small_cnn")
    save_params(tmp_path / "m.dcm", spec, params)
    back = load_params(tmp_path / "m.dcm", spec)
    assert back.flat().tobytes() == params.flat().tobytes()
    assert back.init_seed == params.init_seed
    assert params_fingerprint(spec, back) == params_fingerprint(spec, params)
    assert read_checkpoint_fingerprint((tmp_path / "m.dcm").read_bytes()) == spec.fingerprint()


def test_checkpoint_wrong_architecture():
    spec, params, _, _ = _setup("small_cnn")
    with pytest.raises(ShapeError):
        params_from_bytes(small_cnn((16, 16), 3), params_to_bytes(spec, params))


def test_checkpoint_corruption():
    spec, params, _, _ = _setup("dense")
    blob = params_to_bytes(spec, params)
    with pytest.raises(FormatError):
        params_from_bytes(spec, b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        params_from_bytes(spec, blob[:-3])
    with pytest.raises(FormatError):
        params_from_bytes(spec, blob + b"\0")


def test_params_fingerprint_tracks_content():
    spec, params, _, _ = _setup("dense")
    other = params.copy()
    other.tensors[0]["b"][0] += 1e-12
    assert params_fingerprint(spec, other) != params_fingerprint(spec, params)
