import struct

import numpy as np
import pytest

from analog_core import new_core_config, quantize_rows, quantize_symmetric
from datasets import synth_dataset
from errors import BadMagic, CountMismatch, NonFiniteInput, ShapeMismatch, TruncatedFile
from nn_runner import (
    Conv2d,
    Flatten,
    Linear,
    Model,
    backward,
    build_mlp,
    conv2d_as_gemm,
    evaluate,
    forward,
    load_weights,
    new_train_state,
    save_weights,
    sgd_step,
    tiled_gemm,
    train_model,
)
from rns_core import get_preset


def _direct_conv(x, kernels, stride):
    n, c, H, W = x.shape
    c_out, _, k, _ = kernels.shape
    oh, ow = (H - k) // stride + 1, (W - k) // stride + 1
    out = np.zeros((n, c_out, oh, ow))
    for b in range(n):
        for o in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    patch = x[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, o, i, j] = np.sum(patch * kernels[o])
    return out


def _loss(model, X, y, core=None):
    _, logits = forward(model, X, core)
    return model.head(logits, y)[0]


def _numeric_grads(model, X, y, eps=1e-3):
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = _loss(model, X, y)
            p[idx] = old - eps
            down = _loss(model, X, y)
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def _analytic_grads(model, X, y, core=None):
    caches, logits = forward(model, X, core)
    _, grad = model.head(logits, y)
    return backward(model, caches, grad, core)[0]


def test_gemm_without_core_is_fp32_matmul():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    assert np.allclose(tiled_gemm(A, B), A @ B, atol=1e-5)


def test_gemm_identity_on_hp_core():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(5, 6)).astype(np.float32)
    out = tiled_gemm(np.eye(5), B, new_core_config('HP', 4, bits=8))
    assert np.allclose(out, B, atol=np.abs(B).max() / 127)


def test_gemm_small_product():
    out = tiled_gemm(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]), new_core_config('HP', 2, bits=16))
    assert np.allclose(out[:, 0], [17.0, 39.0], rtol=1e-3)


def test_gemm_rns_matches_hp():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(130, 200)).astype(np.float32)
    B = rng.normal(size=(200, 7)).astype(np.float32)
    hp = tiled_gemm(A, B, new_core_config('HP', 128, bits=6))
    rns = tiled_gemm(A, B, new_core_config('RNS', 128, moduli=get_preset('rns6')))
    assert np.array_equal(hp, rns)
    assert np.allclose(hp, A @ B, atol=0.2 * np.abs(A @ B).max())


def _quantized_product(A, B, b):
    w = quantize_rows(A, b)
    x = quantize_symmetric(B, b)
    W_hat = w.values * (w.scales[:, None].astype(np.float64) / w.qmax)
    x_hat = x.values * (x.scale.astype(np.float64) / x.qmax)
    return W_hat @ x_hat


@pytest.mark.parametrize('kind', ['HP', 'RNS'])
def test_gemm_quantizes_operands_before_the_core(kind):
    rng = np.random.default_rng(21)
    A = rng.normal(size=(6, 10)).astype(np.float32)
    B = rng.normal(size=(10, 4)).astype(np.float32)
    ms = get_preset('rns4')
    core = new_core_config(kind, 16, bits=ms.bits) if kind == 'HP' else new_core_config('RNS', 16, moduli=ms)
    out = tiled_gemm(A, B, core)
    assert np.allclose(out, _quantized_product(A, B, ms.bits), rtol=1e-5, atol=1e-5)
    assert np.abs(out - A.astype(np.float64) @ B).max() > 1e-2


def test_backward_quantizes_gradient_products():
    rng = np.random.default_rng(22)
    layer = Linear(10, 6, rng=rng)
    model = Model([layer])
    x = rng.normal(size=(4, 10)).astype(np.float32)
    grad_out = rng.normal(size=(4, 6)).astype(np.float32)
    core = new_core_config('RNS', 16, moduli=get_preset('rns4'))

    caches, _ = forward(model, x, core)
    (dW, _), dx = backward(model, caches, grad_out, core)

    assert np.allclose(dx, _quantized_product(layer.W.T, grad_out.T, 4).T, rtol=1e-5, atol=1e-5)
    assert np.allclose(dW, _quantized_product(grad_out.T, x, 4), rtol=1e-5, atol=1e-5)
    assert np.abs(dx - grad_out.astype(np.float64) @ layer.W).max() > 1e-2
    assert np.abs(dW - grad_out.T.astype(np.float64) @ x).max() > 1e-2


def test_lp_core_at_two_bits_loses_every_product():
    ds = synth_dataset('blobs', 64, seed=2)
    model = build_mlp((2, 8, 2), seed=5)
    train_model(model, ds.X, ds.y, new_train_state(model, lr=0.05), 100, None, batch_size=32)
    assert evaluate(model, ds.X, ds.y) >= 0.95

    core = new_core_config('LP', 128, bits=2)
    _, reference = forward(model, ds.X)
    _, logits = forward(model, ds.X, core)
    assert np.allclose(logits, model.layers[-1].b)
    assert np.abs(logits - reference).max() > 1.0
    assert evaluate(model, ds.X, ds.y, core) == 0.5


def test_gemm_rejects_bad_operands():
    with pytest.raises(ShapeMismatch):
        tiled_gemm(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(NonFiniteInput):
        tiled_gemm(np.array([[np.inf]]), np.ones((1, 1)))


def test_gemm_corruption_is_seeded():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(8, 8)), rng.normal(size=(8, 4))
    core = new_core_config('HP', 4, bits=8)
    first = tiled_gemm(A, B, core, p_err=0.3, seed=11)
    assert np.array_equal(first, tiled_gemm(A, B, core, p_err=0.3, seed=11))
    assert not np.array_equal(first, tiled_gemm(A, B, core, p_err=0.3, seed=12))
    assert not np.array_equal(first, tiled_gemm(A, B, core))


@pytest.mark.parametrize('stride', [1, 2])
def test_conv_matches_direct_convolution(stride):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 9, 9)).astype(np.float32)
    kernels = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    assert np.allclose(conv2d_as_gemm(x, kernels, stride), _direct_conv(x, kernels, stride), atol=1e-4)


def test_conv_on_hp_core_is_close():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 2, 8, 8)).astype(np.float32)
    kernels = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    out = conv2d_as_gemm(x, kernels, 1, core=new_core_config('HP', 16, bits=14))
    assert np.allclose(out, _direct_conv(x, kernels, 1), atol=1e-2)


def test_conv_edge_cases():
    x = np.ones((1, 1, 5, 5), dtype=np.float32)
    assert not conv2d_as_gemm(x, np.zeros((2, 1, 3, 3))).any()
    with pytest.raises(ShapeMismatch):
        conv2d_as_gemm(x, np.ones((1, 2, 3, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d_as_gemm(x, np.ones((1, 1, 7, 7)))


def test_mlp_gradients_match_finite_differences():
    X = np.random.default_rng(6).normal(size=(6, 3)).astype(np.float32)
    y = np.array([0, 1, 1, 0, 1, 0])
    model = build_mlp((3, 4, 2), seed=1)
    for numeric, analytic in zip(_numeric_grads(model, X, y), _analytic_grads(model, X, y)):
        assert np.allclose(analytic, numeric, rtol=1e-2, atol=1e-3)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(3, 1, 5, 5)).astype(np.float32)
    y = np.array([0, 1, 1])
    model = Model([Conv2d(1, 2, 3, stride=2, rng=rng), Flatten(), Linear(8, 2, rng=rng)])
    for numeric, analytic in zip(_numeric_grads(model, X, y), _analytic_grads(model, X, y)):
        assert np.allclose(analytic, numeric, rtol=1e-2, atol=1e-3)


def test_hp_gradients_track_fp32():
    X = np.random.default_rng(8).normal(size=(16, 3)).astype(np.float32)
    y = np.arange(16) % 2
    model = build_mlp((3, 8, 2), seed=2)
    core = new_core_config('HP', 128, bits=16)
    for quantized, exact in zip(_analytic_grads(model, X, y, core), _analytic_grads(model, X, y)):
        assert np.allclose(quantized, exact, rtol=1e-2, atol=1e-3)


def test_sgd_step_arithmetic():
    model = Model([Linear(2, 2, bias=False)])
    start = model.layers[0].W.copy()
    g = np.ones_like(start)

    frozen = new_train_state(model, lr=0.0, momentum=0.0)
    sgd_step(frozen, [g])
    assert np.array_equal(model.layers[0].W, start)

    state = new_train_state(model, lr=0.1, momentum=0.9)
    sgd_step(state, [g])
    sgd_step(state, [g])
    assert np.allclose(model.layers[0].W, start - 0.29 * g)
    assert state.step == 2

    with pytest.raises(ShapeMismatch):
        sgd_step(state, [])


def test_step_decay():
    state = new_train_state(build_mlp((2, 2)), lr=1.0, decay_steps=10, decay_factor=0.5)
    assert state.current_lr == 1.0
    state.step = 25
    assert state.current_lr == 0.25


def test_mlp_learns_blobs_on_hp_core():
    ds = synth_dataset('blobs', 256, seed=0)
    model = build_mlp((2, 16, 2), seed=0)
    core = new_core_config('HP', 128, bits=8)
    history = train_model(model, ds.X, ds.y, new_train_state(model, lr=0.05), 100, core)
    assert history[-1]['step'] == 100
    assert history[-1]['accuracy'] >= 0.95
    assert evaluate(model, ds.X, ds.y, core) >= 0.95


@pytest.mark.parametrize('preset', ['rns6', 'rns7'])
def test_rns_training_is_bit_exact_with_hp(preset):
    ds = synth_dataset('blobs', 128, seed=1)
    ms = get_preset(preset)
    params = []
    for core in (new_core_config('HP', 128, bits=ms.bits), new_core_config('RNS', 128, moduli=ms)):
        model = build_mlp((2, 8, 2), seed=3)
        train_model(model, ds.X, ds.y, new_train_state(model, lr=0.05, seed=4), 20, core, batch_size=32)
        params.append(model.parameters())
    for hp, rns in zip(*params):
        assert np.array_equal(hp, rns)


def test_low_precision_core_fails_to_learn():
    ds = synth_dataset('blobs', 256, seed=0)
    results = {}
    for kind in ('LP', 'HP'):
        model = build_mlp((2, 16, 2), seed=0)
        core = new_core_config(kind, 128, bits=4)
        train_model(model, ds.X, ds.y, new_train_state(model, lr=0.05), 100, core)
        results[kind] = evaluate(model, ds.X, ds.y, core)
    assert results['LP'] <= 0.6
    assert results['HP'] >= 0.9


def _stuck_problem():
    rng = np.random.default_rng(9)
    y = np.arange(64) % 2
    centers = np.where(y[:, None] == 0, -3.0, 3.0)
    X = np.hstack([centers + 0.3 * rng.standard_normal((64, 2)), np.ones((64, 1))]).astype(np.float32)
    model = Model([Linear(3, 2, bias=False)])
    model.layers[0].W[...] = [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]
    return model, X, y


@pytest.mark.parametrize('master_weights', [True, False])
def test_master_weights_keep_small_updates(master_weights):
    model, X, y = _stuck_problem()
    core = new_core_config('HP', 4, bits=3)
    state = new_train_state(model, lr=0.005, momentum=0.9, master_weights=master_weights, weight_bits=3)
    train_model(model, X, y, state, 50, core, batch_size=64)
    accuracy = evaluate(model, X, y, core)
    if master_weights:
        assert accuracy >= 0.95
    else:
        assert accuracy == 0.5


def test_evaluate_with_constant_logits():
    model = Model([Linear(2, 3)])
    model.layers[0].W[...] = 0
    X = np.ones((10, 2), dtype=np.float32)
    y = np.array([0] * 4 + [1] * 6)
    assert evaluate(model, X, y) == 0.4
    assert evaluate(model, X[:0], y[:0]) == 0.0


def test_weights_round_trip(tmp_path):
    path = str(tmp_path / 'mlp.rnst')
    model = build_mlp((2, 4, 2), seed=5)
    save_weights(model, path)
    clone = load_weights(build_mlp((2, 4, 2), seed=6), path)
    for a, b in zip(model.parameters(), clone.parameters()):
        assert np.array_equal(a, b)

    raw = open(path, 'rb').read()
    assert raw[:4] == b'RNST'
    assert struct.unpack('<II', raw[4:12]) == (2, 4)


def test_weights_file_errors(tmp_path):
    path = tmp_path / 'mlp.rnst'
    save_weights(build_mlp((2, 4, 2)), str(path))
    raw = path.read_bytes()

    with pytest.raises(CountMismatch):
        load_weights(build_mlp((2, 4, 4, 2)), str(path))
    with pytest.raises(ShapeMismatch):
        load_weights(build_mlp((2, 5, 2)), str(path))

    bad = tmp_path / 'bad.rnst'
    bad.write_bytes(b'XXXX' + raw[4:])
    with pytest.raises(BadMagic):
        load_weights(build_mlp((2, 4, 2)), str(bad))

    short = tmp_path / 'short.rnst'
    short.write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        load_weights(build_mlp((2, 4, 2)), str(short))


def test_mlp_learns_blobs_on_rns7_core():
    ds = synth_dataset('blobs', 256, seed=2)
    model = build_mlp((2, 16, 2), seed=1)
    core = new_core_config('RNS', 128, moduli=get_preset('rns7'))
    history = train_model(model, ds.X, ds.y, new_train_state(model, lr=0.05, seed=2), 200, core)
    assert history[-1]['accuracy'] >= 0.95
