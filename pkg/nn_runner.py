"""
Desk-scale neural networks whose GEMMs run on simulated analog cores.

Every Linear and Conv2d product goes through tiled_gemm: operands are cut
into h x h tiles, quantized with per-row weight scales and per-vector input
scales, multiplied on an LP / HP / RNS core and accumulated in FP32. The
same path carries both products of the backward pass, so activation
gradients are quantized too. Everything that is not a GEMM (bias, ReLU,
softmax, the optimizer) stays in FP32, and SGD updates an FP32 master copy
of the weights.
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from analog_core import (
    CoreConfig,
    corrupt_outputs,
    dequantize,
    quantize_rows,
    quantize_symmetric,
    run_mvm,
    tile_rng,
)
from errors import (
    BadMagic,
    CountMismatch,
    NonFiniteInput,
    ShapeMismatch,
    TruncatedFile,
)

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b'RNST'


# ----------------------------------------------------------------------
# Tiled GEMM
# ----------------------------------------------------------------------

def tiled_gemm(
    A: np.ndarray,
    B: np.ndarray,
    core: Optional[CoreConfig] = None,
    p_err: float = 0.0,
    seed: int = 0,
    stream: Tuple[int, ...] = (),
) -> np.ndarray:
    """
    A @ B computed tile by tile on a simulated core.

    A plays the weight role (one scale per tile row) and every column of B
    is an input vector (one scale per tile column). Edge tiles are treated
    as zero padded; the padding never enters a scale. With core=None the
    product is a plain FP32 matmul.

    Args:
        A: (rows, inner) matrix
        B: (inner, cols) matrix
        core: Core to run each tile MVM on
        p_err: Probability of replacing each tile output with a random value
        seed: Seed of the corruption streams
        stream: Key separating this call's corruption streams from others

    Raises:
        ShapeMismatch: inner dimensions differ
        NonFiniteInput: NaN or infinity in an operand
    """
    A = np.asarray(A, dtype=np.float32)
    B = np.asarray(B, dtype=np.float32)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeMismatch(f"Cannot multiply {A.shape} by {B.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NonFiniteInput("GEMM operands must be finite")
    if core is None:
        if p_err > 0:
            raise ValueError("Output corruption needs a simulated core")
        return (A @ B).astype(np.float32)

    h = core.h
    rows, inner = A.shape
    out = np.zeros((rows, B.shape[1]), dtype=np.float32)
    tile = 0
    for r0 in range(0, rows, h):
        for k0 in range(0, inner, h):
            w_tile = quantize_rows(A[r0:r0 + h, k0:k0 + h], core.b_dac)
            x_tile = quantize_symmetric(B[k0:k0 + h], core.b_dac)
            result = run_mvm(w_tile, x_tile, core)
            if p_err > 0:
                result, _ = corrupt_outputs(result, p_err, tile_rng(seed, tile, stream), core)
            out[r0:r0 + h] += result.as_float
            tile += 1
    return out


@dataclass
class GemmContext:
    """Core and corruption settings shared by every GEMM in one pass."""

    core: Optional[CoreConfig] = None
    p_err: float = 0.0
    seed: int = 0
    stream: Tuple[int, ...] = ()
    calls: int = 0

    def gemm(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        key = self.stream + (self.calls,)
        self.calls += 1
        return tiled_gemm(A, B, self.core, self.p_err, self.seed, key)


def _im2col(x: np.ndarray, k: int, stride: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * oh * ow)
    return np.ascontiguousarray(cols), (oh, ow)


def _col2im(cols: np.ndarray, x_shape: Tuple[int, ...], k: int, stride: int, out_hw: Tuple[int, int]) -> np.ndarray:
    n, c = x_shape[:2]
    oh, ow = out_hw
    cols = cols.reshape(c, k, k, n, oh, ow)
    dx = np.zeros(x_shape, dtype=np.float32)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    return dx


def conv2d_as_gemm(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    core: Optional[CoreConfig] = None,
    p_err: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """
    Valid (unpadded) 2-D convolution lowered to a patch-matrix GEMM.

    Args:
        x: (N, C, H, W) input
        kernels: (C_out, C, k, k) weights

    Returns:
        (N, C_out, H_out, W_out) output
    """
    return _conv_forward(x, kernels, stride, GemmContext(core, p_err, seed))[0]


def _conv_forward(x: np.ndarray, kernels: np.ndarray, stride: int, ctx: GemmContext):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ShapeMismatch(f"Cannot convolve input {x.shape} with kernels {kernels.shape}")
    c_out, _, k, k2 = kernels.shape
    if k != k2 or k > x.shape[2] or k > x.shape[3] or stride < 1:
        raise ShapeMismatch(f"Kernel {k}x{k2} with stride {stride} does not fit input {x.shape}")
    cols, (oh, ow) = _im2col(x, k, stride)
    y = ctx.gemm(kernels.reshape(c_out, -1), cols)
    y = y.reshape(c_out, x.shape[0], oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(y), (cols, (oh, ow))


# ----------------------------------------------------------------------
# Layers
# ----------------------------------------------------------------------

class Layer:
    def parameters(self) -> List[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, ctx: GemmContext) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: Any, ctx: GemmContext) -> Tuple[np.ndarray, List[np.ndarray]]:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        std = np.sqrt(2.0 / in_features)
        self.W = (rng.standard_normal((out_features, in_features)) * std).astype(np.float32)
        self.b = np.zeros(out_features, dtype=np.float32) if bias else None

    def parameters(self) -> List[np.ndarray]:
        return [self.W] if self.b is None else [self.W, self.b]

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Linear({self.in_features}, {self.out_features}) got input {x.shape}")
        y = ctx.gemm(self.W, x.T).T
        if self.b is not None:
            y = y + self.b
        return np.ascontiguousarray(y, dtype=np.float32), x

    def backward(self, grad, x, ctx):
        dx = ctx.gemm(self.W.T, grad.T).T
        dW = ctx.gemm(grad.T, x)
        grads = [dW] if self.b is None else [dW, grad.sum(axis=0).astype(np.float32)]
        return np.ascontiguousarray(dx), grads


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 bias: bool = True, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        self.W = (rng.standard_normal((out_channels, in_channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        self.b = np.zeros(out_channels, dtype=np.float32) if bias else None

    def parameters(self) -> List[np.ndarray]:
        return [self.W] if self.b is None else [self.W, self.b]

    def forward(self, x, ctx):
        y, (cols, out_hw) = _conv_forward(x, self.W, self.stride, ctx)
        if self.b is not None:
            y = y + self.b[None, :, None, None]
        return y.astype(np.float32), (x.shape, cols, out_hw)

    def backward(self, grad, cache, ctx):
        x_shape, cols, out_hw = cache
        c_out, _, k, _ = self.W.shape
        grad_mat = grad.transpose(1, 0, 2, 3).reshape(c_out, -1)
        dW = ctx.gemm(grad_mat, cols.T).reshape(self.W.shape)
        dcols = ctx.gemm(self.W.reshape(c_out, -1).T, grad_mat)
        dx = _col2im(dcols, x_shape, k, self.stride, out_hw)
        grads = [dW] if self.b is None else [dW, grad.sum(axis=(0, 2, 3)).astype(np.float32)]
        return dx, grads


class ReLU(Layer):
    def forward(self, x, ctx):
        mask = x > 0
        return np.where(mask, x, np.float32(0)).astype(np.float32), mask

    def backward(self, grad, mask, ctx):
        return np.where(mask, grad, np.float32(0)).astype(np.float32), []


class Flatten(Layer):
    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, shape, ctx):
        return grad.reshape(shape), []


class SoftmaxCrossEntropy:
    """Mean softmax cross-entropy over a batch, in FP32."""

    def __call__(self, logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
        logits = logits.astype(np.float32)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        n = logits.shape[0]
        log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
        loss = float(-log_probs[np.arange(n), labels].mean())
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return loss, (grad / n).astype(np.float32)


@dataclass
class Model:
    layers: List[Layer]
    head: SoftmaxCrossEntropy = field(default_factory=SoftmaxCrossEntropy)

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]


def build_mlp(sizes: Sequence[int], seed: int = 0) -> Model:
    """Linear/ReLU stack, e.g. sizes=(2, 16, 2) for a two-layer MLP."""
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    for i in range(len(sizes) - 1):
        layers.append(Linear(sizes[i], sizes[i + 1], rng=rng))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Model(layers)


def build_cnn(seed: int = 0, channels: int = 8, classes: int = 10) -> Model:
    """Two-layer CNN for 28x28 digits: conv 5x5 stride 2, then a linear classifier."""
    rng = np.random.default_rng(seed)
    return Model([
        Conv2d(1, channels, 5, stride=2, rng=rng),
        ReLU(),
        Flatten(),
        Linear(channels * 12 * 12, classes, rng=rng),
    ])


# ----------------------------------------------------------------------
# Passes
# ----------------------------------------------------------------------

def forward(
    model: Model,
    x: np.ndarray,
    core: Optional[CoreConfig] = None,
    p_err: float = 0.0,
    seed: int = 0,
    stream: Tuple[int, ...] = (),
) -> Tuple[List[Any], np.ndarray]:
    """
    Run the model, returning the per-layer caches and the logits.
    """
    ctx = GemmContext(core, p_err, seed, stream + (0,))
    caches = []
    h = np.asarray(x, dtype=np.float32)
    for layer in model.layers:
        h, cache = layer.forward(h, ctx)
        caches.append(cache)
    return caches, h


def backward(
    model: Model,
    caches: List[Any],
    grad_out: np.ndarray,
    core: Optional[CoreConfig] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Backpropagate grad_out (dL/dlogits) through the cached forward pass.

    Returns:
        (gradients aligned with model.parameters(), dL/dinput)
    """
    ctx = GemmContext(core, stream=(1,))
    grads_by_layer: List[List[np.ndarray]] = []
    grad = np.asarray(grad_out, dtype=np.float32)
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        grad, layer_grads = layer.backward(grad, cache, ctx)
        grads_by_layer.append(layer_grads)
    grads = [g for layer_grads in reversed(grads_by_layer) for g in layer_grads]
    return grads, grad


# ----------------------------------------------------------------------
# Optimizer and training
# ----------------------------------------------------------------------

@dataclass
class TrainState:
    """
    SGD-with-momentum state over the model's FP32 master weights.

    With master_weights disabled every update is written back in quantized
    form at weight_bits, which is what the master copy exists to avoid.
    """

    params: List[np.ndarray]
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    decay_steps: int = 0
    decay_factor: float = 0.1
    master_weights: bool = True
    weight_bits: int = 8
    step: int = 0
    velocity: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in self.params]

    @property
    def current_lr(self) -> float:
        if self.decay_steps > 0:
            return self.lr * self.decay_factor ** (self.step // self.decay_steps)
        return self.lr


def new_train_state(model: Model, **kwargs) -> TrainState:
    return TrainState(params=model.parameters(), **kwargs)


def _requantize(p: np.ndarray, bits: int) -> np.ndarray:
    if p.ndim == 1:
        return dequantize(quantize_symmetric(p, bits))
    tile = quantize_rows(p.reshape(p.shape[0], -1), bits)
    values = tile.values.astype(np.float32) * (tile.scales[:, None] / np.float32(tile.qmax))
    return values.reshape(p.shape).astype(np.float32)


def sgd_step(state: TrainState, grads: Sequence[np.ndarray]) -> TrainState:
    """
    v <- mu * v + g; W <- W - lr * v, applied in place on the FP32 weights.
    """
    if len(grads) != len(state.params):
        raise ShapeMismatch(f"Got {len(grads)} gradients for {len(state.params)} parameters")
    lr = np.float32(state.current_lr)
    mu = np.float32(state.momentum)
    for p, v, g in zip(state.params, state.velocity, grads):
        if g.shape != p.shape:
            raise ShapeMismatch(f"Gradient {g.shape} does not match parameter {p.shape}")
        v *= mu
        v += g
        p -= lr * v
        if not state.master_weights:
            p[...] = _requantize(p, state.weight_bits)
    state.step += 1
    return state


def evaluate(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    core: Optional[CoreConfig] = None,
    p_err: float = 0.0,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if len(X) == 0:
        return 0.0
    correct = 0
    for batch, start in enumerate(range(0, len(X), batch_size)):
        _, logits = forward(model, X[start:start + batch_size], core, p_err, seed, stream=(batch,))
        correct += int(np.sum(np.argmax(logits, axis=1) == y[start:start + batch_size]))
    return correct / len(X)


def train_model(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    state: TrainState,
    steps: int,
    core: Optional[CoreConfig] = None,
    batch_size: int = 64,
    eval_every: Optional[int] = None,
) -> List[Dict]:
    """
    Run SGD for a number of steps on minibatches drawn from state.seed.

    Returns:
        Rows (step, loss, accuracy); accuracy is on the full training set
    """
    rng = np.random.default_rng(state.seed)
    eval_every = eval_every or max(1, steps // 10)
    history = []
    for step in range(1, steps + 1):
        if batch_size >= len(X):
            idx = np.arange(len(X))
        else:
            idx = rng.choice(len(X), size=batch_size, replace=False)
        caches, logits = forward(model, X[idx], core)
        loss, grad = model.head(logits, y[idx])
        grads, _ = backward(model, caches, grad, core)
        sgd_step(state, grads)
        if step % eval_every == 0 or step == steps:
            acc = evaluate(model, X, y, core)
            history.append({'step': step, 'loss': loss, 'accuracy': acc})
            logger.info(f"Step {step}/{steps}: loss={loss:.4f} accuracy={acc:.4f}")
    return history


# ----------------------------------------------------------------------
# Weights file
# ----------------------------------------------------------------------

def save_weights(model: Model, path: str) -> None:
    """
    Write parameters in layer order: b'RNST', then per tensor a uint32
    rank, uint32 dims and float32 data, all little-endian.
    """
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'wb') as f:
        f.write(WEIGHTS_MAGIC)
        for p in model.parameters():
            f.write(struct.pack('<I', p.ndim))
            f.write(struct.pack(f'<{p.ndim}I', *p.shape))
            f.write(p.astype('<f4').tobytes())
    os.replace(tmp_path, path)
    logger.info(f"Saved {len(model.parameters())} tensors to {path}")


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile(f"Weights file ended while reading {what}")
    return data


def load_weights(model: Model, path: str) -> Model:
    """
    Read an RNST file into the model's parameters in place.

    Raises:
        BadMagic: file does not start with b'RNST'
        TruncatedFile: file ends inside a tensor
        CountMismatch: tensor count differs from the model
        ShapeMismatch: a tensor shape differs from the model
    """
    params = model.parameters()
    tensors = []
    with open(path, 'rb') as f:
        if f.read(4) != WEIGHTS_MAGIC:
            raise BadMagic(f"{path} is not an RNST weights file")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedFile("Weights file ended inside a tensor header")
            (rank,) = struct.unpack('<I', head)
            dims = struct.unpack(f'<{rank}I', _read_exact(f, 4 * rank, 'dims'))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * count, 'tensor data'), dtype='<f4')
            tensors.append(data.reshape(dims))

    if len(tensors) != len(params):
        raise CountMismatch(f"File holds {len(tensors)} tensors, model has {len(params)}")
    for p, t in zip(params, tensors):
        if p.shape != t.shape:
            raise ShapeMismatch(f"Tensor shape {t.shape} does not match parameter {p.shape}")
        p[...] = t
    return model
