"""Hybrid model: 2x2 convolution front end (quantum or classical), dense head.

The quantum front end slides four parallel kernels over the image, one
circuit evaluation per 2x2 patch per kernel; the conv-without-pooling
variant uses a single kernel whose four readouts form the four feature maps,
so every configuration feeds the dense head 4 x H' x W' features.  Training
uses softmax cross-entropy and Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .circuits import Ansatz, apply_postprocess, build_ansatz
from .data import Dataset, extract_patches, patch_grid
from .sim import defer_measurements, run_deferred_batch

NUM_FEATURE_MAPS = 4
KERNEL_SIZE = 2


class QuantumConvLayer:
    """Quantum convolution (optionally pooling) with 2x2 patch circuits."""

    def __init__(self, ansatz: Ansatz, stride: int = 2, rng=None):
        rng = rng or np.random.default_rng(0)
        self.ansatz = ansatz
        self.stride = stride
        self.circuit = defer_measurements(ansatz.circuit)
        # One kernel when the circuit itself emits all four maps.
        self.num_kernels = 1 if ansatz.num_readouts == NUM_FEATURE_MAPS else NUM_FEATURE_MAPS
        self.params = rng.uniform(-math.pi, math.pi, (self.num_kernels, ansatz.num_params))
        self._ctx: autodiff.QuantumForwardContext | None = None

    @property
    def num_params(self) -> int:
        return self.params.size

    def forward(self, images: np.ndarray) -> np.ndarray:
        batch, h, w = images.shape
        h_out, w_out = patch_grid(h, w, KERNEL_SIZE, self.stride)
        patches = np.concatenate(
            [extract_patches(img, KERNEL_SIZE, self.stride) for img in images]
        )
        raw = np.empty((self.num_kernels, patches.shape[0], self.ansatz.num_readouts))
        for k in range(self.num_kernels):
            raw[k] = run_deferred_batch(self.circuit, self.params[k], patches)
        self._ctx = autodiff.QuantumForwardContext(
            self.circuit, self.params, patches, raw, self.ansatz.postprocess
        )
        values = apply_postprocess(self.ansatz.postprocess, raw)
        # (kernels, rows, readouts) -> (batch, kernels*readouts, h_out, w_out)
        maps = values.transpose(1, 0, 2).reshape(batch, h_out * w_out, NUM_FEATURE_MAPS)
        return maps.transpose(0, 2, 1).reshape(batch, NUM_FEATURE_MAPS, h_out, w_out)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._ctx is None:
            raise RuntimeError("backward called before forward")
        batch = upstream.shape[0]
        flat = upstream.reshape(batch, NUM_FEATURE_MAPS, -1).transpose(0, 2, 1)
        flat = flat.reshape(-1, NUM_FEATURE_MAPS)  # (rows, kernels*readouts)
        per_kernel = flat.reshape(flat.shape[0], self.num_kernels, self.ansatz.num_readouts)
        return autodiff.quantum_layer_backward(per_kernel.transpose(1, 0, 2), self._ctx)


class ClassicalConvLayer:
    """Plain valid cross-correlation with four 2x2 filters."""

    def __init__(self, stride: int = 2, rng=None, relu: bool = False):
        rng = rng or np.random.default_rng(0)
        bound = math.sqrt(6.0 / (KERNEL_SIZE * KERNEL_SIZE + 1))
        self.filters = rng.uniform(-bound, bound, (NUM_FEATURE_MAPS, KERNEL_SIZE, KERNEL_SIZE))
        self.bias = np.zeros(NUM_FEATURE_MAPS)
        self.stride = stride
        self.relu = relu
        self._cache = None

    @property
    def num_params(self) -> int:
        return self.filters.size + self.bias.size

    def forward(self, images: np.ndarray) -> np.ndarray:
        batch, h, w = images.shape
        h_out, w_out = patch_grid(h, w, KERNEL_SIZE, self.stride)
        patches = np.stack(
            [extract_patches(img, KERNEL_SIZE, self.stride) for img in images]
        )  # (batch, rows, 4)
        pre = patches @ self.filters.reshape(NUM_FEATURE_MAPS, -1).T + self.bias
        out = np.maximum(pre, 0.0) if self.relu else pre
        self._cache = (patches, pre)
        return out.transpose(0, 2, 1).reshape(batch, NUM_FEATURE_MAPS, h_out, w_out)

    def backward(self, upstream: np.ndarray):
        patches, pre = self._cache
        batch = upstream.shape[0]
        d_out = upstream.reshape(batch, NUM_FEATURE_MAPS, -1).transpose(0, 2, 1)
        if self.relu:
            d_out = d_out * (pre > 0)
        d_filters = np.einsum("brf,brp->fp", d_out, patches)
        return d_filters.reshape(self.filters.shape), d_out.sum(axis=(0, 1))


class DenseLayer:
    """Fully connected classification head with two logits."""

    def __init__(self, in_features: int, out_features: int = 2, rng=None):
        rng = rng or np.random.default_rng(0)
        bound = math.sqrt(6.0 / (in_features + out_features))
        self.weights = rng.uniform(-bound, bound, (out_features, in_features))
        self.bias = np.zeros(out_features)
        self._features = None

    def forward(self, features: np.ndarray) -> np.ndarray:
        self._features = features
        return features @ self.weights.T + self.bias

    def backward(self, d_logits: np.ndarray):
        d_weights = d_logits.T @ self._features
        d_bias = d_logits.sum(axis=0)
        d_features = d_logits @ self.weights
        return d_weights, d_bias, d_features


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Per-sample loss and logits gradient; accepts one sample or a batch."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    losses = -(shifted[rows, labels] - np.log(exp.sum(axis=1)))
    grads = probs.copy()
    grads[rows, labels] -= 1.0
    return losses, grads


class HybridModel:
    """Convolution front end + dense head over flattened feature maps."""

    def __init__(self, front, image_shape: tuple[int, int], rng=None):
        self.front = front
        h_out, w_out = patch_grid(image_shape[0], image_shape[1], KERNEL_SIZE, front.stride)
        self.head = DenseLayer(NUM_FEATURE_MAPS * h_out * w_out, rng=rng)
        self.image_shape = tuple(image_shape)

    def forward(self, images: np.ndarray) -> np.ndarray:
        maps = self.front.forward(np.asarray(images, dtype=float))
        return self.head.forward(maps.reshape(maps.shape[0], -1))

    def loss_and_grads(self, images: np.ndarray, labels: np.ndarray):
        """Mean loss, accuracy, and gradients for one batch."""
        logits = self.forward(images)
        losses, d_logits = softmax_cross_entropy(logits, labels)
        batch = len(losses)
        accuracy = float((logits.argmax(axis=1) == labels).mean())
        d_logits /= batch
        d_weights, d_bias, d_features = self.head.backward(d_logits)
        maps_shape = (batch, NUM_FEATURE_MAPS, *self._map_shape())
        grads = {"head_weights": d_weights, "head_bias": d_bias}
        upstream = d_features.reshape(maps_shape)
        if isinstance(self.front, QuantumConvLayer):
            grads["kernels"] = self.front.backward(upstream)
        else:
            d_filters, d_fbias = self.front.backward(upstream)
            grads["filters"] = d_filters
            grads["conv_bias"] = d_fbias
        return float(losses.mean()), accuracy, grads

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"head_weights": self.head.weights, "head_bias": self.head.bias}
        if isinstance(self.front, QuantumConvLayer):
            params["kernels"] = self.front.params
        else:
            params["filters"] = self.front.filters
            params["conv_bias"] = self.front.bias
        return params

    def _map_shape(self) -> tuple[int, int]:
        return patch_grid(*self.image_shape, KERNEL_SIZE, self.front.stride)

    def state_dict(self) -> dict:
        front = self.front
        meta = {
            "front": front.ansatz.key if isinstance(front, QuantumConvLayer) else "classical",
            "stride": front.stride,
            "image_shape": list(self.image_shape),
            "relu": bool(getattr(front, "relu", False)),
        }
        return {
            "format": "qccnn-checkpoint",
            "version": 1,
            **meta,
            "params": {name: arr.tolist() for name, arr in self.parameters().items()},
        }

    def load_state_dict(self, state: dict):
        if state.get("format") != "qccnn-checkpoint" or state.get("version") != 1:
            raise ValueError("not a version-1 checkpoint record")
        for name, arr in self.parameters().items():
            loaded = np.asarray(state["params"][name], dtype=float)
            if loaded.shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {name!r}")
            arr[...] = loaded


def make_model(front_key: str, image_shape: tuple[int, int], stride: int = 2,
               seed: int = 0, relu: bool = False) -> HybridModel:
    """Build a seeded model; `front_key` is an ansatz key or ``classical``."""
    rng = np.random.default_rng(seed)
    if front_key == "classical":
        front = ClassicalConvLayer(stride=stride, rng=rng, relu=relu)
    else:
        front = QuantumConvLayer(build_ansatz(front_key), stride=stride, rng=rng)
    return HybridModel(front, image_shape, rng=rng)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators per parameter group."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """Standard Adam update with bias correction, in place on `params`."""
    state.step += 1
    t = state.step
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * grad**2
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    """Per-epoch metric traces of one training run."""

    train_acc: list
    train_loss: list
    val_acc: list
    val_loss: list

    @property
    def epochs_run(self) -> int:
        return len(self.train_acc)

    @property
    def max_train_acc(self) -> float:
        return max(self.train_acc)

    @property
    def max_val_acc(self) -> float:
        return max(self.val_acc)


def evaluate(model: HybridModel, dataset: Dataset, batch_size: int = 64):
    """Mean accuracy and loss over a dataset; independent of batching."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        logits = model.forward(images)
        losses, _ = softmax_cross_entropy(logits, labels)
        total_loss += float(losses.sum())
        correct += int((logits.argmax(axis=1) == labels).sum())
    return correct / len(dataset), total_loss / len(dataset)


def fit(
    model: HybridModel,
    train: Dataset,
    val: Dataset,
    epochs: int = 20,
    batch_size: int = 8,
    lr: float = 0.001,
    seed: int = 0,
    stop_at_train_acc: float | None = None,
) -> FitResult:
    """Train with Adam; deterministic for a fixed (model seed, fit seed).

    Records the epoch mean of batch train metrics and a full validation pass
    per epoch.  When `stop_at_train_acc` is set, training halts at the end
    of the first epoch whose train accuracy reaches it.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    params = model.parameters()
    result = FitResult([], [], [], [])
    for _ in range(epochs):
        order = rng.permutation(len(train))
        loss_sum = 0.0
        acc_sum = 0.0
        for start in range(0, len(order), batch_size):
            batch_idx = order[start : start + batch_size]
            loss, acc, grads = model.loss_and_grads(
                train.images[batch_idx], train.labels[batch_idx]
            )
            adam_step(params, grads, state)
            loss_sum += loss * len(batch_idx)
            acc_sum += acc * len(batch_idx)
        result.train_loss.append(loss_sum / len(order))
        result.train_acc.append(acc_sum / len(order))
        val_acc, val_loss = evaluate(model, val)
        result.val_acc.append(val_acc)
        result.val_loss.append(val_loss)
        if stop_at_train_acc is not None and result.train_acc[-1] >= stop_at_train_acc:
            break
    return result
