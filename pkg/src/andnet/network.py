"""Feed-forward network with input filtering and L1 weight normalization.

Every layer sees filtered inputs: IF(x) = sigmoid(4 * (x - center)), applied
to the raw pixels at the first layer and to the previous activations at
deeper layers (identity when filtering is disabled).  Hidden layers apply
the steep activation AF(z) = sigmoid(8 * z); the output layer applies
softmax and is trained with cross-entropy on its pre-activations.

Weight columns (one per neuron) can be projected onto an L1 budget:
positive weights sum to exactly 1 whenever any are present, and negative
weights are shrunk so their absolute sum is at most 1.  With inputs in
[0, 1] this bounds each neuron's net contribution to [-1, 1], which is
what makes the downstream filter-sum diagnostics comparable across
neurons.  Biases are left out of the budget.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, as_matrix, matmul

FILTER_GAIN = 4.0
ACTIVATION_GAIN = 8.0
# Sums that land within this of the target are snapped instead of rescaled,
# which makes normalization idempotent at the bit level.
NORMALIZE_SNAP = 1e-12

DEFAULT_LAYER_SIZES = (784, 512, 384, 256, 10)

# Strong weights planted per sign in each freshly initialized column.
INIT_STRONG_PER_SIGN = 2

CHECKPOINT_VERSION = 1


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def input_filter(x, center=0.0):
    """IF(x) = sigmoid(4 * (x - center)); soft gate applied to layer inputs."""
    return sigmoid(FILTER_GAIN * (np.asarray(x, dtype=np.float64) - center))


def activation(z):
    """AF(z) = sigmoid(8 * z); steep hidden-layer activation."""
    return sigmoid(ACTIVATION_GAIN * np.asarray(z, dtype=np.float64))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LayerParams:
    """One dense layer: weights (fan_in, fan_out) and bias (fan_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[1]:
            raise ValueError(
                f"bias shape {self.bias.shape} does not match "
                f"weights {self.weights.shape}"
            )
        if not np.isfinite(self.bias).all():
            raise ValueError("bias contains NaN or Inf")

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def copy(self):
        return LayerParams(self.weights.copy(), self.bias.copy())


@dataclass
class NetworkParams:
    """Full parameter set plus the input-filter configuration."""

    layer_sizes: tuple
    layers: list
    use_input_filter: bool = True
    filter_center: float = 0.0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if len(self.layers) != len(self.layer_sizes) - 1:
            raise ValueError(
                f"{len(self.layers)} layers for {len(self.layer_sizes)} sizes"
            )
        for i, layer in enumerate(self.layers):
            want = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if layer.weights.shape != want:
                raise ValueError(
                    f"layer {i} weights {layer.weights.shape}, expected {want}"
                )
        self.filter_center = float(self.filter_center)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def hidden_sizes(self):
        return self.layer_sizes[1:-1]

    def copy(self):
        return NetworkParams(
            self.layer_sizes,
            [layer.copy() for layer in self.layers],
            self.use_input_filter,
            self.filter_center,
        )

    def filtered(self, x):
        """Apply the configured input filter (identity when disabled)."""
        x = np.asarray(x, dtype=np.float64)
        if not self.use_input_filter:
            return x
        return input_filter(x, self.filter_center)


def init_params(
    layer_sizes=DEFAULT_LAYER_SIZES,
    rng=None,
    use_input_filter=True,
    filter_center=0.0,
    strong_per_sign=INIT_STRONG_PER_SIGN,
):
    """Sparse sign-balanced initialization under the L1 column budget.

    Each column starts as a faint uniform background in
    [-1/fan_in, 1/fan_in] (exact zeros nudged up so magnitude-proportional
    gradient scaling can never freeze a weight), then ``strong_per_sign``
    strong entries of each sign are planted at random rows and the column
    is projected onto the budget, with the negative mass rescaled to
    match the positive mass exactly.  Every column therefore has
    positives summing to 1 and negatives to -1, with most of each budget
    held by a few weights.

    The sign balance centres pre-activations near zero and the sparsity
    keeps their spread at O(1), so the steep activations start in their
    responsive band.  A dense balanced column would shrink the spread by
    ~sqrt(fan_in) per layer and a positive-heavy one would pin every
    activation at its ceiling; either way the network starts in a
    plateau where gradients vanish.
    """
    if rng is None:
        rng = RngStream(0)
    layers = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        r = 1.0 / fan_in
        w = rng.uniform(-r, r, (fan_in, fan_out))
        w[w == 0.0] = r * 1e-6
        k = max(1, min(int(strong_per_sign), fan_in // 2)) if fan_in > 1 else 1
        for col in range(fan_out):
            picks = rng.permutation(fan_in)[: 2 * k]
            w[picks[:k], col] = rng.uniform(0.5, 1.5, k) / k
            w[picks[k:], col] = -rng.uniform(0.5, 1.5, picks[k:].size) / k
        layer = normalize_weights(LayerParams(w, np.zeros(fan_out)))
        ww = layer.weights
        neg_sum = np.where(ww < 0.0, -ww, 0.0).sum(axis=0)
        scale = np.where(
            ww < 0.0, 1.0 / np.maximum(neg_sum, np.finfo(np.float64).tiny), 1.0
        )
        layers.append(LayerParams(ww * scale, layer.bias))
    return NetworkParams(tuple(layer_sizes), layers, use_input_filter, filter_center)


def normalize_weights(layer):
    """Project each weight column onto the L1 budget (bias untouched).

    Per column: if any weight is positive, positives are rescaled so they
    sum to 1; if the absolute sum of negatives exceeds 1, negatives are
    rescaled so it equals 1.  Already-conforming columns pass through
    bit-identically, which makes the projection idempotent.
    """
    w = layer.weights.copy()
    pos = np.where(w > 0.0, w, 0.0)
    neg = np.where(w < 0.0, -w, 0.0)
    pos_sum = pos.sum(axis=0)
    neg_sum = neg.sum(axis=0)

    pos_scale = np.ones_like(pos_sum)
    need_pos = np.abs(pos_sum - 1.0) > NORMALIZE_SNAP
    has_pos = pos_sum > 0.0
    fix = has_pos & need_pos
    pos_scale[fix] = 1.0 / pos_sum[fix]

    neg_scale = np.ones_like(neg_sum)
    fix = (neg_sum > 1.0) & (np.abs(neg_sum - 1.0) > NORMALIZE_SNAP)
    neg_scale[fix] = 1.0 / neg_sum[fix]

    scale = np.where(w > 0.0, pos_scale, np.where(w < 0.0, neg_scale, 1.0))
    return LayerParams(w * scale, layer.bias.copy())


def normalize_network(params):
    """Apply normalize_weights to every layer; returns new params."""
    return NetworkParams(
        params.layer_sizes,
        [normalize_weights(layer) for layer in params.layers],
        params.use_input_filter,
        params.filter_center,
    )


@dataclass
class ActivationTrace:
    """Everything the forward pass saw and produced for one batch.

    ``filtered[l]`` is the filtered input of layer l, ``pre[l]`` its
    pre-activation, and ``outputs[l]`` its activation (softmax for the
    last layer).  All are (batch, width) arrays.
    """

    inputs: np.ndarray
    filtered: list
    pre: list
    outputs: list

    @property
    def batch_size(self):
        return self.inputs.shape[0]

    @property
    def hidden_outputs(self):
        return self.outputs[:-1]


def forward(params, batch):
    """Run a batch through the network, recording per-layer arrays."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"batch has {x.shape[1]} features, network expects "
            f"{params.layer_sizes[0]}"
        )
    filtered, pre, outputs = [], [], []
    a = x
    last = params.n_layers - 1
    for li, layer in enumerate(params.layers):
        f = params.filtered(a)
        z = matmul(f, layer.weights) + layer.bias
        a = activation(z) if li < last else softmax(z)
        filtered.append(f)
        pre.append(z)
        outputs.append(a)
    return ActivationTrace(x, filtered, pre, outputs)


def predict(params, batch):
    """Class index with the highest output probability, per example."""
    trace = forward(params, batch)
    return np.argmax(trace.outputs[-1], axis=1)


def classification_loss(trace, labels):
    """Mean cross-entropy and its gradient w.r.t. the output pre-activations.

    Returns ``(loss, grad)`` where grad has shape (batch, n_classes) and
    already includes the 1/batch factor of the mean.
    """
    logits = trace.pre[-1]
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape}, expected ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in 0..{k - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    loss = float(np.mean(log_z - logits[np.arange(n), labels]))
    grad = trace.outputs[-1].copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class Gradients:
    """Per-layer weight and bias gradients, congruent with NetworkParams."""

    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, params):
        return cls(
            [np.zeros_like(layer.weights) for layer in params.layers],
            [np.zeros_like(layer.bias) for layer in params.layers],
        )

    def check_congruent(self, other):
        if len(self.weights) != len(other.weights):
            raise ValueError("gradient layer counts differ")
        for a, b in zip(self.weights, other.weights):
            if a.shape != b.shape:
                raise ValueError(f"gradient shapes differ: {a.shape} vs {b.shape}")


@dataclass
class BackwardPass:
    """Gradients of a scalar loss w.r.t. parameters, inputs and activations.

    ``hidden_grads[l]`` is d loss / d (hidden layer l activations), one
    (batch, width) array per hidden layer; ``input_grad`` is d loss / d
    raw input pixels.
    """

    grads: Gradients
    input_grad: np.ndarray
    hidden_grads: list = field(default_factory=list)


def backward(params, trace, output_grad):
    """Backpropagate a gradient given at the output pre-activations."""
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.pre[-1].shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape}, "
            f"expected {trace.pre[-1].shape}"
        )
    n_layers = params.n_layers
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    hidden_grads = [None] * (n_layers - 1)
    d_z = output_grad
    input_grad = None
    for li in range(n_layers - 1, -1, -1):
        f = trace.filtered[li]
        grad_w[li] = matmul(f.T, d_z)
        grad_b[li] = d_z.sum(axis=0)
        d_f = matmul(d_z, params.layers[li].weights.T)
        if params.use_input_filter:
            d_in = d_f * (FILTER_GAIN * f * (1.0 - f))
        else:
            d_in = d_f
        if li == 0:
            input_grad = d_in
        else:
            hidden_grads[li - 1] = d_in
            a = trace.outputs[li - 1]
            d_z = d_in * (ACTIVATION_GAIN * a * (1.0 - a))
    return BackwardPass(Gradients(grad_w, grad_b), input_grad, hidden_grads)


def config_digest(config_dict):
    """Stable short hash of a configuration mapping (for checkpoints)."""
    blob = json.dumps(config_dict, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, params, config_hash=""):
    """Write parameters to an ``.npz`` archive.

    Layout (all named arrays): ``version`` (int), ``layer_sizes`` (int64
    vector), ``use_input_filter`` (0/1), ``filter_center`` (float),
    ``config_hash`` (string), then ``weights_0`` .. ``weights_{L-1}``
    and ``bias_0`` .. ``bias_{L-1}``.
    """
    arrays = {
        "version": np.int64(CHECKPOINT_VERSION),
        "layer_sizes": np.asarray(params.layer_sizes, dtype=np.int64),
        "use_input_filter": np.int64(1 if params.use_input_filter else 0),
        "filter_center": np.float64(params.filter_center),
        "config_hash": np.str_(config_hash),
    }
    for i, layer in enumerate(params.layers):
        arrays[f"weights_{i}"] = layer.weights
        arrays[f"bias_{i}"] = layer.bias
    np.savez(path, **arrays)


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or structurally invalid."""


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint.

    Returns ``(params, meta)`` where meta carries ``version`` and
    ``config_hash``.
    """
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint: {exc}") from exc
    with archive:
        try:
            version = int(archive["version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: checkpoint version {version}, "
                    f"expected {CHECKPOINT_VERSION}"
                )
            sizes = tuple(int(s) for s in archive["layer_sizes"])
            layers = [
                LayerParams(archive[f"weights_{i}"], archive[f"bias_{i}"])
                for i in range(len(sizes) - 1)
            ]
            params = NetworkParams(
                sizes,
                layers,
                bool(int(archive["use_input_filter"])),
                float(archive["filter_center"]),
            )
            meta = {
                "version": version,
                "config_hash": str(archive["config_hash"]),
            }
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing checkpoint field {exc}") from exc
        except ValueError as exc:
            raise CheckpointError(f"{path}: invalid checkpoint: {exc}") from exc
    return params, meta
