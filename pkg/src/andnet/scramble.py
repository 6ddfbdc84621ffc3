"""Scrambled data sets: per-variable resampling with replacement.

Scrambling redraws every column independently from its own empirical
pool, which preserves each variable's marginal distribution while
destroying all cross-variable structure.  Comparing network statistics
on real data against scrambled data is what separates "this neuron
responds to a joint pattern" from "this neuron responds to anything".

Two constructions are provided:

* type A scrambles the raw input once and propagates it through the
  whole network, so deeper layers see activations *of* scrambled input;
* type B scrambles each layer's real input pool separately and
  propagates through that single layer only, so every layer is probed
  with inputs whose marginals match exactly what it saw during the
  real forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import activation, forward, matmul, softmax
from .numerics import RngStream, as_matrix


class StaleTraceError(ValueError):
    """The supplied trace does not match the network's layer sizes."""


class EmptyPoolError(ValueError):
    """Cannot resample from a pool with zero rows."""


@dataclass
class ScrambledTrace:
    """Per-layer arrays produced from scrambled inputs.

    ``indices[l]`` holds the pool-row indices drawn for layer l (for
    type A only layer 0 has an entry), ``filtered[l]`` the filtered
    scrambled input and ``outputs[l]`` the layer's response.  All output
    arrays have ``n_examples`` rows.
    """

    scramble_type: str
    n_examples: int
    indices: list
    filtered: list
    outputs: list


def scramble_columns(values, n_out, rng):
    """Resample each column independently, with replacement.

    Returns an (n_out, cols) matrix whose column j contains n_out draws
    from column j of ``values``.  Draws are independent across columns,
    so rows of the result generally never occurred in ``values``.
    """
    v = as_matrix(values, "values")
    if v.shape[0] == 0:
        raise EmptyPoolError("cannot scramble an empty pool")
    if n_out < 1:
        raise ValueError(f"n_out must be >= 1, got {n_out}")
    idx = rng.indices(v.shape[0], (n_out, v.shape[1]))
    return np.take_along_axis(v, idx, axis=0)


def _check_trace(params, trace):
    if len(trace.outputs) != params.n_layers:
        raise StaleTraceError(
            f"trace has {len(trace.outputs)} layers, network has {params.n_layers}"
        )
    if trace.inputs.shape[1] != params.layer_sizes[0]:
        raise StaleTraceError(
            f"trace input width {trace.inputs.shape[1]}, "
            f"network expects {params.layer_sizes[0]}"
        )
    for li, out in enumerate(trace.outputs):
        if out.shape[1] != params.layer_sizes[li + 1]:
            raise StaleTraceError(
                f"trace layer {li} width {out.shape[1]}, "
                f"network expects {params.layer_sizes[li + 1]}"
            )


def sds_type_a(params, batch, n_examples, rng):
    """Scramble the raw input once and run the full forward pass."""
    x = as_matrix(batch, "batch")
    if x.shape[0] == 0:
        raise EmptyPoolError("cannot scramble an empty batch")
    if n_examples < 1:
        raise ValueError(f"n_examples must be >= 1, got {n_examples}")
    idx = rng.indices(x.shape[0], (n_examples, x.shape[1]))
    scrambled = np.take_along_axis(x, idx, axis=0)
    trace = forward(params, scrambled)
    return ScrambledTrace("A", n_examples, [idx], trace.filtered, trace.outputs)


def sds_type_b(params, trace, n_examples, rng):
    """Scramble every layer's input pool and propagate one layer only.

    Layer l draws from the real trace: the raw inputs for l = 0, the
    previous layer's activations otherwise.  Each layer forks its own
    child stream, so the draws for layer l do not depend on how many
    other layers exist or on their widths.
    """
    _check_trace(params, trace)
    if n_examples < 1:
        raise ValueError(f"n_examples must be >= 1, got {n_examples}")
    pools = [trace.inputs] + trace.outputs[:-1]
    last = params.n_layers - 1
    indices, filtered, outputs = [], [], []
    for li, layer in enumerate(params.layers):
        pool = pools[li]
        if pool.shape[0] == 0:
            raise EmptyPoolError(f"layer {li} has an empty input pool")
        layer_rng = rng.child(li)
        idx = layer_rng.indices(pool.shape[0], (n_examples, pool.shape[1]))
        x = np.take_along_axis(pool, idx, axis=0)
        f = params.filtered(x)
        z = matmul(f, layer.weights) + layer.bias
        y = activation(z) if li < last else softmax(z)
        indices.append(idx)
        filtered.append(f)
        outputs.append(y)
    return ScrambledTrace("B", n_examples, indices, filtered, outputs)
