"""Per-neuron statistics comparing real and scrambled responses.

The central quantity is the hyper-spread of a neuron: real inputs carry
joint structure that a coincidence-detecting neuron can amplify, while
scrambled inputs (see ``scramble``) keep only the marginals.  A neuron
whose output varies much more on real data than on scrambled data is
responding to a pattern; one whose variance barely changes is not.

    hysp = tanh(2 * var(y | real) / max(var(y | scrambled), 1e-12))
    sat  = mean(tanh(2 * |y - 0.5|))

Both lie in [0, 1) and are combined with the neuron's influence on the
classification loss into a secondary training objective:

    loss2 = 1 - sum_i (0.5 * hysp_i + 0.5 * sat_i) * grad_abs_i / n

over hidden neurons, where grad_abs_i is the batch-mean magnitude of
d CE / d activation_i, treated as a constant weight (it is not
differentiated through).  Driving loss2 down pushes influential neurons
toward decisive, pattern-specific responses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import (
    ACTIVATION_GAIN,
    FILTER_GAIN,
    Gradients,
    matmul,
)
from .numerics import as_matrix, as_vector

# Variance floor for the scrambled side of a ratio; keeps hysp finite when a
# neuron is completely saturated on scrambled input.
VAR_FLOOR = 1e-12

# Tolerance when checking that a layer is L1-normalized.
NORM_TOL = 1e-9


class UnnormalizedLayerError(ValueError):
    """An operation that requires L1-normalized weights got raw ones."""


def population_variance(values, axis=0):
    """Biased (population) variance, the convention used throughout.

    A mathematically constant sample reports exactly 0.0: plain np.var
    can leave a ~1e-33 residue there because the mean itself rounds, and
    downstream contracts (a constant neuron has hyper-spread 0) need the
    exact zero.
    """
    v = np.asarray(values, dtype=np.float64)
    var = v.var(axis=axis)
    constant = v.max(axis=axis) == v.min(axis=axis)
    if var.ndim == 0:
        return 0.0 if constant else float(var)
    var = np.asarray(var)
    var[constant] = 0.0
    return var


def hysp(y_real, y_scrambled):
    """Hyper-spread of one neuron from real and scrambled output samples."""
    y_real = as_vector(y_real, "y_real")
    y_scrambled = as_vector(y_scrambled, "y_scrambled")
    if y_real.size == 0 or y_scrambled.size == 0:
        raise ValueError("hysp needs at least one sample on each side")
    ratio = population_variance(y_real) / max(
        population_variance(y_scrambled), VAR_FLOOR
    )
    return float(np.tanh(2.0 * ratio))


def sat(y_real):
    """Mean saturation of one neuron: how far outputs sit from 0.5."""
    y_real = as_vector(y_real, "y_real")
    if y_real.size == 0:
        raise ValueError("sat needs at least one sample")
    return float(np.mean(np.tanh(2.0 * np.abs(y_real - 0.5))))


def pearson(a, b):
    """Population Pearson correlation of two equal-length samples."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("pearson needs at least two samples")
    sd_a = a.std()
    sd_b = b.std()
    if sd_a == 0.0 or sd_b == 0.0:
        raise ValueError("pearson undefined for a zero-variance sample")
    return float((np.mean(a * b) - a.mean() * b.mean()) / (sd_a * sd_b))


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(as_vector(a, "a"))
    b = np.sort(as_vector(b, "b"))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs non-empty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def _g_mean_diff(real_vals, scrambled_vals):
    return float(np.mean(real_vals) - np.mean(scrambled_vals))


def _g_var_ratio(real_vals, scrambled_vals):
    ratio = population_variance(real_vals) / max(
        population_variance(scrambled_vals), VAR_FLOOR
    )
    return float(np.tanh(2.0 * ratio))


G_OPERATORS = {
    "mean_diff": _g_mean_diff,
    "var_ratio": _g_var_ratio,
    "ks": ks_statistic,
}


@dataclass
class CorrelationSpec:
    """A generalized correlation: F maps selected columns to a statistic
    per row, G compares F's distribution on real vs. scrambled data.

    ``f`` receives an (n, k) array of the selected columns and must
    return an (n,) array.  ``g`` is a key of G_OPERATORS or a callable
    ``(real_values, scrambled_values) -> float``.
    """

    f: object
    g: object
    indices: tuple

    def g_callable(self):
        if callable(self.g):
            return self.g
        try:
            return G_OPERATORS[self.g]
        except KeyError:
            raise ValueError(
                f"unknown comparison operator {self.g!r}; "
                f"choose from {sorted(G_OPERATORS)} or pass a callable"
            ) from None


def generalized_correlation(spec, data, n_samples, rng):
    """Monte-Carlo generalized correlation G(F | real, F | scrambled)."""
    d = as_matrix(data, "data")
    cols = tuple(int(i) for i in spec.indices)
    if len(cols) == 0:
        raise ValueError("spec.indices must select at least one column")
    if any(c < 0 or c >= d.shape[1] for c in cols):
        raise ValueError(f"column indices {cols} out of range for {d.shape[1]} columns")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    sel = d[:, list(cols)]
    real_vals = np.asarray(spec.f(sel), dtype=np.float64)
    idx = rng.indices(sel.shape[0], (n_samples, sel.shape[1]))
    scrambled = np.take_along_axis(sel, idx, axis=0)
    scrambled_vals = np.asarray(spec.f(scrambled), dtype=np.float64)
    return float(spec.g_callable()(real_vals, scrambled_vals))


def sds_correlation(a, b, n_samples, rng):
    """Correlation as the scrambling-sensitivity of E[a*b].

    (E[ab | real] - E[ab | scrambled]) / (sd(a) * sd(b)), estimated by
    Monte Carlo.  Converges to the Pearson correlation as n_samples
    grows, because scrambling makes a and b independent with unchanged
    marginals.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("sds_correlation needs at least two samples")
    sd_a = a.std()
    sd_b = b.std()
    if sd_a == 0.0 or sd_b == 0.0:
        raise ValueError("sds_correlation undefined for a zero-variance sample")
    spec = CorrelationSpec(f=lambda m: m[:, 0] * m[:, 1], g="mean_diff", indices=(0, 1))
    num = generalized_correlation(spec, np.column_stack([a, b]), n_samples, rng)
    return num / (sd_a * sd_b)


def check_normalized(weights, what="layer"):
    """Raise UnnormalizedLayerError unless columns satisfy the L1 budget."""
    w = np.asarray(weights)
    pos = np.where(w > 0.0, w, 0.0).sum(axis=0)
    neg = np.where(w < 0.0, -w, 0.0).sum(axis=0)
    has_pos = pos > 0.0
    bad_pos = has_pos & (np.abs(pos - 1.0) > NORM_TOL)
    bad_neg = neg > 1.0 + NORM_TOL
    if bad_pos.any() or bad_neg.any():
        raise UnnormalizedLayerError(
            f"{what} is not L1-normalized "
            f"(worst positive sum {pos[has_pos].max(initial=1.0):.6f}, "
            f"worst negative sum {neg.max(initial=0.0):.6f}); "
            f"normalize the weights first"
        )


def ncf(layer, filtered_input):
    """Neuron contribution on filtered input: x @ W, guaranteed in [-1, 1].

    Requires the layer to be L1-normalized and the input to lie in
    [0, 1] (which filtered values always do); under those constraints
    the positive part contributes at most +1 and the negative part at
    most -1.
    """
    check_normalized(layer.weights)
    x = np.asarray(filtered_input, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != layer.weights.shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match fan-in "
            f"{layer.weights.shape[0]}"
        )
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("filtered input must lie in [0, 1]")
    out = matmul(x, layer.weights)
    return out[0] if single else out


@dataclass
class NeuronMeasures:
    """Per-neuron hysp, sat and gradient weight for each hidden layer."""

    hysp: list
    sat: list
    grad_abs: list

    @property
    def n_neurons(self):
        return sum(h.size for h in self.hysp)

    @property
    def mean_hysp(self):
        return float(np.concatenate(self.hysp).mean())

    @property
    def mean_sat(self):
        return float(np.concatenate(self.sat).mean())

    def rows(self):
        """Yield (layer, neuron, hysp, sat, grad_abs) across hidden layers."""
        for li, (h, s, g) in enumerate(zip(self.hysp, self.sat, self.grad_abs)):
            for ni in range(h.size):
                yield li + 1, ni, float(h[ni]), float(s[ni]), float(g[ni])


def batch_measures(params, trace, sds_trace, hidden_grads):
    """Vectorized hysp/sat/grad_abs for every hidden neuron.

    ``hidden_grads`` must come from a backward pass of the *mean* CE
    loss, so summing per-example magnitudes over the batch realizes the
    batch-mean of per-example |d CE / d activation|.
    """
    n_hidden = params.n_layers - 1
    if len(hidden_grads) != n_hidden:
        raise ValueError(
            f"{len(hidden_grads)} hidden gradient arrays for {n_hidden} hidden layers"
        )
    hysp_l, sat_l, grad_l = [], [], []
    for li in range(n_hidden):
        y_real = trace.outputs[li]
        y_scr = sds_trace.outputs[li]
        if y_real.shape[1] != y_scr.shape[1]:
            raise ValueError(
                f"layer {li + 1}: trace width {y_real.shape[1]} vs "
                f"scrambled width {y_scr.shape[1]}"
            )
        var_real = population_variance(y_real, axis=0)
        var_scr = np.maximum(population_variance(y_scr, axis=0), VAR_FLOOR)
        hysp_l.append(np.tanh(2.0 * var_real / var_scr))
        sat_l.append(np.mean(np.tanh(2.0 * np.abs(y_real - 0.5)), axis=0))
        grad_l.append(np.abs(hidden_grads[li]).sum(axis=0))
    return NeuronMeasures(hysp_l, sat_l, grad_l)


def unit_importance(measures):
    """Rescale grad_abs to mean 1 across all hidden neurons.

    Raw grad_abs values are tiny (per-activation CE gradients averaged
    over a batch), so using them directly would shrink loss2's gradient
    by orders of magnitude relative to the CE gradient and make the
    50/50 mix a no-op.  They are meant as *relative* importance weights;
    putting them on a mean-1 scale keeps loss2 in [0, 1] and its
    gradient commensurate with CE's, while preserving the ratios between
    neurons.  An all-zero gradient (no CE signal at all) passes through
    unchanged.
    """
    total = sum(float(g.sum()) for g in measures.grad_abs)
    if total <= 0.0:
        return measures
    scale = measures.n_neurons / total
    return NeuronMeasures(
        hysp=measures.hysp,
        sat=measures.sat,
        grad_abs=[g * scale for g in measures.grad_abs],
    )


def loss2(measures):
    """Secondary loss: 1 - mean over hidden neurons of score * grad_abs."""
    n = measures.n_neurons
    if n == 0:
        raise ValueError("no hidden neurons")
    total = 0.0
    for h, s, g in zip(measures.hysp, measures.sat, measures.grad_abs):
        total += float(((0.5 * h + 0.5 * s) * g).sum())
    return 1.0 - total / n


def loss2_backward(params, trace, sds_trace, measures):
    """Exact parameter gradient of loss2 with grad_abs held constant.

    Differentiates through both sides of the variance ratio: the real
    branch backpropagates through the ordinary forward pass, and the
    scrambled branch backpropagates through each layer's scrambled
    input, scattering back onto the pooled activations it was resampled
    from (layer l's pool is layer l-1's real output, so scrambled
    responses at layer l still influence the weights of layers below).
    The scrambled-trace row indices are part of the recorded trace and
    are treated as constants, as is grad_abs.
    """
    if sds_trace.scramble_type != "B":
        raise ValueError("loss2_backward requires a type-B scrambled trace")
    n_layers = params.n_layers
    n_hidden = n_layers - 1
    batch = trace.batch_size
    m = sds_trace.n_examples
    n_neurons = measures.n_neurons
    grads = Gradients.zeros_like(params)
    carry = None  # d loss2 / d (hidden activations of the layer below)
    for li in range(n_hidden - 1, -1, -1):
        y = trace.outputs[li]
        y_scr = sds_trace.outputs[li]
        grad_abs = measures.grad_abs[li]
        mean_real = y.mean(axis=0)
        var_real = population_variance(y, axis=0)
        var_scr = population_variance(y_scr, axis=0)
        var_scr_eff = np.maximum(var_scr, VAR_FLOOR)
        h = np.tanh(2.0 * var_real / var_scr_eff)
        coeff = -0.5 * grad_abs / n_neurons  # d loss2 / d hysp_i = d loss2 / d sat_i
        sech2 = 1.0 - h * h
        dh_dvar_real = sech2 * 2.0 / var_scr_eff
        dh_dvar_scr = np.where(
            var_scr >= VAR_FLOOR,
            -sech2 * 2.0 * var_real / (var_scr_eff * var_scr_eff),
            0.0,
        )
        # Real branch: hysp numerator plus saturation, both per-sample.
        t = np.tanh(2.0 * np.abs(y - 0.5))
        d_sat = (1.0 - t * t) * 2.0 * np.sign(y - 0.5) / batch
        d_y = coeff * (dh_dvar_real * 2.0 * (y - mean_real) / batch + d_sat)
        if carry is not None:
            d_y = d_y + carry
        # Scrambled branch: hysp denominator.
        d_y_scr = (coeff * dh_dvar_scr) * (2.0 * (y_scr - y_scr.mean(axis=0)) / m)

        layer = params.layers[li]
        d_z = d_y * (ACTIVATION_GAIN * y * (1.0 - y))
        grads.weights[li] += matmul(trace.filtered[li].T, d_z)
        grads.biases[li] += d_z.sum(axis=0)

        d_z_scr = d_y_scr * (ACTIVATION_GAIN * y_scr * (1.0 - y_scr))
        grads.weights[li] += matmul(sds_trace.filtered[li].T, d_z_scr)
        grads.biases[li] += d_z_scr.sum(axis=0)

        if li > 0:
            d_f = matmul(d_z, layer.weights.T)
            d_f_scr = matmul(d_z_scr, layer.weights.T)
            if params.use_input_filter:
                f = trace.filtered[li]
                f_scr = sds_trace.filtered[li]
                carry = d_f * (FILTER_GAIN * f * (1.0 - f))
                d_pool = d_f_scr * (FILTER_GAIN * f_scr * (1.0 - f_scr))
            else:
                carry = d_f.copy()
                d_pool = d_f_scr
            # Scatter the scrambled-input gradient back to the pool rows
            # (the real activations of layer li - 1) it was drawn from.
            idx = sds_trace.indices[li]
            cols = np.broadcast_to(np.arange(idx.shape[1]), idx.shape)
            np.add.at(carry, (idx, cols), d_pool)
    return grads


def ncf_histograms(params, trace, sds_trace, bins=40):
    """Histogram each hidden neuron's contribution on real vs scrambled input.

    Returns one ``(real_counts, scrambled_counts, edges)`` triple per
    hidden layer, with counts shaped (width, bins) over the fixed range
    [-1, 1].  Requires normalized layers; total counts per neuron equal
    the number of rows histogrammed.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    out = []
    for li in range(params.n_layers - 1):
        layer = params.layers[li]
        check_normalized(layer.weights, f"layer {li}")
        real = matmul(trace.filtered[li], layer.weights)
        scr = matmul(sds_trace.filtered[li], layer.weights)
        out.append((_column_hist(real, bins), _column_hist(scr, bins), edges))
    return out


def _column_hist(values, bins):
    """Per-column histogram over [-1, 1]; the right edge joins the last bin."""
    width = values.shape[1]
    pos = ((values + 1.0) * (bins / 2.0)).astype(np.int64)
    pos = np.clip(pos, 0, bins - 1)
    counts = np.zeros((width, bins), dtype=np.int64)
    cols = np.broadcast_to(np.arange(width), pos.shape)
    np.add.at(counts, (cols, pos), 1)
    return counts


MEASURES_CSV_HEADER = ["layer", "neuron", "hysp", "sat", "grad_abs"]


def write_measures_csv(path, measures):
    """Dump per-neuron measures as CSV with a schema comment line."""
    with open(path, "w", newline="") as fh:
        fh.write("# andnet neuron-measures v1\n")
        writer = csv.writer(fh)
        writer.writerow(MEASURES_CSV_HEADER)
        for row in measures.rows():
            writer.writerow([row[0], row[1], f"{row[2]:.9g}", f"{row[3]:.9g}", f"{row[4]:.9g}"])
