"""Residual autoencoder: strided conv encoder, transposed-conv decoder, input skip."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvLayerParams,
    conv1d_same,
    conv1d_same_grad,
    conv1d_transpose_same,
    conv1d_transpose_same_grad,
    relu,
    relu_grad,
    tanh_act,
    tanh_grad,
)

# (transposed, kernel_width, stride, activation) per layer, encoder then decoder
LAYOUT = (
    (False, 5, 2, "relu"),
    (False, 5, 2, "relu"),
    (False, 3, 2, "relu"),
    (False, 3, 2, "relu"),
    (False, 3, 1, "relu"),
    (True, 5, 2, "tanh"),
    (True, 5, 2, "tanh"),
    (True, 5, 2, "tanh"),
    (True, 7, 2, "tanh"),
)
# channel count at each junction: input, 5 encoder outputs
WIDTHS = (1, 32, 34, 38, 44, 44)
REDUCED_WIDTHS = (1, 4, 4, 4, 4, 4)
BOTTLENECK_LAYER = 4
DOWNSAMPLING = 16


def layer_channels(widths=WIDTHS) -> list[tuple[int, int]]:
    """(in, out) channels of each of the nine layers for encoder widths ``widths``."""
    if len(widths) != 6 or widths[0] != 1:
        raise ValueError(f"widths must be 6 channel counts starting at 1, got {widths}")
    enc = [(widths[i], widths[i + 1]) for i in range(5)]
    dec_out = [widths[3], widths[2], widths[1], 1]
    dec_in = [widths[5]] + dec_out[:-1]
    return enc + list(zip(dec_in, dec_out))


def expected_param_count(widths=WIDTHS) -> int:
    return sum(cin * cout * k + cout for (cin, cout), (_, k, _, _) in zip(layer_channels(widths), LAYOUT))


# per-layer counts summed by hand: 192 + 5474 + 3914 + 5060 + 5852 + 8398 + 6494 + 5472 + 225
PARAM_COUNT = 41081


@dataclass
class RaeParams:
    """The nine layers, float32 storage."""

    layers: list[ConvLayerParams]

    def __post_init__(self):
        if len(self.layers) != len(LAYOUT):
            raise ValueError(f"expected {len(LAYOUT)} layers, got {len(self.layers)}")
        widths = self.widths
        for i, ((transposed, k, stride, _), (cin, cout), layer) in enumerate(
            zip(LAYOUT, layer_channels(widths), self.layers)
        ):
            if (layer.transposed, layer.kernel_width, layer.stride, layer.in_channels, layer.out_channels) != (
                transposed, k, stride, cin, cout
            ):
                raise ValueError(
                    f"layer {i}: got (transposed={layer.transposed}, k={layer.kernel_width}, "
                    f"stride={layer.stride}, {layer.in_channels}->{layer.out_channels}), "
                    f"expected (transposed={transposed}, k={k}, stride={stride}, {cin}->{cout})"
                )
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {i} has non-finite parameters")
        if widths == WIDTHS and self.count() != PARAM_COUNT:
            raise ValueError(f"parameter count {self.count()} != {PARAM_COUNT}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (1,) + tuple(layer.out_channels for layer in self.layers[:5])

    def count(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Flat list [w0, b0, w1, b1, ...]; arrays are shared, not copied."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def fingerprint(self) -> int:
        crc = 0
        for a in self.arrays():
            crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
        return crc

    def copy(self) -> RaeParams:
        return RaeParams([
            ConvLayerParams(l.weights.copy(), l.bias.copy(), l.stride, l.transposed) for l in self.layers
        ])


def zero_params(widths=WIDTHS) -> RaeParams:
    layers = []
    for (transposed, k, stride, _), (cin, cout) in zip(LAYOUT, layer_channels(widths)):
        shape = (cin, cout, k) if transposed else (cout, cin, k)
        layers.append(ConvLayerParams(np.zeros(shape, np.float32), np.zeros(cout, np.float32), stride, transposed))
    return RaeParams(layers)


def init_params(rng_seed: int, widths=WIDTHS) -> RaeParams:
    """Fan-in scaled uniform init: He for ReLU layers, Glorot for Tanh layers; zero biases."""
    rng = np.random.default_rng(rng_seed)
    params = zero_params(widths)
    for layer, (_, k, _, act) in zip(params.layers, LAYOUT):
        fan_in = layer.in_channels * k
        fan_out = layer.out_channels * k
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        layer.weights[...] = rng.uniform(-limit, limit, size=layer.weights.shape)
    return params


@dataclass
class ForwardCache:
    """Post-activation outputs of every layer plus the input, for backprop."""

    activations: list[np.ndarray]
    fingerprint: int
    squeeze: bool = False

    @property
    def input(self) -> np.ndarray:
        return self.activations[0]

    @property
    def bottleneck(self) -> np.ndarray:
        """Output of the last encoder layer, shape (batch, 44, L/16)."""
        return self.activations[BOTTLENECK_LAYER + 1]

    @property
    def residual(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class RaeGrads:
    layers: list[tuple[np.ndarray, np.ndarray]]
    input: np.ndarray = field(repr=False)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for gw, gb in self.layers:
            out.extend((gw, gb))
        return out


def check_length(length: int) -> None:
    if length < DOWNSAMPLING or length % DOWNSAMPLING:
        raise ValueError(
            f"waveform length {length} is not a positive multiple of {DOWNSAMPLING} "
            f"(four stride-2 encoder layers must be undone exactly by the decoder)"
        )


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, None, :], True
    if x.ndim == 2:
        return x[:, None, :], False
    if x.ndim == 3 and x.shape[1] == 1:
        return x, False
    raise ValueError(f"expected (L,), (batch, L) or (batch, 1, L) input, got {x.shape}")


def rae_forward(x: np.ndarray, params: RaeParams) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on waveform(s) ``x`` of shape (L,) or (batch, L).

    Returns ``y = x + r`` with the same shape as ``x``, where ``r`` is the
    Tanh-bounded output of the final transposed convolution.
    """
    xb, squeeze = _as_batch(x)
    check_length(xb.shape[-1])
    acts = [xb]
    h = xb
    for layer, (transposed, _, _, act) in zip(params.layers, LAYOUT):
        z = conv1d_transpose_same(h, layer) if transposed else conv1d_same(h, layer)
        h = relu(z) if act == "relu" else tanh_act(z)
        acts.append(h)
    y = (xb + h)[:, 0, :]
    cache = ForwardCache(acts, params.fingerprint(), squeeze)
    return (y[0] if squeeze else y), cache


def rae_backward(cache: ForwardCache, params: RaeParams, loss_grad: np.ndarray) -> RaeGrads:
    """Backpropagate ``loss_grad`` (d loss / d y, shaped like y) through the network.

    Layer gradients are summed over the batch; ``RaeGrads.input`` has the shape of ``x``.
    """
    if cache.fingerprint != params.fingerprint():
        raise ValueError("forward cache does not belong to these parameters (stale or mismatched)")
    g, _ = _as_batch(loss_grad)
    if g.shape != cache.input.shape:
        raise ValueError(f"loss_grad shape {g.shape} does not match forward input {cache.input.shape}")
    grad_input = g.copy()  # skip path
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(LAYOUT)  # type: ignore[list-item]
    up = g
    for i in range(len(LAYOUT) - 1, -1, -1):
        transposed, _, _, act = LAYOUT[i]
        out, inp = cache.activations[i + 1], cache.activations[i]
        dz = relu_grad(out, up) if act == "relu" else tanh_grad(out, up)
        grad_fn = conv1d_transpose_same_grad if transposed else conv1d_same_grad
        up, gw, gb = grad_fn(inp, params.layers[i], dz)
        grads[i] = (gw, gb)
    grad_input += up
    gi = grad_input[:, 0, :]
    return RaeGrads(grads, gi[0] if cache.squeeze else gi)


def mae_loss(y: np.ndarray, y_ref: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient (sign(0) = 0).

    Batched inputs (batch, L) are averaged over length and then over batch.
    """
    y = np.asarray(y, dtype=np.float64)
    y_ref = np.asarray(y_ref, dtype=np.float64)
    if y.shape != y_ref.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_ref.shape}")
    diff = y - y_ref
    if diff.ndim == 1:
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    per_example = np.mean(np.abs(diff), axis=-1)
    return float(np.mean(per_example)), np.sign(diff) / diff.size
