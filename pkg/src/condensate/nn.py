"""Dense and single-conv networks with hand-written backpropagation.

A dense network with widths ``[d, m_1, ..., m_L, c]`` computes::

    h_0 = x
    h_l = sigma(W_l h_{l-1} + b_l)        l = 1..L
    f(x) = (1/alpha) W_out h_L

so the two-layer case is ``f(x) = (1/alpha) sum_k a_k sigma(w_k . x + b_k)``.
The output layer carries no bias.  The conv network replaces the first hidden
layer with a stride-1 2-D convolution; its channel outputs are flattened
channel-major before the output layer.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import ActivationSpec, get_activation
from .rng import STREAM_INIT, Stream

MSE = "mse"
CROSS_ENTROPY = "softmax_ce"
LOSSES = (MSE, CROSS_ENTROPY)

DIRECT = "direct"
RATE = "rate"
FAN_IN = "fan_in"


class DivergenceError(ArithmeticError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class HessianCapError(ValueError):
    pass


@dataclass(frozen=True)
class InitSpec:
    """Gaussian initialization.

    ``direct``: output weights ~ N(0, beta1^2), hidden weights and biases ~ N(0, beta2^2).
    ``rate``: beta1 = m^-((gamma+gamma')/2), beta2 = m^-((gamma-gamma')/2) for hidden width m
    (with the output prefactor alpha fixed to 1).
    ``fan_in``: every weight and bias of a layer ~ N(0, beta1^2 / fan_in), the usual
    "normal scale" for deeper nets.
    """

    mode: str = DIRECT
    beta1: float = 1.0
    beta2: float = 1.0
    gamma: float = 0.0
    gamma_prime: float = 0.0
    seed: int = 0

    @classmethod
    def direct(cls, beta1, beta2, seed=0):
        return cls(mode=DIRECT, beta1=float(beta1), beta2=float(beta2), seed=seed)

    @classmethod
    def rate(cls, gamma, gamma_prime=0.0, seed=0):
        return cls(mode=RATE, gamma=float(gamma), gamma_prime=float(gamma_prime), seed=seed)

    @classmethod
    def fan_in(cls, scale=1.0, seed=0):
        return cls(mode=FAN_IN, beta1=float(scale), beta2=float(scale), seed=seed)

    def resolve(self, width: int):
        """Return (beta1, beta2) for hidden width ``width``; fan_in mode returns (scale, scale)."""
        if self.mode in (DIRECT, FAN_IN):
            b1, b2 = self.beta1, self.beta2
        elif self.mode == RATE:
            b1 = width ** (-(self.gamma + self.gamma_prime) / 2.0)
            b2 = width ** (-(self.gamma - self.gamma_prime) / 2.0)
        else:
            raise ValueError(f"unknown init mode {self.mode!r}")
        if not (b1 > 0 and b2 > 0 and math.isfinite(b1) and math.isfinite(b2)):
            raise ValueError(f"resolved init std must be positive and finite, got {b1}, {b2}")
        return b1, b2

    def to_dict(self):
        if self.mode == RATE:
            return {"mode": RATE, "gamma": self.gamma, "gamma_prime": self.gamma_prime, "seed": self.seed}
        if self.mode == FAN_IN:
            return {"mode": FAN_IN, "beta1": self.beta1, "seed": self.seed}
        return {"mode": DIRECT, "beta1": self.beta1, "beta2": self.beta2, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int = 3
    image_shape: tuple = (28, 28)
    padding: int = 1

    @property
    def out_shape(self):
        h, w = self.image_shape
        k, p = self.kernel_size, self.padding
        return h + 2 * p - k + 1, w + 2 * p - k + 1

    @property
    def positions(self):
        ho, wo = self.out_shape
        return ho * wo


@dataclass(frozen=True)
class NetworkConfig:
    layer_widths: tuple
    activation: ActivationSpec = field(default_factory=lambda: get_activation("relu"))
    scaling_alpha: float = 1.0
    init: InitSpec = field(default_factory=InitSpec)
    has_bias: bool = True
    conv: Optional[ConvSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 3:
            raise ValueError("need at least input, one hidden and output width")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all widths must be >= 1, got {self.layer_widths}")
        if not self.scaling_alpha > 0:
            raise ValueError("scaling_alpha must be positive")
        if self.init.mode == RATE and self.scaling_alpha != 1.0:
            raise ValueError("rate-coordinate init fixes alpha = 1")
        if self.conv is not None and len(self.layer_widths) != 3:
            raise ValueError("conv networks have exactly one conv layer and one output layer")

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def width(self):
        """Width of the first hidden layer."""
        return self.layer_widths[1]

    @property
    def n_hidden(self):
        return len(self.layer_widths) - 2

    def with_width(self, layer: int, width: int) -> "NetworkConfig":
        widths = list(self.layer_widths)
        widths[layer + 1] = width
        return replace(self, layer_widths=tuple(widths))

    def layer_shapes(self):
        """[(weight_shape, bias_shape or None), ...] per layer."""
        w = self.layer_widths
        shapes = []
        if self.conv is not None:
            k = self.conv.kernel_size
            shapes.append(((w[1], w[0] * k * k), (w[1],) if self.has_bias else None))
            shapes.append(((w[2], w[1] * self.conv.positions), None))
            return shapes
        for i in range(len(w) - 2):
            shapes.append(((w[i + 1], w[i]), (w[i + 1],) if self.has_bias else None))
        shapes.append(((w[-1], w[-2]), None))
        return shapes

    def to_dict(self):
        d = {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation.label,
            "scaling_alpha": self.scaling_alpha,
            "init": self.init.to_dict(),
            "has_bias": self.has_bias,
        }
        if self.conv is not None:
            d["conv"] = {
                "kernel_size": self.conv.kernel_size,
                "image_shape": list(self.conv.image_shape),
                "padding": self.conv.padding,
            }
        return d

    @classmethod
    def from_dict(cls, d):
        conv = d.get("conv")
        if conv is not None:
            conv = ConvSpec(conv["kernel_size"], tuple(conv["image_shape"]), conv["padding"])
        return cls(
            layer_widths=tuple(d["layer_widths"]),
            activation=get_activation(d["activation"]),
            scaling_alpha=d.get("scaling_alpha", 1.0),
            init=InitSpec.from_dict(d.get("init", {})),
            has_bias=d.get("has_bias", True),
            conv=conv,
        )


@dataclass
class ParameterSet:
    """Per-layer weight matrices (out, in) and bias vectors (None when absent).

    For a two-layer net: ``w = weights[0]`` (m, d), ``b = biases[0]`` (m,),
    ``a = weights[1]`` (c, m).
    """

    weights: List[np.ndarray]
    biases: List[Optional[np.ndarray]]

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec: np.ndarray) -> "ParameterSet":
        """A new ParameterSet shaped like self, filled from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vec.size}")
        pos = 0
        weights, biases = [], []
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            if b is None:
                biases.append(None)
            else:
                biases.append(vec[pos:pos + b.size].copy())
                pos += b.size
        return ParameterSet(weights, biases)

    def hidden_vector(self) -> np.ndarray:
        """All hidden-layer weights and biases (everything but the output layer)."""
        parts = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            parts.append(w.ravel())
            if b is not None:
                parts.append(b.ravel())
        return np.concatenate(parts)

    def neuron_vectors(self, layer: int = 0, include_bias: bool = True) -> np.ndarray:
        """Rows (w_k, b_k) of hidden layer ``layer``, one per neuron/channel."""
        w = self.weights[layer]
        b = self.biases[layer]
        if include_bias and b is not None:
            return np.hstack([w, b[:, None]])
        return w.copy()

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def check(self, config: NetworkConfig):
        shapes = config.layer_shapes()
        if len(shapes) != len(self.weights):
            raise ValueError("layer count does not match config")
        for (ws, bs), w, b in zip(shapes, self.weights, self.biases):
            if w.shape != ws:
                raise ValueError(f"weight shape {w.shape} != {ws}")
            if (b is None) != (bs is None) or (b is not None and b.shape != bs):
                raise ValueError("bias shape mismatch")
        if not self.is_finite():
            raise ValueError("parameters contain non-finite entries")


def init_parameters(config: NetworkConfig) -> ParameterSet:
    """Draw every entry from its Gaussian; output layer uses beta1, hidden layers beta2."""
    b1, b2 = config.init.resolve(config.width)
    stream = Stream(config.init.seed, STREAM_INIT)
    weights, biases = [], []
    shapes = config.layer_shapes()
    for i, (ws, bs) in enumerate(shapes):
        if config.init.mode == FAN_IN:
            std = b1 / math.sqrt(int(np.prod(ws[1:])))
        else:
            std = b1 if i == len(shapes) - 1 else b2
        weights.append(stream.normal(ws, std))
        biases.append(None if bs is None else stream.normal(bs, std))
    return ParameterSet(weights, biases)


# ---------------------------------------------------------------------------
# losses


def loss_value_and_grad(kind, out, y):
    """Mean loss over the batch and its gradient w.r.t. the network output."""
    n = out.shape[0]
    if kind == MSE:
        y = np.asarray(y, dtype=np.float64).reshape(out.shape)
        r = out - y
        return float(np.mean(r * r)), (2.0 / r.size) * r
    if kind == CROSS_ENTROPY:
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        labels = _labels(y, out.shape[1])
        value = -float(np.mean(logp[np.arange(n), labels]))
        g = np.exp(logp)
        g[np.arange(n), labels] -= 1.0
        return value, g / n
    raise ValueError(f"unknown loss {kind!r}")


def _labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 2 and y.shape[1] == n_classes:
        return y.argmax(axis=1)
    return y.astype(np.int64).ravel()


def _as_batch(config: NetworkConfig, x):
    x = np.asarray(x, dtype=np.float64)
    if config.conv is not None:
        h, w = config.conv.image_shape
        c = config.input_dim
        if x.shape[-2:] != (h, w):
            raise ValueError(f"expected images of shape {(h, w)}, got {x.shape}")
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None] if c == 1 else x[None]
        if x.shape[1] != c:
            raise ValueError(f"expected {c} input channels, got {x.shape[1]}")
        return x
    d = config.input_dim
    if x.ndim == 0 and d == 1:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected inputs of dimension {d}, got shape {x.shape}")
    return x


def im2col(images: np.ndarray, kernel_size: int, padding: int) -> np.ndarray:
    """(n, C, H, W) -> (n, positions, C*k*k) patches, row-major over output positions."""
    n, c = images.shape[:2]
    if padding:
        images = np.pad(images, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(images, (kernel_size, kernel_size), axis=(2, 3))
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kernel_size * kernel_size)


# ---------------------------------------------------------------------------
# forward / backward


def _hidden_forward(params, config, x, masks):
    """Returns (list of layer inputs, list of activation derivatives, final hidden output)."""
    act = config.activation
    if config.conv is not None:
        patches = im2col(x, config.conv.kernel_size, config.conv.padding)
        z = patches @ params.weights[0].T
        if params.biases[0] is not None:
            z += params.biases[0]
        s, ds = act.value_and_deriv(z)
        if masks and masks[0] is not None:
            s = s * masks[0][:, None, :]
            ds = ds * masks[0][:, None, :]
        flat = s.transpose(0, 2, 1).reshape(x.shape[0], -1)
        return [patches, flat], [ds], flat
    inputs, derivs = [x], []
    h = x
    for l in range(len(params.weights) - 1):
        z = h @ params.weights[l].T
        if params.biases[l] is not None:
            z += params.biases[l]
        s, ds = act.value_and_deriv(z)
        if masks and masks[l] is not None:
            s = s * masks[l]
            ds = ds * masks[l]
        inputs.append(s)
        derivs.append(ds)
        h = s
    return inputs, derivs, h


def forward(params: ParameterSet, config: NetworkConfig, x, masks=None) -> np.ndarray:
    """Network output, shape (n, c).  ``masks`` are optional per-hidden-layer dropout multipliers."""
    x = _as_batch(config, x)
    _, _, h = _hidden_forward(params, config, x, masks)
    return (h @ params.weights[-1].T) / config.scaling_alpha


def hidden_outputs(params: ParameterSet, config: NetworkConfig, x, layer: int = 0) -> np.ndarray:
    """Post-activation outputs of a hidden layer.

    Dense: (n, width).  Conv: (n, positions, channels).
    """
    x = _as_batch(config, x)
    act = config.activation
    if config.conv is not None:
        if layer != 0:
            raise ValueError("conv networks have a single hidden layer")
        patches = im2col(x, config.conv.kernel_size, config.conv.padding)
        z = patches @ params.weights[0].T
        if params.biases[0] is not None:
            z += params.biases[0]
        return act(z)
    h = x
    for l in range(layer + 1):
        z = h @ params.weights[l].T
        if params.biases[l] is not None:
            z += params.biases[l]
        h = act(z)
    return h


def loss_and_gradient(params: ParameterSet, config: NetworkConfig, loss: str, x, y, masks=None):
    """Mean loss over the batch and its exact gradient as a ParameterSet."""
    x = _as_batch(config, x)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    inputs, derivs, h = _hidden_forward(params, config, x, masks)
    alpha = config.scaling_alpha
    out = (h @ params.weights[-1].T) / alpha
    value, g_out = loss_value_and_grad(loss, out, y)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")

    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    g = g_out / alpha
    gw[-1] = g.T @ h
    delta = g @ params.weights[-1]

    if config.conv is not None:
        n = x.shape[0]
        c = params.weights[0].shape[0]
        dz = delta.reshape(n, c, -1).transpose(0, 2, 1) * derivs[0]
        patches = inputs[0]
        gw[0] = np.einsum("npc,npk->ck", dz, patches, optimize=True)
        if params.biases[0] is not None:
            gb[0] = dz.sum(axis=(0, 1))
    else:
        for l in range(n_layers - 2, -1, -1):
            gz = delta * derivs[l]
            gw[l] = gz.T @ inputs[l]
            if params.biases[l] is not None:
                gb[l] = gz.sum(axis=0)
            if l > 0:
                delta = gz @ params.weights[l]
    return value, ParameterSet(gw, gb)


def gradient(params: ParameterSet, config: NetworkConfig, loss: str, x, y, masks=None) -> ParameterSet:
    return loss_and_gradient(params, config, loss, x, y, masks)[1]


def loss_value(params: ParameterSet, config: NetworkConfig, loss: str, x, y, chunk: int = 0) -> float:
    """Mean loss, evaluated in chunks of ``chunk`` samples when chunk > 0."""
    x = _as_batch(config, x)
    n = x.shape[0]
    if chunk <= 0 or n <= chunk:
        value, _ = loss_value_and_grad(loss, forward(params, config, x), y)
        return value
    y = np.asarray(y)
    total = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        v, _ = loss_value_and_grad(loss, forward(params, config, x[sl]), y[sl])
        total += v * x[sl].shape[0]
    return total / n


def numeric_hessian(grad_fn, theta: np.ndarray, rel_step: float = 6e-6) -> np.ndarray:
    """Symmetrized central differences of an analytic gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    H = np.empty((p, p))
    for i in range(p):
        h = rel_step * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        H[:, i] = (grad_fn(tp) - grad_fn(tm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def hessian(params: ParameterSet, config: NetworkConfig, loss: str, x, y,
            cap: int = 2000, rel_step: float = 6e-6) -> np.ndarray:
    """Dense Hessian of the mean loss over all parameters (flatten order)."""
    p = params.n_params
    if p > cap:
        raise HessianCapError(f"{p} parameters exceeds the dense Hessian cap of {cap}")
    x = _as_batch(config, x)
    if not config.activation.smooth:
        _warn_near_kink(params, config, x, rel_step)

    def grad_fn(vec):
        return gradient(params.unflatten(vec), config, loss, x, y).flatten()

    return numeric_hessian(grad_fn, params.flatten(), rel_step)


def _warn_near_kink(params, config, x, rel_step):
    h = x
    scale = rel_step * (1.0 + np.abs(params.flatten()).max()) * (1.0 + np.abs(x).max())
    for l in range(len(params.weights) - 1):
        z = h @ params.weights[l].T
        if params.biases[l] is not None:
            z += params.biases[l]
        if np.any(np.abs(z) < 10 * scale):
            warnings.warn("pre-activation within finite-difference step of the ReLU kink; "
                          "Hessian entries may be inaccurate", RuntimeWarning, stacklevel=3)
            return
        h = config.activation(z)


def permute_neurons(params: ParameterSet, perm: Sequence[int], layer: int = 0) -> ParameterSet:
    """Reorder the neurons of a hidden layer (rows in, columns out)."""
    perm = np.asarray(perm)
    out = params.copy()
    out.weights[layer] = params.weights[layer][perm]
    if params.biases[layer] is not None:
        out.biases[layer] = params.biases[layer][perm]
    out.weights[layer + 1] = params.weights[layer + 1][:, perm]
    return out


def two_layer_config(width, activation="relu", init=None, input_dim=1, output_dim=1,
                     alpha=1.0, has_bias=True) -> NetworkConfig:
    act = activation if isinstance(activation, ActivationSpec) else get_activation(activation)
    return NetworkConfig(
        layer_widths=(input_dim, width, output_dim),
        activation=act,
        scaling_alpha=alpha,
        init=init or InitSpec(),
        has_bias=has_bias,
    )
