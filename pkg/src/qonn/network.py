"""Network assembly: ordered layers with a recorded forward trace.

A network is a list of layer objects ended by an implicit LogSoftmax/NLL
head over the final pre-activations (the detector logits).  The forward
pass records, per layer, everything the exact backward pass needs — in
particular the Bernoulli masks actually drawn by stochastic layers, so
that forward and backward refer to the same draw (the backward pass then
deliberately replaces the mask by its mean).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .neuron import CavityArray, DetuningSpec, sample_detunings

__all__ = [
    "DenseLayer",
    "CavityLayer",
    "StochasticLayer",
    "ConvLayer",
    "AvgPoolLayer",
    "FlattenLayer",
    "ForwardTrace",
    "Network",
    "glorot_uniform",
    "build_mlp",
    "build_conv_network",
    "load_network",
]

# distinct streams derived from one construction seed
_W_TAG = 11
_DETUNE_TAG = 23


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init on [-s, s], s = min(1, sqrt(6/(fan_in+fan_out))), clamped.

    The scale keeps pre-activations of order one, where the cavity
    activation is most expressive, while respecting the physical
    transmission bound |W| <= 1.
    """
    s = min(1.0, np.sqrt(6.0 / (fan_in + fan_out)))
    return np.clip(rng.uniform(-s, s, size=shape), -1.0, 1.0)


class DenseLayer:
    """Fully connected optical MVM; entries are SLM pixel transmissions in [-1, 1]."""

    kind = "dense"

    def __init__(self, w: np.ndarray):
        self.W = np.asarray(w, dtype=float)

    @classmethod
    def init(cls, n_out: int, n_in: int, rng: np.random.Generator):
        return cls(glorot_uniform((n_out, n_in), n_in, n_out, rng))

    def forward(self, x, rng=None, freeze_masks=False):
        return L.mvm_forward(self.W, x), x

    def backward(self, d_out, cache):
        d_in, d_w = L.mvm_backward(self.W, d_out, cache)
        return d_in, d_w


class ConvLayer:
    """Optical convolution stage; kernel entries obey the same [-1, 1] clamp."""

    kind = "conv"

    def __init__(self, kernels: np.ndarray, stride: int = 1):
        self.W = np.asarray(kernels, dtype=float)
        self.stride = int(stride)

    @classmethod
    def init(cls, out_ch: int, in_ch: int, k: int, rng: np.random.Generator, stride: int = 1):
        fan_in = in_ch * k * k
        fan_out = out_ch * k * k
        return cls(glorot_uniform((out_ch, in_ch, k, k), fan_in, fan_out, rng), stride)

    def forward(self, x, rng=None, freeze_masks=False):
        return L.conv_forward(self.W, x, self.stride), x

    def backward(self, d_out, cache):
        d_w, d_in = L.conv_backward(self.W, cache, d_out, self.stride)
        return d_in, d_w


class CavityLayer:
    """Array of cavity neurons applying the nonlinear activation elementwise."""

    kind = "cavity"
    W = None

    def __init__(self, cavities: CavityArray):
        self.cavities = cavities

    def forward(self, z, rng=None, freeze_masks=False):
        return L.activation_forward(self.cavities, z), z

    def backward(self, d_a, cache):
        return L.activation_backward(self.cavities, cache, d_a), None


class StochasticLayer:
    """Bernoulli photon loss, active in every forward pass (train and test).

    The backward pass uses the mean-field factor P instead of the mask.
    """

    kind = "stochastic"
    W = None

    def __init__(self, pass_rate: float):
        if not 0.0 <= pass_rate <= 1.0:
            raise ValueError(f"pass rate must be in [0, 1], got {pass_rate}")
        self.pass_rate = float(pass_rate)

    def forward(self, a, rng=None, freeze_masks=False):
        if freeze_masks:
            a = np.asarray(a, dtype=float)
            return a.copy(), np.ones_like(a)
        if rng is None:
            raise ValueError("stochastic layer needs a random generator for its mask")
        return L.stochastic_forward(a, self.pass_rate, rng)

    def backward(self, d_masked, cache):
        return L.stochastic_backward(d_masked, self.pass_rate), None


class AvgPoolLayer:
    """Average pooling over disjoint blocks (photonic amplitude combiner)."""

    kind = "pool"
    W = None

    def __init__(self, pool: int = 2):
        self.pool = int(pool)

    def forward(self, x, rng=None, freeze_masks=False):
        return L.avg_pool_forward(x, self.pool), None

    def backward(self, d_out, cache):
        return L.avg_pool_backward(d_out, self.pool), None


class FlattenLayer:
    """Reshape a feature map to the flat amplitude vector feeding a dense MVM."""

    kind = "flatten"
    W = None

    def __init__(self, in_shape: tuple[int, ...]):
        self.in_shape = tuple(in_shape)
        self.size = int(np.prod(self.in_shape))

    def forward(self, x, rng=None, freeze_masks=False):
        x = np.asarray(x, dtype=float)
        lead = x.shape[: x.ndim - len(self.in_shape)]
        if x.shape[len(lead):] != self.in_shape:
            raise ValueError(f"flatten expected trailing shape {self.in_shape}, got {x.shape}")
        return x.reshape(lead + (self.size,)), lead

    def backward(self, d_out, cache):
        return d_out.reshape(cache + self.in_shape), None


@dataclass
class ForwardTrace:
    """Everything one forward pass produced, in layer order."""

    x: np.ndarray
    outputs: list = field(default_factory=list)  # per-layer outputs
    caches: list = field(default_factory=list)   # per-layer backward state
    kinds: list = field(default_factory=list)
    logits: np.ndarray | None = None
    log_probs: np.ndarray | None = None

    def _inputs(self, i):
        return self.x if i == 0 else self.outputs[i - 1]

    @property
    def pre_activations(self):
        """Incident amplitudes z entering each cavity array."""
        return [self._inputs(i) for i, k in enumerate(self.kinds) if k == "cavity"]

    @property
    def activations(self):
        """Emitted amplitudes a leaving each cavity array."""
        return [o for o, k in zip(self.outputs, self.kinds) if k == "cavity"]

    @property
    def masks(self):
        """Bernoulli masks drawn by stochastic layers, in layer order."""
        return [c[1] for c, k in zip(self.caches, self.kinds) if k == "stochastic"]


class Network:
    """Ordered layer pipeline with a LogSoftmax/NLL head on the final logits."""

    def __init__(self, net_layers: list, n_classes: int):
        self.layers = list(net_layers)
        self.n_classes = int(n_classes)

    # -- forward -----------------------------------------------------------

    def forward(self, x, rng=None, freeze_masks=False) -> ForwardTrace:
        """Run all layers in order, recording intermediates and masks.

        ``rng`` drives the stochastic layers; pass ``freeze_masks=True`` to
        force all-ones masks (used by gradient checks).
        """
        trace = ForwardTrace(x=np.asarray(x, dtype=float))
        h = trace.x
        for layer in self.layers:
            if layer.kind == "stochastic":
                out, mask = layer.forward(h, rng, freeze_masks)
                cache = (h, mask)
            else:
                out, cache = layer.forward(h)
            trace.outputs.append(out)
            trace.caches.append(cache)
            trace.kinds.append(layer.kind)
            h = out
        if h.shape[-1] != self.n_classes:
            raise ValueError(
                f"network produced {h.shape[-1]} logits for {self.n_classes} classes"
            )
        trace.logits = h
        trace.log_probs = L.log_softmax(h)
        return trace

    # -- backward ----------------------------------------------------------

    def backward(self, trace: ForwardTrace, labels, reduction: str = "mean"):
        """Exact gradients of the cross-entropy loss for every weight block.

        Returns a list aligned with ``self.layers`` (None for layers
        without weights).  ``reduction`` controls how a batch is folded
        into the weight gradients: "mean" (the trainer's convention) or
        "sum".
        """
        if reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {reduction!r}")
        _, d_logits, _ = L.output_head(trace.logits, labels)
        if reduction == "mean" and trace.logits.ndim > 1:
            d_logits = d_logits / np.prod(trace.logits.shape[:-1])
        grads: list = [None] * len(self.layers)
        d = d_logits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.kind == "stochastic":
                d, _ = layer.backward(d, None)
            else:
                d, d_w = layer.backward(d, trace.caches[i])
                grads[i] = d_w
        return grads

    def loss(self, x, labels, rng=None, freeze_masks=False):
        """Mean cross-entropy of a batch (or the single-sample loss)."""
        trace = self.forward(x, rng, freeze_masks)
        loss, _, _ = L.output_head(trace.logits, labels)
        return float(np.mean(loss))

    # -- weights -----------------------------------------------------------

    def weight_layers(self):
        return [layer for layer in self.layers if layer.W is not None]

    def weights(self):
        return [layer.W for layer in self.weight_layers()]

    def weight_grads(self, grads):
        """Filter a backward() result down to the trainable blocks, in order."""
        return [g for layer, g in zip(self.layers, grads) if layer.W is not None]

    def max_abs_weight(self) -> float:
        return max(float(np.max(np.abs(w))) for w in self.weights())

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights())

    def describe(self) -> list[str]:
        return [layer.kind for layer in self.layers]

    # -- persistence -------------------------------------------------------

    def save(self, path):
        """Write weights plus reconstruction metadata to an .npz file."""
        meta = {"n_classes": self.n_classes, "layers": []}
        arrays = {}
        for i, layer in enumerate(self.layers):
            entry: dict = {"kind": layer.kind}
            if layer.kind in ("dense", "conv"):
                arrays[f"w{i}"] = layer.W
                if layer.kind == "conv":
                    entry["stride"] = layer.stride
            elif layer.kind == "cavity":
                entry["g"] = layer.cavities.g
                entry["t_abs"] = layer.cavities.t_abs
                arrays[f"delta{i}"] = layer.cavities.delta
            elif layer.kind == "stochastic":
                entry["pass_rate"] = layer.pass_rate
            elif layer.kind == "pool":
                entry["pool"] = layer.pool
            elif layer.kind == "flatten":
                entry["in_shape"] = list(layer.in_shape)
            meta["layers"].append(entry)
        np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_network(path) -> Network:
    """Rebuild a Network saved by Network.save()."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        net_layers = []
        for i, entry in enumerate(meta["layers"]):
            kind = entry["kind"]
            if kind == "dense":
                net_layers.append(DenseLayer(data[f"w{i}"]))
            elif kind == "conv":
                net_layers.append(ConvLayer(data[f"w{i}"], entry["stride"]))
            elif kind == "cavity":
                net_layers.append(
                    CavityLayer(CavityArray(entry["g"], entry["t_abs"], data[f"delta{i}"]))
                )
            elif kind == "stochastic":
                net_layers.append(StochasticLayer(entry["pass_rate"]))
            elif kind == "pool":
                net_layers.append(AvgPoolLayer(entry["pool"]))
            elif kind == "flatten":
                net_layers.append(FlattenLayer(tuple(entry["in_shape"])))
            else:
                raise ValueError(f"unknown layer kind {kind!r} in {path}")
    return Network(net_layers, meta["n_classes"])


# ---------------------------------------------------------------------------
# Builders for the two architectures under study
# ---------------------------------------------------------------------------

def _resolve_t(t_abs, n_hidden: int) -> list[float]:
    ts = list(np.atleast_1d(np.asarray(t_abs, dtype=float)))
    if len(ts) == 1:
        ts = ts * n_hidden
    if len(ts) != n_hidden:
        raise ValueError(f"got {len(ts)} absorption times for {n_hidden} hidden layers")
    return [float(t) for t in ts]


def build_mlp(
    in_dim,
    hidden: tuple[int, ...],
    n_classes: int,
    t_abs=1.0,
    detuning: DetuningSpec = DetuningSpec(),
    g: float = 1.0,
    pass_rate: float | None = None,
    seed: int = 0,
) -> Network:
    """Fully connected network: dense MVM + cavity array per hidden layer.

    ``in_dim`` may be a flat amplitude count or a feature-map shape (the
    map is then flattened on entry).  ``pass_rate`` inserts a stochastic
    photon-loss layer after the first hidden activation (None means the
    layer is physically absent).
    """
    hidden = tuple(int(h) for h in hidden)
    ts = _resolve_t(t_abs, len(hidden))
    net_layers: list = []
    if np.ndim(in_dim) > 0 or isinstance(in_dim, (tuple, list)):
        shape = tuple(int(d) for d in in_dim)
        if len(shape) > 1:
            net_layers.append(FlattenLayer(shape))
        n_prev = int(np.prod(shape))
    else:
        n_prev = int(in_dim)
    for li, (n, t) in enumerate(zip(hidden, ts)):
        rng = np.random.default_rng([seed, _W_TAG, li])
        net_layers.append(DenseLayer.init(n, n_prev, rng))
        delta = sample_detunings(detuning, n, [seed, _DETUNE_TAG, li])
        net_layers.append(CavityLayer(CavityArray(g, t, delta)))
        if li == 0 and pass_rate is not None:
            net_layers.append(StochasticLayer(pass_rate))
        n_prev = n
    rng = np.random.default_rng([seed, _W_TAG, len(hidden)])
    net_layers.append(DenseLayer.init(n_classes, n_prev, rng))
    return Network(net_layers, n_classes)


def build_conv_network(
    input_shape: tuple[int, int, int],
    n_channels: int,
    hidden: tuple[int, ...],
    n_classes: int,
    t_abs=1.0,
    detuning: DetuningSpec = DetuningSpec(),
    g: float = 1.0,
    kernel: int = 5,
    stride: int = 1,
    pool: int = 2,
    pass_rate: float | None = None,
    seed: int = 0,
) -> Network:
    """Convolutional front end feeding the first cavity array, then dense layers.

    The conv + pooling stage plays the role of the first MVM: its pooled,
    flattened output is the incident amplitude vector of the first hidden
    cavity array, whose neuron count is fixed by the geometry.
    """
    h_in, w_in, c_in = input_shape
    h_conv = (h_in - kernel) // stride + 1
    w_conv = (w_in - kernel) // stride + 1
    if h_conv % pool or w_conv % pool:
        raise ValueError(
            f"conv output {h_conv}x{w_conv} not divisible by pool size {pool}"
        )
    map_shape = (h_conv // pool, w_conv // pool, int(n_channels))
    n_first = int(np.prod(map_shape))

    ts = _resolve_t(t_abs, 1 + len(hidden))
    rng = np.random.default_rng([seed, _W_TAG, 0])
    net_layers: list = [
        ConvLayer.init(int(n_channels), c_in, kernel, rng, stride),
        AvgPoolLayer(pool),
        FlattenLayer(map_shape),
    ]
    delta = sample_detunings(detuning, n_first, [seed, _DETUNE_TAG, 0])
    net_layers.append(CavityLayer(CavityArray(g, ts[0], delta)))
    if pass_rate is not None:
        net_layers.append(StochasticLayer(pass_rate))
    n_prev = n_first
    for li, (n, t) in enumerate(zip(hidden, ts[1:]), start=1):
        rng = np.random.default_rng([seed, _W_TAG, li])
        net_layers.append(DenseLayer.init(int(n), n_prev, rng))
        delta = sample_detunings(detuning, int(n), [seed, _DETUNE_TAG, li])
        net_layers.append(CavityLayer(CavityArray(g, t, delta)))
        n_prev = int(n)
    rng = np.random.default_rng([seed, _W_TAG, 1 + len(hidden)])
    net_layers.append(DenseLayer.init(n_classes, n_prev, rng))
    return Network(net_layers, n_classes)
