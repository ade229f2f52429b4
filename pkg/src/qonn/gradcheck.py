"""Finite-difference certification of the analytic gradients.

The backward pass is checked against central differences of the forward
loss, weight entry by weight entry, with stochastic masks frozen to all
ones so both sides differentiate the same deterministic function.  The
activation derivative is checked pointwise against central differences,
excluding a small neighborhood of its kinks where the derivative is only
a subgradient.
"""

from __future__ import annotations

import numpy as np

from .network import Network, build_conv_network, build_mlp
from .neuron import DetuningSpec, NeuronParams, activation, activation_derivative

__all__ = [
    "relative_error",
    "network_grad_max_error",
    "activation_grad_max_error",
    "run_suite",
]


def relative_error(a, b, floor: float):
    """|a - b| over max(|a|, |b|, floor).

    The floor keeps the comparison well-posed where both values are tiny
    (near smooth extrema the true derivative passes through zero and a
    pure ratio would amplify harmless finite-difference noise).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def network_grad_max_error(net: Network, x, labels, h: float = 1e-5, floor: float = 1e-3) -> float:
    """Max relative error between backward() and finite differences, all weights."""
    trace = net.forward(x, freeze_masks=True)
    analytic = net.weight_grads(net.backward(trace, labels, reduction="mean"))
    worst = 0.0
    for w, grad in zip(net.weights(), analytic):
        flat = w.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = net.loss(x, labels, freeze_masks=True)
            flat[idx] = orig - h
            down = net.loss(x, labels, freeze_masks=True)
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            err = float(relative_error(grad.reshape(-1)[idx], fd, floor))
            worst = max(worst, err)
    return worst


def _kink_distance(g, delta, t, z) -> float:
    # distance in z to the nearest kink: z = 0 or t * Omega(z) integer
    d = abs(z)
    if t > 0:
        omega_max = float(np.hypot(g * (abs(z) + 1.0), delta))
        for m in range(int(t * omega_max) + 2):
            target = m / t
            if target < abs(delta):
                continue
            zm = np.sqrt(target**2 - delta**2) / g
            d = min(d, abs(abs(z) - zm))
    return d


def activation_grad_max_error(
    n_points: int = 10_000,
    seed: int = 0,
    h: float = 1e-6,
    exclusion: float = 1e-4,
    floor: float = 1e-2,
) -> float:
    """Max relative error of the activation derivative vs central differences.

    Random (g, delta, t, z) draws, skipping points within ``exclusion``
    of a kink.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    while checked < n_points:
        g = rng.uniform(0.2, 2.0)
        delta = rng.uniform(-2.5, 2.5)
        t = rng.uniform(0.05, 4.0)
        z = rng.uniform(-3.0, 3.0)
        if _kink_distance(g, delta, t, z) <= exclusion:
            continue
        p = NeuronParams(g=g, delta=delta, t_abs=t)
        fd = (activation(p, z + h) - activation(p, z - h)) / (2.0 * h)
        err = float(relative_error(activation_derivative(p, z), fd, floor))
        worst = max(worst, err)
        checked += 1
    return worst


def _random_small_networks(seed: int):
    """A mix of dense and conv/pool architectures small enough for full FD."""
    detunings = [
        DetuningSpec("zero"),
        DetuningSpec("uniform", 1.0),
        DetuningSpec("fixed", 0.5),
        DetuningSpec("uniform", 0.5),
        DetuningSpec("zero"),
    ]
    nets = []
    for i, det in enumerate(detunings[:3]):
        nets.append(
            (
                build_mlp(6, (5, 4), 3, t_abs=(0.8, 1.2), detuning=det, seed=seed + i),
                (6,),
            )
        )
    for i, det in enumerate(detunings[3:], start=3):
        nets.append(
            (
                build_conv_network(
                    (6, 6, 2), 2, (5,), 3, t_abs=1.0, kernel=3, detuning=det, seed=seed + i
                ),
                (6, 6, 2),
            )
        )
    return nets


def run_suite(seed: int = 0, n_activation_points: int = 10_000) -> dict:
    """Run the full gradient certification; returns the max errors found."""
    rng = np.random.default_rng(seed)
    worst_net = 0.0
    for net, in_shape in _random_small_networks(seed):
        x = rng.uniform(0.0, 1.0, (4,) + in_shape)
        labels = rng.integers(0, net.n_classes, 4)
        worst_net = max(worst_net, network_grad_max_error(net, x, labels))
    worst_act = activation_grad_max_error(n_activation_points, seed=seed)
    return {
        "network_max_rel_error": worst_net,
        "activation_max_rel_error": worst_act,
        "networks_checked": 5,
        "activation_points": n_activation_points,
    }
