"""Cavity-neuron physics.

Each neuron is a two-level atom coupled to a switchable optical cavity.
An incident photon amplitude ``z`` drives the atom for an absorption time
``t_abs``; the atomic excitation undergoes a Rabi oscillation whose
frequency depends on ``z``, and the stored excitation is then re-emitted
as a photon whose amplitude is the neuron's activation value.

All quantities are expressed in simulation units where the atom-photon
coupling strength ``g`` sets the scale (``g = 1`` by default); detunings
and inverse absorption times carry the same unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NeuronParams",
    "DetuningSpec",
    "CavityArray",
    "rabi_frequency",
    "inversion",
    "activation",
    "activation_derivative",
    "sample_detunings",
]


@dataclass(frozen=True)
class NeuronParams:
    """Physical parameters of a single cavity neuron.

    g       atom-photon coupling strength, > 0
    delta   atom-cavity detuning, any finite real
    t_abs   photon absorption time, >= 0 (in 1/g units)
    """

    g: float = 1.0
    delta: float = 0.0
    t_abs: float = 1.0

    def __post_init__(self):
        if not (self.g > 0 and np.isfinite(self.g)):
            raise ValueError(f"coupling strength g must be positive, got {self.g}")
        if not (self.t_abs >= 0 and np.isfinite(self.t_abs)):
            raise ValueError(f"absorption time t_abs must be >= 0, got {self.t_abs}")
        if not np.isfinite(self.delta):
            raise ValueError(f"detuning must be finite, got {self.delta}")


@dataclass(frozen=True)
class DetuningSpec:
    """How per-neuron detunings are assigned at network construction.

    mode:
      "zero"     every neuron resonant (delta = 0)
      "fixed"    every neuron gets delta = delta0
      "uniform"  each neuron draws independently from uniform[-2*delta0, 2*delta0],
                 so the average detuning magnitude is delta0
    """

    mode: str = "zero"
    delta0: float = 0.0

    _MODES = ("zero", "fixed", "uniform")

    def __post_init__(self):
        mode = {"uniform-random": "uniform"}.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if mode not in self._MODES:
            raise ValueError(f"unknown detuning mode {self.mode!r}; expected one of {self._MODES}")
        if not (self.delta0 >= 0 and np.isfinite(self.delta0)):
            raise ValueError(f"delta0 must be a nonnegative real, got {self.delta0}")


def sample_detunings(spec: DetuningSpec, n: int, seed) -> np.ndarray:
    """Draw the per-neuron detunings for a layer of ``n`` cavity neurons.

    The draw happens once, at network construction, and models static
    fabrication disorder: the returned values are held fixed through
    all subsequent training and testing.
    """
    if n < 1:
        raise ValueError(f"neuron count must be >= 1, got {n}")
    if spec.mode == "zero":
        return np.zeros(n)
    if spec.mode == "fixed":
        return np.full(n, float(spec.delta0))
    rng = np.random.default_rng(seed)
    return rng.uniform(-2.0 * spec.delta0, 2.0 * spec.delta0, size=n)


# ---------------------------------------------------------------------------
# Vectorized kernels. These accept any broadcastable mix of scalars and
# arrays; g must be positive and t nonnegative, which the public wrappers
# and CavityArray enforce on construction.
# ---------------------------------------------------------------------------

def _rabi(g, delta, z):
    # hypot is exact for a zero component, so delta=0 reduces to g|z| exactly
    return np.hypot(np.multiply(g, z), delta)


def _inversion(g, delta, t, z):
    omega = _rabi(g, delta, z)
    safe = np.where(omega > 0, omega, 1.0)
    d_frac = np.square(np.divide(delta, safe))
    gz_frac = np.square(np.divide(np.multiply(g, z), safe))
    val = -d_frac - gz_frac * np.cos(2.0 * np.pi * np.multiply(t, omega))
    # omega == 0 means no drive and no detuning: the atom stays in the
    # ground state, the continuous limit of the oscillation
    return np.where(omega > 0, val, -1.0)


def _activation(g, delta, t, z):
    omega = _rabi(g, delta, z)
    safe = np.where(omega > 0, omega, 1.0)
    amp = np.multiply(g, np.abs(z)) / safe
    val = amp * np.abs(np.sin(np.pi * np.multiply(t, omega)))
    return np.where(omega > 0, val, 0.0)


# |sin(pi t Omega)| below this is treated as an exact kink of the |sin|
# factor; the float evaluation of sin at a representable kink (e.g.
# np.sin(np.pi) ~ 1.2e-16) never lands on 0.0 exactly
_SIN_KINK_TOL = 1e-12


def _activation_derivative(g, delta, t, z):
    omega = _rabi(g, delta, z)
    safe = np.where(omega > 0, omega, 1.0)
    phase = np.pi * np.multiply(t, omega)
    sin_p = np.sin(phase)
    cos_p = np.cos(phase)
    # np.sign(0) == 0 implements the symmetric subgradient at the z = 0
    # kink of the |z| factor
    sgn_z = np.sign(z)
    sgn_sin = np.sign(sin_p)
    d_omega = np.multiply(g, g) * np.divide(z, safe)
    term1 = np.multiply(g, sgn_z) / safe * np.abs(sin_p)
    term2 = np.multiply(g, np.abs(z)) * d_omega * (
        np.pi * np.multiply(t, sgn_sin) * cos_p / safe - np.abs(sin_p) / np.square(safe)
    )
    # subgradient 0 at the kinks of the |sin| factor (there the smooth
    # term vanishes with |sin|, so the whole derivative is the subgradient)
    val = np.where(np.abs(sin_p) < _SIN_KINK_TOL, 0.0, term1 + term2)
    return np.where(omega > 0, val, 0.0)


def _scalar_like(value, z):
    if np.ndim(value) == 0 and np.ndim(z) == 0:
        return float(value)
    return value


# ---------------------------------------------------------------------------
# Public single-neuron operations
# ---------------------------------------------------------------------------

def rabi_frequency(params: NeuronParams, z) -> float | np.ndarray:
    """Oscillation frequency Omega = sqrt((g z)^2 + delta^2) of the driven atom."""
    return _scalar_like(_rabi(params.g, params.delta, z), z)


def inversion(params: NeuronParams, z) -> float | np.ndarray:
    """Atomic inversion <sigma_z> after the absorption stage, in [-1, 1].

    -1 is the ground state (the value at t_abs = 0 and the defined limit
    when both drive and detuning vanish), +1 is full excitation.
    """
    return _scalar_like(_inversion(params.g, params.delta, params.t_abs, z), z)


def activation(params: NeuronParams, z) -> float | np.ndarray:
    """Emitted photon amplitude a(z) = (g|z|/Omega) |sin(pi t Omega)|, in [0, 1].

    This is the neuron's nonlinear activation function.  It is even in z,
    vanishes at z = 0, and with zero detuning reduces to |sin(pi t g |z|)|.
    The emitted intensity a^2 equals (inversion + 1) / 2.
    """
    return _scalar_like(_activation(params.g, params.delta, params.t_abs, z), z)


def activation_derivative(params: NeuronParams, z) -> float | np.ndarray:
    """Exact derivative da/dz of the activation function.

    At the non-differentiable kinks (z = 0 and the zeros of
    sin(pi t Omega)) the symmetric subgradient 0 is returned; the kink
    set has measure zero so training is unaffected.
    """
    return _scalar_like(
        _activation_derivative(params.g, params.delta, params.t_abs, z), z
    )


class CavityArray:
    """A layer's worth of cavity neurons sharing g and t_abs.

    The absorption time is a per-layer control (all neurons in a layer are
    driven for the same duration) while the detuning may vary per neuron,
    modeling fabrication disorder.
    """

    def __init__(self, g: float, t_abs: float, delta: np.ndarray):
        if not g > 0:
            raise ValueError(f"coupling strength g must be positive, got {g}")
        if not t_abs >= 0:
            raise ValueError(f"absorption time t_abs must be >= 0, got {t_abs}")
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        if delta.ndim != 1:
            raise ValueError("delta must be a 1-D array of per-neuron detunings")
        if not np.all(np.isfinite(delta)):
            raise ValueError("detunings must be finite")
        self.g = float(g)
        self.t_abs = float(t_abs)
        self.delta = delta

    @classmethod
    def build(cls, n: int, t_abs: float, detuning: DetuningSpec, seed, g: float = 1.0):
        """Construct an array of n neurons, sampling detunings from ``detuning``."""
        return cls(g, t_abs, sample_detunings(detuning, n, seed))

    @property
    def size(self) -> int:
        return self.delta.shape[0]

    def _check(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.size:
            raise ValueError(
                f"incident amplitude vector has {z.shape[-1]} entries, "
                f"cavity array has {self.size} neurons"
            )
        return z

    def activate(self, z: np.ndarray) -> np.ndarray:
        """Elementwise activation; z may be (n,) or batched (..., n)."""
        return _activation(self.g, self.delta, self.t_abs, self._check(z))

    def derivative(self, z: np.ndarray) -> np.ndarray:
        """Elementwise da/dz at the given incident amplitudes."""
        return _activation_derivative(self.g, self.delta, self.t_abs, self._check(z))

    def inversion(self, z: np.ndarray) -> np.ndarray:
        """Elementwise atomic inversion at the given incident amplitudes."""
        return _inversion(self.g, self.delta, self.t_abs, self._check(z))

    def __repr__(self) -> str:
        return f"CavityArray(n={self.size}, g={self.g}, t_abs={self.t_abs})"
