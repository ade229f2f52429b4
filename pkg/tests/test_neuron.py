import numpy as np
import pytest

from qonn.neuron import (
    CavityArray,
    DetuningSpec,
    NeuronParams,
    activation,
    activation_derivative,
    inversion,
    rabi_frequency,
    sample_detunings,
)

# High-precision oracle values computed independently with mpmath (40 digits)
RABI_G2_D1_Z05 = 1.4142135623730951
INV_G1_D1_T1_Z1 = -0.07089190716559115
ACT_G1_D0_T02_Z1 = 0.5877852522924731
ACT_G1_D1_T1_Z1 = 0.6815820173810371
DACT_G1_D0_T1_Z025 = 2.221441469079183  # pi * cos(pi/4)
DACT_G1_D1_T1_Z1 = 0.7590239219586928


def central_diff(params, z, h=1e-6):
    return (activation(params, z + h) - activation(params, z - h)) / (2 * h)


def rel_err(a, b, floor=1e-2):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestParams:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            NeuronParams(g=0.0)
        with pytest.raises(ValueError):
            NeuronParams(g=-1.0)
        with pytest.raises(ValueError):
            NeuronParams(t_abs=-0.1)
        with pytest.raises(ValueError):
            NeuronParams(delta=np.inf)

    def test_negative_detuning_allowed(self):
        p = NeuronParams(delta=-2.0)
        assert rabi_frequency(p, 0.0) == 2.0


class TestRabiFrequency:
    def test_zero_detuning_reduces_to_gz(self):
        assert rabi_frequency(NeuronParams(g=1.0, delta=0.0), 2.0) == 2.0

    def test_three_four_five(self):
        assert rabi_frequency(NeuronParams(g=1.0, delta=3.0), 4.0) == pytest.approx(5.0, abs=1e-15)

    def test_oracle_value(self):
        got = rabi_frequency(NeuronParams(g=2.0, delta=1.0), 0.5)
        assert got == pytest.approx(RABI_G2_D1_Z05, abs=1e-15)

    def test_zero_drive_gives_abs_delta(self):
        assert rabi_frequency(NeuronParams(g=1.0, delta=-3.0), 0.0) == 3.0


class TestInversion:
    def test_ground_state_at_t_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = NeuronParams(g=rng.uniform(0.1, 3), delta=rng.uniform(-3, 3), t_abs=0.0)
            z = rng.uniform(-3, 3)
            if rabi_frequency(p, z) > 0:
                assert inversion(p, z) == pytest.approx(-1.0, abs=1e-12)

    def test_full_inversion_on_resonance(self):
        # 2 pi t Omega = pi -> cos = -1 -> full excitation
        assert inversion(NeuronParams(g=1.0, delta=0.0, t_abs=0.5), 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_oracle_value(self):
        got = inversion(NeuronParams(g=1.0, delta=1.0, t_abs=1.0), 1.0)
        assert got == pytest.approx(INV_G1_D1_T1_Z1, abs=1e-14)

    def test_degenerate_limit_is_ground_state(self):
        for t in (0.0, 0.5, 1.0, 4.0):
            assert inversion(NeuronParams(g=1.0, delta=0.0, t_abs=t), 0.0) == -1.0

    def test_range(self):
        rng = np.random.default_rng(11)
        p_draws = rng.uniform(0.1, 3, size=(1000, 4))
        for g, d, t, z in zip(p_draws[:, 0], p_draws[:, 1] * 2 - 3, p_draws[:, 2], p_draws[:, 3] * 2 - 3):
            v = inversion(NeuronParams(g=g, delta=d, t_abs=t), z)
            assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


class TestActivation:
    def test_zero_input(self):
        assert activation(NeuronParams(g=1.0, delta=0.0, t_abs=1.0), 0.0) == 0.0

    def test_peak_on_resonance(self):
        assert activation(NeuronParams(g=1.0, delta=0.0, t_abs=1.0), 0.5) == pytest.approx(1.0, abs=1e-15)

    def test_oracle_values(self):
        got = activation(NeuronParams(g=1.0, delta=0.0, t_abs=0.2), 1.0)
        assert got == pytest.approx(ACT_G1_D0_T02_Z1, abs=1e-15)
        got = activation(NeuronParams(g=1.0, delta=1.0, t_abs=1.0), 1.0)
        assert got == pytest.approx(ACT_G1_D1_T1_Z1, abs=1e-15)

    def test_degenerate_limit(self):
        for t in (0.0, 1.0, 4.0):
            assert activation(NeuronParams(g=1.0, delta=0.0, t_abs=t), 0.0) == 0.0

    def test_vectorized_matches_scalar(self):
        p = NeuronParams(g=1.3, delta=-0.7, t_abs=2.1)
        zs = np.linspace(-2, 2, 17)
        vec = activation(p, zs)
        for z, v in zip(zs, vec):
            assert v == activation(p, float(z))


def random_param_draws(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.2, 2.0, n)
    delta = rng.uniform(-2.5, 2.5, n)
    t = rng.uniform(0.0, 4.0, n)
    z = rng.uniform(-3.0, 3.0, n)
    return g, delta, t, z


class TestPhysicsIdentities:
    N = 10_000

    def test_range_and_evenness(self):
        g, delta, t, z = random_param_draws(self.N, seed=101)
        for gi, di, ti, zi in zip(g[:500], delta[:500], t[:500], z[:500]):
            p = NeuronParams(g=gi, delta=di, t_abs=ti)
            a = activation(p, zi)
            assert 0.0 <= a <= 1.0 + 1e-15
            assert activation(p, -zi) == a  # exact evenness

    def test_range_vectorized(self):
        g, delta, t, z = random_param_draws(self.N, seed=103)
        from qonn.neuron import _activation, _inversion

        a = _activation(g, delta, t, z)
        s = _inversion(g, delta, t, z)
        assert np.all(a >= 0.0) and np.all(a <= 1.0 + 1e-15)
        assert np.all(s >= -1.0 - 1e-12) and np.all(s <= 1.0 + 1e-12)

    def test_emission_intensity_identity(self):
        # a^2 == (inversion + 1) / 2 to 1e-12 over 1e4 random draws
        g, delta, t, z = random_param_draws(self.N, seed=107)
        from qonn.neuron import _activation, _inversion

        a = _activation(g, delta, t, z)
        s = _inversion(g, delta, t, z)
        assert np.max(np.abs(a**2 - (s + 1.0) / 2.0)) < 1e-12

    def test_zero_detuning_reduction(self):
        # with delta = 0 the activation is exactly |sin(pi t g |z|)|
        rng = np.random.default_rng(109)
        g = rng.uniform(0.2, 2.0, self.N)
        t = rng.uniform(0.0, 4.0, self.N)
        z = rng.uniform(-3.0, 3.0, self.N)
        from qonn.neuron import _activation

        a = _activation(g, 0.0, t, z)
        ref = np.abs(np.sin(np.pi * t * g * np.abs(z)))
        assert np.max(np.abs(a - ref)) < 1e-12


def kink_distance(g, delta, t, z):
    """Distance in z from the nearest non-differentiable point of a(z)."""
    d = abs(z)
    if t > 0:
        omega_max = np.hypot(g * (abs(z) + 1.0), delta)
        for m in range(0, int(t * omega_max) + 2):
            target = m / t
            if target < abs(delta):
                continue
            zm = np.sqrt(target**2 - delta**2) / g
            d = min(d, abs(abs(z) - zm))
    return d


class TestActivationDerivative:
    def test_closed_form_branch(self):
        got = activation_derivative(NeuronParams(g=1.0, delta=0.0, t_abs=1.0), 0.25)
        assert got == pytest.approx(DACT_G1_D0_T1_Z025, abs=1e-13)

    def test_subgradient_at_zero(self):
        assert activation_derivative(NeuronParams(g=1.0, delta=0.0, t_abs=1.0), 0.0) == 0.0
        assert activation_derivative(NeuronParams(g=1.0, delta=1.5, t_abs=1.0), 0.0) == 0.0

    def test_subgradient_at_sin_kink(self):
        # g=1, delta=0, t=1, z=1: sin(pi * 1) = 0, a kink of |sin|
        assert activation_derivative(NeuronParams(g=1.0, delta=0.0, t_abs=1.0), 1.0) == 0.0

    def test_oracle_value_detuned(self):
        p = NeuronParams(g=1.0, delta=1.0, t_abs=1.0)
        got = activation_derivative(p, 1.0)
        assert got == pytest.approx(DACT_G1_D1_T1_Z1, abs=1e-13)
        fd = central_diff(p, 1.0)
        assert rel_err(got, fd) < 1e-5

    def test_odd_symmetry(self):
        rng = np.random.default_rng(223)
        for _ in range(200):
            p = NeuronParams(
                g=rng.uniform(0.2, 2), delta=rng.uniform(-2.5, 2.5), t_abs=rng.uniform(0.1, 4)
            )
            z = rng.uniform(0.01, 3)
            assert activation_derivative(p, z) == pytest.approx(
                -activation_derivative(p, -z), abs=1e-14
            )

    def test_finite_difference_sweep(self):
        # 1e4 random points, excluding a 1e-4 neighborhood of kinks,
        # must match central differences (h=1e-6) to rel. error < 1e-5
        rng = np.random.default_rng(227)
        checked = 0
        worst = 0.0
        while checked < 10_000:
            g = rng.uniform(0.2, 2.0)
            delta = rng.uniform(-2.5, 2.5)
            t = rng.uniform(0.05, 4.0)
            z = rng.uniform(-3.0, 3.0)
            if kink_distance(g, delta, t, z) <= 1e-4:
                continue
            p = NeuronParams(g=g, delta=delta, t_abs=t)
            err = rel_err(activation_derivative(p, z), central_diff(p, z))
            worst = max(worst, err)
            checked += 1
        assert worst < 1e-5, f"max relative error {worst:.3e}"


class TestSampleDetunings:
    def test_zero_mode(self):
        spec = DetuningSpec(mode="zero", delta0=7.0)
        assert np.array_equal(sample_detunings(spec, 3, seed=0), np.zeros(3))

    def test_fixed_mode(self):
        spec = DetuningSpec(mode="fixed", delta0=0.5)
        assert np.array_equal(sample_detunings(spec, 2, seed=0), np.array([0.5, 0.5]))

    def test_uniform_mode_statistics(self):
        spec = DetuningSpec(mode="uniform", delta0=1.0)
        d = sample_detunings(spec, 100_000, seed=42)
        assert np.all(d >= -2.0) and np.all(d <= 2.0)
        # mean |delta| of uniform[-2, 2] is 1, within 2%
        assert abs(np.mean(np.abs(d)) - 1.0) < 0.02

    def test_uniform_random_alias(self):
        spec = DetuningSpec(mode="uniform-random", delta0=1.0)
        assert spec.mode == "uniform"

    def test_deterministic_given_seed(self):
        spec = DetuningSpec(mode="uniform", delta0=2.0)
        a = sample_detunings(spec, 64, seed=9)
        b = sample_detunings(spec, 64, seed=9)
        assert np.array_equal(a, b)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            DetuningSpec(mode="uniform", delta0=-1.0)
        with pytest.raises(ValueError):
            DetuningSpec(mode="gaussian")
        with pytest.raises(ValueError):
            sample_detunings(DetuningSpec(), 0, seed=0)


class TestCavityArray:
    def test_build_and_activate(self):
        arr = CavityArray.build(4, t_abs=1.0, detuning=DetuningSpec(), seed=0)
        z = np.array([0.0, 0.5, 1.0, 1.5])
        out = arr.activate(z)
        assert out.shape == (4,)
        assert out[0] == 0.0
        assert out[1] == pytest.approx(1.0)

    def test_matches_single_neuron_ops(self):
        rng = np.random.default_rng(31)
        delta = rng.uniform(-1, 1, 8)
        arr = CavityArray(g=1.2, t_abs=0.7, delta=delta)
        z = rng.uniform(-2, 2, 8)
        for i in range(8):
            p = NeuronParams(g=1.2, delta=delta[i], t_abs=0.7)
            assert arr.activate(z)[i] == activation(p, z[i])
            assert arr.derivative(z)[i] == activation_derivative(p, z[i])
            assert arr.inversion(z)[i] == inversion(p, z[i])

    def test_batched_input(self):
        arr = CavityArray.build(5, t_abs=1.0, detuning=DetuningSpec("uniform", 1.0), seed=3)
        z = np.random.default_rng(5).uniform(-1, 1, (7, 5))
        out = arr.activate(z)
        assert out.shape == (7, 5)
        assert np.array_equal(out[2], arr.activate(z[2]))

    def test_length_mismatch(self):
        arr = CavityArray.build(5, t_abs=1.0, detuning=DetuningSpec(), seed=0)
        with pytest.raises(ValueError):
            arr.activate(np.zeros(4))
