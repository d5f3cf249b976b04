import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlps import neural_surface as ns
from nlps.errors import ShapeMismatchError


def single_neuron(omega0=1.0):
    """z = sin(u) with one sine unit and an identity head."""
    arch = ns.ArchitectureSpec(hidden_layers=1, width=1, omega0=omega0)
    return ns.ParameterVector.from_layers(
        arch, [(np.array([[1.0, 0.0]]), np.zeros(1)), (np.array([[1.0]]), np.zeros(1))]
    )


def zero_net(bias, hidden_layers=2, width=8):
    arch = ns.ArchitectureSpec(hidden_layers=hidden_layers, width=width)
    p = ns.ParameterVector(arch)
    p.flat[-1] = bias
    return p


def fd_gradient(params, pts, h):
    out = np.empty_like(pts)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        out[:, k] = (ns.forward(params, pts + e) - ns.forward(params, pts - e)) / (2 * h)
    return out


class TestArchitecture:
    def test_defaults(self):
        a = ns.ArchitectureSpec()
        assert (a.hidden_layers, a.width, a.omega0) == (5, 256, 30.0)
        assert a.n_params == (2 * 256 + 256) + 4 * (256 * 256 + 256) + (256 + 1)

    @pytest.mark.parametrize("kw", [{"hidden_layers": 0}, {"width": 0}, {"omega0": 0.0},
                                    {"omega0": -1.0}, {"input_dim": 3}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            ns.ArchitectureSpec(**kw)

    def test_dict_round_trip(self):
        a = ns.ArchitectureSpec(3, 17, 12.5)
        assert ns.ArchitectureSpec.from_dict(a.to_dict()) == a


class TestParameterVector:
    def test_layers_are_views(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 4), 1.0, 0)
        W, b = p.layers()[0]
        W[0, 0] = 123.0
        assert p.flat[0] == 123.0

    def test_layout_weights_before_biases(self):
        arch = ns.ArchitectureSpec(1, 3)
        flat = np.arange(arch.n_params, dtype=float)
        (W0, b0), (W1, b1) = ns.ParameterVector(arch, flat).layers()
        np.testing.assert_array_equal(W0.ravel(), np.arange(6))
        np.testing.assert_array_equal(b0, [6, 7, 8])
        np.testing.assert_array_equal(W1.ravel(), [9, 10, 11])
        np.testing.assert_array_equal(b1, [12])

    def test_flatten_unflatten_identity(self):
        p = ns.init_params(ns.ArchitectureSpec(3, 5), 2.0, 4)
        q = ns.ParameterVector.from_layers(p.arch, p.unflatten())
        np.testing.assert_array_equal(p.flat, q.flat)

    def test_wrong_length(self):
        with pytest.raises(ShapeMismatchError):
            ns.ParameterVector(ns.ArchitectureSpec(1, 2), np.zeros(3))

    def test_binary_round_trip(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 6, 20.0), 2.5, 9)
        blob = p.to_bytes()
        assert blob[:8] == b"NLPSPARM"
        q = ns.ParameterVector.from_bytes(blob)
        assert q.arch == p.arch and q.seed == 9
        np.testing.assert_array_equal(p.flat, q.flat)

    def test_binary_rejects_garbage(self):
        p = ns.init_params(ns.ArchitectureSpec(1, 2), 1.0, 0)
        with pytest.raises(ShapeMismatchError):
            ns.ParameterVector.from_bytes(b"XXXXXXXX" + p.to_bytes()[8:])
        with pytest.raises(ShapeMismatchError):
            ns.ParameterVector.from_bytes(p.to_bytes()[:-8])

    def test_json_dump_round_trip(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 3), 1.5, 2)
        q = ns.ParameterVector.from_json(p.to_json())
        np.testing.assert_allclose(q.flat, p.flat, rtol=1e-15)


class TestInit:
    def test_deterministic(self):
        a = ns.ArchitectureSpec(3, 16)
        np.testing.assert_array_equal(ns.init_params(a, 2.5, 7).flat, ns.init_params(a, 2.5, 7).flat)
        assert not np.array_equal(ns.init_params(a, 2.5, 7).flat, ns.init_params(a, 2.5, 8).flat)

    def test_bounds_and_output_bias(self):
        a = ns.ArchitectureSpec(3, 64)
        layers = ns.init_params(a, 2.5, 0).layers()
        assert np.abs(layers[0][0]).max() <= 0.5
        bound = np.sqrt(6 / 64) / 30
        for W, _ in layers[1:]:
            assert np.abs(W).max() <= bound
        assert layers[-1][1][0] == 2.5

    def test_zero_weights_give_constant_depth(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 2.5, 0)
        p.flat[:-1] = 0.0
        pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
        np.testing.assert_array_equal(ns.forward(p, pts), 2.5)

    def test_initial_surface_near_offset(self):
        # The default network on a 512 x 512 grid stays within half a meter of z0.
        p = ns.init_params(ns.ArchitectureSpec(), 2.5, 0)
        g = np.linspace(-1, 1, 512)
        pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        z = ns.forward_with_tape(p, pts, order=0, dtype=np.float32)[0].z
        assert abs(z.mean() - 2.5) < 0.5


class TestForward:
    def test_single_neuron_value(self):
        assert ns.forward(single_neuron(), np.array([0.5, 0.0])) == pytest.approx(np.sin(0.5), abs=1e-15)
        assert np.sin(0.5) == pytest.approx(0.4794, abs=1e-4)

    def test_single_neuron_gradient(self):
        g = ns.spatial_gradient(single_neuron(), np.array([0.5, 0.0]))
        np.testing.assert_allclose(g, [np.cos(0.5), 0.0], atol=1e-15)
        assert g[0] == pytest.approx(0.8776, abs=1e-4)

    def test_zero_net_gradient_is_zero(self):
        pts = np.random.default_rng(1).uniform(-1, 1, (10, 2))
        np.testing.assert_array_equal(ns.spatial_gradient(zero_net(1.0), pts), 0.0)

    def test_pure(self):
        p = ns.init_params(ns.ArchitectureSpec(3, 32), 3.0, 1)
        pts = np.random.default_rng(2).uniform(-1, 1, (100, 2))
        np.testing.assert_array_equal(ns.forward(p, pts), ns.forward(p, pts))

    def test_bad_shape(self):
        with pytest.raises(ShapeMismatchError):
            ns.forward(single_neuron(), np.zeros((4, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 10_000))
    def test_gradient_matches_fd(self, u, v, seed):
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 1.0, seed)
        pt = np.array([[u, v]])
        np.testing.assert_allclose(ns.spatial_gradient(p, pt), fd_gradient(p, pt, 1e-6),
                                   rtol=1e-5, atol=1e-7)


@pytest.fixture(scope="module")
def setup():
    p = ns.init_params(ns.ArchitectureSpec(), 3.0, 0)
    pts = np.random.default_rng(5).uniform(-0.9, 0.9, (200, 2))
    return p, pts, ns.spatial_gradient(p, pts)


class TestExactDerivative:
    def test_error_decays_with_step(self, setup):
        p, pts, g = setup
        errs = [np.abs(fd_gradient(p, pts, h) - g).max() / np.abs(g).max() for h in (1e-3, 1e-4, 1e-5)]
        assert errs[1] < 1e-3
        # Truncation error of central differences is O(h^2).
        assert errs[0] / errs[1] > 10
        assert errs[2] < errs[1]


class TestTape:
    def test_matches_standalone(self):
        p = ns.init_params(ns.ArchitectureSpec(3, 16), 2.0, 3)
        pts = np.random.default_rng(0).uniform(-1, 1, (40, 2))
        ev, tape = ns.forward_with_tape(p, pts)
        np.testing.assert_array_equal(ev.z, ns.forward(p, pts))
        np.testing.assert_array_equal(ev.grad_norm, ns.spatial_gradient(p, pts))
        np.testing.assert_array_equal(ns.replay(tape), ev.z)

    def test_order0_values_identical(self):
        p = ns.init_params(ns.ArchitectureSpec(3, 16), 2.0, 3)
        pts = np.random.default_rng(0).uniform(-1, 1, (40, 2))
        np.testing.assert_array_equal(ns.forward_with_tape(p, pts, order=0)[0].z,
                                      ns.forward_with_tape(p, pts, order=1)[0].z)

    def test_memory_linear_in_width_and_depth(self):
        pts = np.zeros((64, 2))

        def nbytes(hl, w):
            return ns.forward_with_tape(ns.init_params(ns.ArchitectureSpec(hl, w), 1.0, 0), pts)[1].nbytes

        sizes = [nbytes(2, w) for w in (8, 16, 32)]
        assert sizes[1] - sizes[0] == pytest.approx((sizes[2] - sizes[1]) / 2)
        deep = [nbytes(hl, 16) for hl in (1, 2, 3)]
        assert deep[1] - deep[0] == deep[2] - deep[1]

    def test_float32_close_to_float64(self):
        p = ns.init_params(ns.ArchitectureSpec(3, 32), 3.0, 0)
        pts = np.random.default_rng(0).uniform(-1, 1, (100, 2))
        e64 = ns.forward_with_tape(p, pts)[0]
        e32 = ns.forward_with_tape(p, pts, dtype=np.float32)[0]
        np.testing.assert_allclose(e32.z, e64.z, atol=1e-5)
        np.testing.assert_allclose(e32.grad_norm, e64.grad_norm, atol=1e-3)


class TestBackward:
    def test_bias_only_path(self):
        p = zero_net(2.0)
        _, tape = ns.forward_with_tape(p, np.zeros((1, 2)))
        g = ns.backward(tape, np.ones(1), np.zeros((1, 2)))
        expect = np.zeros(len(p))
        expect[-1] = 1.0
        np.testing.assert_array_equal(g, expect)

    def test_matches_parameter_fd(self):
        rng = np.random.default_rng(0)
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 1.0, 1)
        pts = rng.uniform(-1, 1, (5, 2))
        a, c = rng.normal(size=5), rng.normal(size=(5, 2))

        def objective(flat):
            q = p.with_flat(flat)
            return a @ ns.forward(q, pts) + np.sum(c * ns.spatial_gradient(q, pts))

        _, tape = ns.forward_with_tape(p, pts)
        g = ns.backward(tape, a, c)
        fd = np.empty(len(p))
        h = 1e-5
        for i in range(len(p)):
            e = np.zeros(len(p))
            e[i] = h
            fd[i] = (objective(p.flat + e) - objective(p.flat - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4

    def test_linearity(self):
        rng = np.random.default_rng(3)
        p = ns.init_params(ns.ArchitectureSpec(3, 16), 2.0, 0)
        pts = rng.uniform(-1, 1, (20, 2))
        _, tape = ns.forward_with_tape(p, pts)
        a, b = rng.normal(size=20), rng.normal(size=20)
        v, w = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
        lhs = ns.backward(tape, a, v) + ns.backward(tape, b, w)
        rhs = ns.backward(tape, a + b, v + w)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())

    def test_batch_is_sum_of_pixels(self):
        rng = np.random.default_rng(4)
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 2.0, 0)
        pts = rng.uniform(-1, 1, (3, 2))
        a, v = rng.normal(size=3), rng.normal(size=(3, 2))
        total = ns.backward(ns.forward_with_tape(p, pts)[1], a, v)
        parts = sum(ns.backward(ns.forward_with_tape(p, pts[i:i + 1])[1], a[i:i + 1], v[i:i + 1])
                    for i in range(3))
        np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-14)

    def test_shape_checks(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 2.0, 0)
        _, tape = ns.forward_with_tape(p, np.zeros((4, 2)))
        with pytest.raises(ShapeMismatchError):
            ns.backward(tape, np.ones(3))
        with pytest.raises(ShapeMismatchError):
            ns.backward(tape, np.ones(4), np.ones((4, 3)))
        other = ns.init_params(ns.ArchitectureSpec(2, 9), 2.0, 0)
        with pytest.raises(ShapeMismatchError):
            ns.backward(tape, np.ones(4), params=other)

    def test_order0_tape_rejects_gradient_sensitivity(self):
        p = ns.init_params(ns.ArchitectureSpec(2, 8), 2.0, 0)
        _, tape = ns.forward_with_tape(p, np.zeros((4, 2)), order=0)
        ns.backward(tape, np.ones(4))
        with pytest.raises(ShapeMismatchError):
            ns.backward(tape, np.ones(4), np.ones((4, 2)))
