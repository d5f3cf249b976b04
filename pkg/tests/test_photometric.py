import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlps import neural_surface as ns
from nlps import photometric as ph
from nlps import synth
from nlps.errors import (
    DegenerateGeometryError,
    EmptyProblemError,
    ShapeMismatchError,
    UndefinedAlbedoError,
)
from nlps.geometry import CameraModel, chain_scale, pixel_grid


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def tiny_problem(seed=0, detach=False):
    """4 x 4 image, 4 lights, a width-8 network away from its data."""
    cam = CameraModel(8.0, 4, 4)
    lights = synth.make_grid_rig(2, 2, extent=1.0)
    stack, _ = synth.render(synth.sphere_cap(albedo={"kind": "smooth", "base": 0.8,
                                                     "amplitude": 0.1}), lights, cam)
    params = ns.init_params(ns.ArchitectureSpec(2, 8), 3.0, seed)
    return stack, lights, cam, params


def fd_param_grad(fun, flat, h=1e-6):
    g = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        g[i] = (fun(flat + e) - fun(flat - e)) / (2 * h)
    return g


class TestPointLight:
    def test_validation(self):
        with pytest.raises(ValueError):
            ph.PointLight((0, 0, 0), phi0=0.0)
        with pytest.raises(ValueError):
            ph.PointLight((0, 0, 0), mu=-1.0)
        with pytest.raises(ValueError):
            ph.PointLight((0, 0, 0), omega=(0, 0, 2))

    def test_dict_round_trip(self):
        l = ph.PointLight((0.1, -0.2, 0.0), 1.5, 0.574, tuple(unit([0.1, 0, 1])))
        d = l.to_dict()
        assert set(d) == {"position_m", "phi0", "mu", "omega"}
        assert ph.PointLight.from_dict(d) == l


class TestLightDirection:
    def test_examples(self):
        np.testing.assert_array_equal(ph.light_direction([0, 0, 0], [0, 0, 2]), [0, 0, -1])
        np.testing.assert_array_equal(ph.light_direction([1, 0, 2], [0, 0, 2]), [1, 0, 0])

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            ph.light_direction([1, 2, 3], [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
    def test_unit_length(self, c):
        q, x = np.array(c[:3]), np.array(c[3:])
        if np.linalg.norm(q - x) < 1e-6:
            return
        assert np.linalg.norm(ph.light_direction(q, x)) == pytest.approx(1.0, abs=1e-12)


class TestRadiantIntensity:
    def test_isotropic(self):
        light = ph.PointLight((0, 0, 0), phi0=1.0, mu=0.0)
        for l in ([0, 0, -1], [0, 0, 1], unit([1, 2, 3])):
            assert ph.radiant_intensity(np.array(l), light) == 1.0

    def test_on_axis(self):
        light = ph.PointLight((0, 0, 0), phi0=1.0, mu=0.574)
        assert ph.radiant_intensity(np.array([0, 0, -1.0]), light) == pytest.approx(1.0)

    def test_half_angle(self):
        # -l . omega = 0.5 with omega = +Z
        l = np.array([np.sqrt(0.75), 0.0, -0.5])
        light = ph.PointLight((0, 0, 0), phi0=3.0, mu=2.0)
        assert ph.radiant_intensity(l, light) == pytest.approx(0.75, abs=1e-15)

    def test_behind_emitter(self):
        light = ph.PointLight((0, 0, 0), phi0=3.0, mu=2.0)
        assert ph.radiant_intensity(np.array([0, 0, 1.0]), light) == 0.0


class TestShading:
    cam = CameraModel(100.0, 9, 9)

    def test_aligned_plane(self):
        s, dz, dg = ph.shading([0, 0], ph.PointLight((0, 0, 0)), 2.0, [0, 0], self.cam)
        assert s == pytest.approx(0.25, abs=1e-15)

    def test_inverse_square(self):
        s, _, _ = ph.shading([0, 0], ph.PointLight((0, 0, 0)), 4.0, [0, 0], self.cam)
        assert s == pytest.approx(0.0625, abs=1e-15)

    def test_attached_shadow(self):
        # light far to the side behind a steep slope
        light = ph.PointLight((-5.0, 0, 3.0))
        s, dz, dg = ph.shading([0, 0], light, 3.0, [0.05, 0.0], self.cam)
        assert s == 0.0 and dz == 0.0 and np.all(dg == 0.0)

    def test_non_negative_and_clamp_consistent(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(-4, 4, (500, 2))
        z = rng.uniform(1, 4, 500)
        g = rng.normal(0, 0.05, (500, 2))
        sv = ph.shading_stack(p, z, g, 100.0, synth.make_grid_rig(3, 3, extent=2.0))
        assert np.all(sv.s >= 0)
        dark = sv.s == 0
        assert dark.any()
        assert np.all(sv.ds_dz[dark] == 0) and np.all(sv.ds_dgrad[dark] == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 0.5, 2.0]))
    def test_partials_match_fd(self, seed, mu):
        rng = np.random.default_rng(seed)
        p = rng.uniform(-30, 30, (20, 2))
        z = rng.uniform(2, 4, 20)
        g = rng.normal(0, 0.01, (20, 2))
        lights = [ph.PointLight(tuple(rng.uniform(-1, 1, 3) * [1, 1, 0]), 1.3, mu,
                                tuple(unit([0.1, 0.0, 1.0]))) for _ in range(4)]
        f, h = 88.9, 1e-6
        sv = ph.shading_stack(p, z, g, f, lights)
        keep = np.abs(ph.shading_stack(p, z, g, f, lights).s) > 1e-6  # away from the clamp
        fz = (ph.shading_stack(p, z + h, g, f, lights).s - ph.shading_stack(p, z - h, g, f, lights).s) / (2 * h)
        np.testing.assert_allclose(sv.ds_dz[keep], fz[keep], rtol=1e-5, atol=1e-9)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fg = (ph.shading_stack(p, z, g + e, f, lights).s
                  - ph.shading_stack(p, z, g - e, f, lights).s) / (2 * h)
            np.testing.assert_allclose(sv.ds_dgrad[..., k][keep], fg[keep], rtol=1e-5, atol=1e-7)

    def test_matches_single_light_function(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(-4, 4, (10, 2))
        z = rng.uniform(2, 3, 10)
        g = rng.normal(0, 0.01, (10, 2))
        lights = synth.make_grid_rig(2, 2)
        sv = ph.shading_stack(p, z, g, self.cam.f_pixels, lights)
        for i, light in enumerate(lights):
            s, dz, dg = ph.shading(p, light, z, g, self.cam)
            np.testing.assert_array_equal(s, sv.s[:, i])
            np.testing.assert_array_equal(dg, sv.ds_dgrad[:, i])


class TestShadowMask:
    def test_constant_image_untouched(self):
        st_ = ph.shadow_mask(ph.ObservationStack(np.full((4, 4, 1), 10.0)))
        assert st_.mask.all()

    def test_below_threshold_masked(self):
        img = np.full((5, 5, 1), 100.0)
        img[0, 0] = 4.0
        img[0, 1] = 5.0  # exactly at the threshold is kept
        m = ph.shadow_mask(ph.ObservationStack(img)).mask[..., 0]
        assert not m[0, 0] and m[0, 1] and m.sum() == 24

    def test_monotone(self):
        img = np.full((4, 4, 2), 50.0)
        mask = np.ones_like(img, dtype=bool)
        mask[1, 1, 0] = False
        out = ph.shadow_mask(ph.ObservationStack(img, mask)).mask
        assert not out[1, 1, 0]
        assert np.all(out <= mask)

    def test_all_zero_image(self):
        img = np.ones((3, 3, 2))
        img[..., 1] = 0.0
        with pytest.warns(UserWarning):
            out = ph.shadow_mask(ph.ObservationStack(img)).mask
        assert out[..., 0].all() and not out[..., 1].any()

    def test_median_over_valid_pixels_only(self):
        img = np.full((2, 2, 1), 100.0)
        img[0, 0] = 0.0
        mask = np.ones_like(img, dtype=bool)
        mask[0, 0] = False
        img[1, 1] = 4.9
        out = ph.shadow_mask(ph.ObservationStack(img, mask)).mask[..., 0]
        assert out.tolist() == [[False, True], [True, False]]


class TestObservationStack:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ph.ObservationStack(-np.ones((2, 2, 1)))

    def test_2d_mask_broadcast(self):
        m = np.array([[True, False], [True, True]])
        st_ = ph.ObservationStack(np.ones((2, 2, 3)), m)
        assert st_.mask.shape == (2, 2, 3) and not st_.mask[0, 1].any()

    def test_shape(self):
        with pytest.raises(ShapeMismatchError):
            ph.ObservationStack(np.ones((2, 2)))


class TestAlbedo:
    def test_proportional(self):
        s = np.array([0.3, 0.1, 0.7])
        assert ph.albedo_lsq(2 * s, s) == pytest.approx(2.0, abs=1e-15)

    def test_half(self):
        assert ph.albedo_lsq([1.0, 0.0], [1.0, 1.0]) == 0.5

    def test_undefined(self):
        with pytest.raises(UndefinedAlbedoError):
            ph.albedo_lsq([1.0, 2.0], [0.0, 0.0])
        with pytest.raises(UndefinedAlbedoError):
            ph.albedo_lsq([1.0, 2.0], [0.0, 1.0], [True, False])

    def test_brute_force_scan(self):
        rho = np.linspace(0, 10, 100_001)
        m, s = np.array([1.0, 0.0]), np.array([1.0, 1.0])
        cost = ((m[:, None] - rho[None] * s[:, None]) ** 2).sum(0)
        assert ph.albedo_lsq(m, s) == pytest.approx(rho[cost.argmin()], abs=1e-4)

    def test_optimality(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, s = rng.uniform(0, 1, 6), rng.uniform(0, 1, 6)
            r = ph.albedo_lsq(m, s)
            best = np.sum((m - r * s) ** 2)
            for probe in rng.uniform(0, 5, 100):
                assert best <= np.sum((m - probe * s) ** 2) + 1e-15


class TestLoss:
    def test_self_consistency(self):
        cam = CameraModel(40.0, 8, 8)
        params = ns.init_params(ns.ArchitectureSpec(2, 8), 3.0, 2)
        lights = synth.make_grid_rig(3, 3)
        stack, _ = synth.render(synth.neural(params), lights, cam)
        L, _ = ph.reconstruction_loss(stack, params, lights, cam)
        assert L < 1e-12

    def test_homogeneous_in_intensity(self):
        stack, lights, cam, params = tiny_problem()
        L1, _ = ph.reconstruction_loss(stack, params, lights, cam)
        L2, _ = ph.reconstruction_loss(ph.ObservationStack(2 * stack.images), params, lights, cam)
        assert L2 == pytest.approx(2 * L1, rel=1e-12)

    @pytest.mark.parametrize("detach", [False, True])
    def test_gradient_matches_fd(self, detach):
        stack, lights, cam, params = tiny_problem(1)
        L, g = ph.reconstruction_loss(stack, params, lights, cam, detach_albedo=detach)
        p = pixel_grid(cam).reshape(-1, 2)
        cs = chain_scale(cam)
        m = stack.images.reshape(16, -1)

        def shading_at(flat):
            q = params.with_flat(flat)
            z = ns.forward(q, p * cs)
            return ph.shading_stack(p, z, ns.spatial_gradient(q, p * cs) * cs, cam.f_pixels, lights)

        sv0 = shading_at(params.flat)
        rho0 = np.sum(m * sv0.s, 1) / np.sum(sv0.s ** 2, 1)
        # kink check: residuals and clamp arguments stay clear of zero
        assert np.abs(m - rho0[:, None] * sv0.s).min() > 1e-6
        assert sv0.lit.all() or np.abs(sv0.s[sv0.s > 0]).min() > 1e-6

        def loss(flat):
            sv = shading_at(flat)
            rho = rho0 if detach else np.sum(m * sv.s, 1) / np.sum(sv.s ** 2, 1)
            return np.abs(m - rho[:, None] * sv.s).mean()

        assert L == pytest.approx(loss(params.flat), rel=1e-12)
        fd = fd_param_grad(loss, params.flat)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4

    def test_l2_fixed_albedo_equals_energy(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(-4, 4, (30, 2))
        z = rng.uniform(2, 3, 30)
        g = rng.normal(0, 0.01, (30, 2))
        lights = synth.make_grid_rig(2, 3)
        cam = CameraModel(50.0, 9, 9)
        sv = ph.shading_stack(p, z, g, cam.f_pixels, lights)
        m = rng.uniform(0, 0.2, sv.s.shape)
        rho = rng.uniform(0.2, 1.0, 30)
        pl = ph.loss_from_shading(m, np.ones_like(m, bool), sv, norm="l2", albedo=rho)
        energy = 0.0
        for i in range(30):
            for j, light in enumerate(lights):
                s, _, _ = ph.shading(p[i], light, z[i], g[i], cam)
                energy += (m[i, j] - rho[i] * s) ** 2
        assert pl.total == pytest.approx(energy, rel=1e-12)

    def test_masked_pixels_contribute_nothing(self):
        stack, lights, cam, params = tiny_problem(2)
        mask = np.ones(stack.images.shape, bool)
        mask[1, 2, :] = False
        mask[3, 0, 1] = False
        a = ph.ObservationStack(stack.images, mask)
        imgs = stack.images.copy()
        imgs[~mask] = 123.0
        b = ph.ObservationStack(imgs, mask)
        La, ga = ph.reconstruction_loss(a, params, lights, cam)
        Lb, gb = ph.reconstruction_loss(b, params, lights, cam)
        assert La == Lb
        np.testing.assert_array_equal(ga, gb)

    def test_undefined_albedo_pixel_dropped(self):
        sv = ph.ShadingVector(np.array([[0.0, 0.0], [0.5, 0.2]]), np.zeros((2, 2)),
                              np.zeros((2, 2, 2)))
        m = np.array([[0.3, 0.1], [1.0, 0.4]])
        pl = ph.loss_from_shading(m, np.ones((2, 2), bool), sv)
        assert pl.count == 2 and not pl.defined[0]

    def test_empty_problem(self):
        stack, lights, cam, params = tiny_problem()
        empty = ph.ObservationStack(stack.images, np.zeros(stack.images.shape, bool))
        with pytest.raises(EmptyProblemError):
            ph.reconstruction_loss(empty, params, lights, cam)

    def test_light_count_mismatch(self):
        stack, lights, cam, params = tiny_problem()
        with pytest.raises(ShapeMismatchError):
            ph.reconstruction_loss(stack, params, lights[:3], cam)

    def test_l1_subgradient_zero_at_zero_residual(self):
        sv = ph.ShadingVector(np.array([[0.5, 0.5]]), np.ones((1, 2)), np.ones((1, 2, 2)))
        pl = ph.loss_from_shading(np.array([[0.5, 0.5]]), np.ones((1, 2), bool), sv)
        assert pl.total == 0.0
        np.testing.assert_array_equal(pl.zbar, 0.0)
        np.testing.assert_array_equal(pl.gbar, 0.0)

    def test_float32_network_close(self):
        stack, lights, cam, params = tiny_problem(3)
        L64, g64 = ph.reconstruction_loss(stack, params, lights, cam)
        L32, g32 = ph.reconstruction_loss(stack, params, lights, cam, dtype=np.float32)
        assert L32 == pytest.approx(L64, rel=1e-4)
        assert np.abs(g32 - g64).max() < 1e-3 * np.abs(g64).max()

    def test_pixel_subset(self):
        stack, lights, cam, params = tiny_problem(4)
        L_all, _ = ph.reconstruction_loss(stack, params, lights, cam, pixels=np.arange(16))
        L, _ = ph.reconstruction_loss(stack, params, lights, cam)
        assert L_all == L
