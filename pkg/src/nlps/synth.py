"""Analytic test scenes and an exact Lambertian near-light renderer.

Scene depth is a closed-form function of normalized image coordinates
``(un, vn)`` in ``[-1, 1]``, with a closed-form gradient, so ground-truth
normals come straight from the perspective normal formula.  Only attached
shadows are modelled; there is no cast-shadow ray marching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import neural_surface as ns
from . import photometric as ph
from .geometry import CameraModel, chain_scale, normal_from_depth, pixel_grid
from .maps import SurfaceMaps

SCENE_KINDS = ("plane", "sphere-cap", "sigmoid-stair", "discrete-stair", "sine-relief", "neural")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class AnalyticScene:
    """Depth ``z(un, vn)`` with its gradient per normalized unit, and an albedo field."""

    kind: str
    params: dict
    depth_fn: Callable = field(repr=False)
    grad_fn: Callable = field(repr=False)
    albedo_fn: Callable = field(repr=False)
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.validate:
            self._check()

    def depth(self, pn):
        return self.depth_fn(np.asarray(pn, dtype=np.float64))

    def gradient(self, pn):
        return self.grad_fn(np.asarray(pn, dtype=np.float64))

    def albedo(self, pn):
        return self.albedo_fn(np.asarray(pn, dtype=np.float64))

    def _check(self, n=200, step=1e-6, rtol=1e-4):
        pn = np.random.default_rng(0).uniform(-1, 1, (n, 2))
        z = self.depth(pn)
        if np.any(~(z > 0)):
            raise ValueError(f"{self.kind} scene has non-positive depth")
        if self.kind == "discrete-stair":
            return
        if self.kind == "sigmoid-stair":
            k = self.params["k"]
            ok = np.all(np.abs(k * pn) <= 20, axis=1)
            pn = pn[ok]
            if not len(pn):
                return
        g = self.gradient(pn)
        fd = np.empty_like(g)
        for a in range(2):
            e = np.zeros(2)
            e[a] = step
            fd[:, a] = (self.depth(pn + e) - self.depth(pn - e)) / (2 * step)
        scale = max(np.abs(g).max(), 1e-12)
        if np.max(np.abs(fd - g)) > rtol * scale:
            raise ValueError(f"{self.kind} scene gradient disagrees with its depth")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _albedo_field(spec):
    if spec is None:
        spec = {"kind": "constant", "value": 1.0}
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": float(spec)}
    kind = spec.get("kind", "constant")
    if kind == "constant":
        value = float(spec.get("value", 1.0))
        return spec, lambda pn: np.full(pn.shape[:-1], value)
    if kind == "smooth":
        base = float(spec.get("base", 0.8))
        amp = float(spec.get("amplitude", 0.2))
        if amp >= base:
            raise ValueError("smooth albedo must stay positive")
        return spec, lambda pn: base + amp * np.sin(2.0 * pn[..., 0]) * np.cos(3.0 * pn[..., 1])
    raise ValueError(f"unknown albedo kind {kind!r}")


def plane(depth=3.0, slope=(0.0, 0.0), albedo=None) -> AnalyticScene:
    su, sv = map(float, slope)
    aspec, afn = _albedo_field(albedo)

    def z(pn):
        return depth + su * pn[..., 0] + sv * pn[..., 1]

    def g(pn):
        out = np.empty(pn.shape)
        out[..., 0] = su
        out[..., 1] = sv
        return out

    return AnalyticScene("plane", {"depth": depth, "slope": [su, sv], "albedo": aspec}, z, g, afn)


def sphere_cap(base=3.3, radius=2.0, scale=1.0, albedo=None) -> AnalyticScene:
    """Spherical bump toward the camera; depth equals ``base`` at the image corners."""
    if radius**2 <= 2 * scale**2:
        raise ValueError("radius too small for the image domain")
    aspec, afn = _albedo_field(albedo)
    r2, s2 = radius**2, scale**2
    rim = np.sqrt(r2 - 2 * s2)

    def z(pn):
        rho2 = np.sum(pn * pn, axis=-1)
        return base - (np.sqrt(r2 - s2 * rho2) - rim)

    def g(pn):
        rho2 = np.sum(pn * pn, axis=-1)
        return s2 * pn / np.sqrt(r2 - s2 * rho2)[..., None]

    params = {"base": base, "radius": radius, "scale": scale, "albedo": aspec}
    return AnalyticScene("sphere-cap", params, z, g, afn)


def sigmoid_stair(k=200.0, step_height=1.0, base=3.5, albedo=None) -> AnalyticScene:
    """``base - step_height * sigmoid(k un) * sigmoid(k vn)``: one raised quadrant."""
    aspec, afn = _albedo_field(albedo)

    def z(pn):
        return base - step_height * _sigmoid(k * pn[..., 0]) * _sigmoid(k * pn[..., 1])

    def g(pn):
        su = _sigmoid(k * pn[..., 0])
        sv = _sigmoid(k * pn[..., 1])
        out = np.empty(pn.shape)
        out[..., 0] = -step_height * k * su * (1.0 - su) * sv
        out[..., 1] = -step_height * k * su * sv * (1.0 - sv)
        return out

    params = {"k": k, "step_height": step_height, "base": base, "albedo": aspec}
    return AnalyticScene("sigmoid-stair", params, z, g, afn)


def discrete_stair(step_height=1.0, base=3.5, albedo=None) -> AnalyticScene:
    """Exact step: raised where both coordinates are positive, zero gradient elsewhere."""
    aspec, afn = _albedo_field(albedo)

    def z(pn):
        up = (pn[..., 0] > 0) & (pn[..., 1] > 0)
        return base - step_height * up

    def g(pn):
        return np.zeros(pn.shape)

    params = {"step_height": step_height, "base": base, "albedo": aspec}
    return AnalyticScene("discrete-stair", params, z, g, afn)


def sine_relief(base=3.0, amplitude=0.1, frequency=1.0, albedo=None) -> AnalyticScene:
    aspec, afn = _albedo_field(albedo)
    w = np.pi * frequency

    def z(pn):
        return base + amplitude * np.sin(w * pn[..., 0]) * np.sin(w * pn[..., 1])

    def g(pn):
        out = np.empty(pn.shape)
        out[..., 0] = amplitude * w * np.cos(w * pn[..., 0]) * np.sin(w * pn[..., 1])
        out[..., 1] = amplitude * w * np.sin(w * pn[..., 0]) * np.cos(w * pn[..., 1])
        return out

    params = {"base": base, "amplitude": amplitude, "frequency": frequency, "albedo": aspec}
    return AnalyticScene("sine-relief", params, z, g, afn)


def neural(params: ns.ParameterVector, albedo=None) -> AnalyticScene:
    """A scene whose depth is exactly a given network, so its parameters are ground truth."""
    aspec, afn = _albedo_field(albedo)
    return AnalyticScene(
        "neural",
        {"arch": params.arch.to_dict(), "albedo": aspec},
        lambda pn: ns.forward(params, pn.reshape(-1, 2)).reshape(pn.shape[:-1]),
        lambda pn: ns.spatial_gradient(params, pn.reshape(-1, 2)).reshape(pn.shape),
        afn,
    )


def scene_from_dict(d: dict) -> AnalyticScene:
    d = dict(d)
    kind = d.pop("kind")
    makers = {
        "plane": plane,
        "sphere-cap": sphere_cap,
        "sigmoid-stair": sigmoid_stair,
        "discrete-stair": discrete_stair,
        "sine-relief": sine_relief,
    }
    if kind not in makers:
        raise ValueError(f"scene kind {kind!r} cannot be built from a config")
    if "slope" in d:
        d["slope"] = tuple(d["slope"])
    return makers[kind](**d)


def make_grid_rig(nx=9, ny=9, extent=1.0, z_plane=0.0, phi0=1.0, mu=0.0) -> list[ph.PointLight]:
    """Regular ``nx`` x ``ny`` grid of point lights spanning ``[-extent, extent]``."""
    if nx < 1 or ny < 1:
        raise ValueError("grid needs at least one light per axis")
    xs = np.linspace(-extent, extent, nx) if nx > 1 else np.zeros(1)
    ys = np.linspace(-extent, extent, ny) if ny > 1 else np.zeros(1)
    return [
        ph.PointLight((float(x), float(y), float(z_plane)), phi0=phi0, mu=mu, omega=(0.0, 0.0, 1.0))
        for y in ys
        for x in xs
    ]


def render(scene: AnalyticScene, rig, cam: CameraModel, noise_sigma=0.0, seed=0):
    """Render an observation stack and the ground-truth maps of ``scene``.

    Returns ``(ObservationStack, SurfaceMaps)``.  Noise, when requested, is
    additive Gaussian on linear intensity and clipped at zero.
    """
    h, w = cam.height, cam.width
    p = pixel_grid(cam).reshape(-1, 2)
    cs = chain_scale(cam)
    pn = p * cs
    z = scene.depth(pn)
    g = scene.gradient(pn) * cs
    rho = scene.albedo(pn)
    sv = ph.shading_stack(p, z, g, cam.f_pixels, rig)
    m = rho[:, None] * sv.s
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        m = np.clip(m + rng.normal(0.0, noise_sigma, m.shape), 0.0, None)
    stack = ph.ObservationStack(m.reshape(h, w, -1))
    gt = SurfaceMaps(
        depth=z.reshape(h, w),
        normal=normal_from_depth(p, z, g, cam).reshape(h, w, 3),
        albedo=rho.reshape(h, w),
    )
    return stack, gt
