"""Near point-light Lambertian image formation and the reconstruction loss.

All shading kernels are vectorized over pixels x lights and return the exact
partial derivatives of the shading with respect to depth and the pixel-space
depth gradient.  Those partials are what the loss back-propagates into the
neural surface (or, for the ablation, into a finite-difference stencil).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import neural_surface as ns
from .errors import (
    DegenerateGeometryError,
    EmptyProblemError,
    InvalidDepthError,
    ShapeMismatchError,
    UndefinedAlbedoError,
)
from .geometry import CameraModel, chain_scale, pixel_grid

SHADOW_RATIO = 0.05


@dataclass(frozen=True)
class PointLight:
    position: tuple[float, float, float]
    phi0: float = 1.0
    mu: float = 0.0
    omega: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.phi0 > 0:
            raise ValueError(f"phi0 must be positive, got {self.phi0}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if abs(np.linalg.norm(self.omega) - 1.0) > 1e-9:
            raise ValueError("principal direction must be a unit vector")

    def to_dict(self) -> dict:
        return {
            "position_m": [float(c) for c in self.position],
            "phi0": float(self.phi0),
            "mu": float(self.mu),
            "omega": [float(c) for c in self.omega],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointLight":
        return cls(
            position=tuple(float(c) for c in d["position_m"]),
            phi0=float(d.get("phi0", 1.0)),
            mu=float(d.get("mu", 0.0)),
            omega=tuple(float(c) for c in d.get("omega", (0.0, 0.0, 1.0))),
        )


@dataclass
class LightArrays:
    position: np.ndarray  # (L, 3)
    phi0: np.ndarray  # (L,)
    mu: np.ndarray  # (L,)
    omega: np.ndarray  # (L, 3)

    @classmethod
    def from_lights(cls, lights) -> "LightArrays":
        if isinstance(lights, LightArrays):
            return lights
        if isinstance(lights, PointLight):
            lights = [lights]
        lights = list(lights)
        if not lights:
            raise EmptyProblemError("at least one light is required")
        return cls(
            position=np.array([l.position for l in lights], dtype=np.float64),
            phi0=np.array([l.phi0 for l in lights], dtype=np.float64),
            mu=np.array([l.mu for l in lights], dtype=np.float64),
            omega=np.array([l.omega for l in lights], dtype=np.float64),
        )

    def __len__(self):
        return self.phi0.size


@dataclass
class ObservationStack:
    """Images under each light, shape ``(H, W, L)``, plus a validity mask."""

    images: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise ShapeMismatchError(f"images must be (H, W, L), got {self.images.shape}")
        if self.mask is None:
            self.mask = np.ones(self.images.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape == self.images.shape[:2]:
            self.mask = np.repeat(self.mask[..., None], self.images.shape[2], axis=2)
        if self.mask.shape != self.images.shape:
            raise ShapeMismatchError("mask shape does not match images")
        if np.any(self.images[self.mask] < 0):
            raise ValueError("observed intensities must be non-negative")

    @property
    def n_lights(self) -> int:
        return self.images.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[:2]


@dataclass
class ShadingVector:
    """Shading at P pixels for L lights, with partials for back-propagation."""

    s: np.ndarray  # (P, L)
    ds_dz: np.ndarray  # (P, L)
    ds_dgrad: np.ndarray  # (P, L, 2)
    lit: np.ndarray = field(repr=False, default=None)


def light_direction(q, x) -> np.ndarray:
    """Unit vector from scene point ``x`` toward light position ``q``."""
    r = np.asarray(q, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateGeometryError("light position coincides with scene point")
    return r / n


def radiant_intensity(l, light: PointLight):
    """Anisotropic intensity ``phi0 * max(-l . omega, 0)^mu``.

    ``l`` points from the surface to the light, so ``-l`` is the emission
    direction compared against the light's principal axis.
    """
    d = -np.sum(np.asarray(l, dtype=np.float64) * np.asarray(light.omega), axis=-1)
    if light.mu == 0:
        return light.phi0 * np.ones_like(d)
    return light.phi0 * np.maximum(d, 0.0) ** light.mu


def shading_stack(p, z, grad_pixel, f, lights) -> ShadingVector:
    """Shading of every light at every pixel and its exact partials.

    Parameters
    ----------
    p : ndarray, shape (P, 2)
        Centered pixel coordinates.
    z : ndarray, shape (P,)
    grad_pixel : ndarray, shape (P, 2)
        Depth gradient in meters per pixel.
    f : float
        Focal length in pixels.
    lights : sequence of PointLight or LightArrays
    """
    la = LightArrays.from_lights(lights)
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(grad_pixel, dtype=np.float64)
    u, v = p[:, 0], p[:, 1]
    gu, gv = g[:, 0], g[:, 1]

    # per-pixel quantities, shape (P,); everything is written out by component
    ru, rv = u / f, v / f
    a0, a1, a2 = f * gu, f * gv, -z - gu * u - gv * v
    an = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
    n0, n1, n2 = a0 / an, a1 / an, a2 / an
    # d(gamma(a)) = (da - n (n . da)) / |a|  for da along z, g_u and g_v
    dnz = (n0 * n2 / an, n1 * n2 / an, (n2 * n2 - 1.0) / an)
    k = f * n0 - u * n2
    dnu = ((f - n0 * k) / an, -n1 * k / an, (-u - n2 * k) / an)
    k = f * n1 - v * n2
    dnv = (-n0 * k / an, (f - n1 * k) / an, (-v - n2 * k) / an)

    col = lambda arr: arr[:, None]  # noqa: E731
    qx, qy, qz = la.position.T
    rx = qx - col(z * ru)
    ry = qy - col(z * rv)
    rz = qz - col(z)
    D = rx * rx + ry * ry + rz * rz
    R = np.sqrt(D)
    if np.any(R == 0):
        raise DegenerateGeometryError("light position coincides with scene point")
    lx, ly, lz = rx / R, ry / R, rz / R
    c = lx * col(n0) + ly * col(n1) + lz * col(n2)
    l_ray = lx * col(ru) + ly * col(rv) + lz
    # dl/dz = (l (l . ray) - ray) / R,  dD/dz = -2 R (l . ray)
    dlx = (lx * l_ray - col(ru)) / R
    dly = (ly * l_ray - col(rv)) / R
    dlz = (lz * l_ray - 1.0) / R
    dD_z = -2.0 * R * l_ray
    dc_z = (dlx * col(n0) + dly * col(n1) + dlz * col(n2)
            + lx * col(dnz[0]) + ly * col(dnz[1]) + lz * col(dnz[2]))
    dc_u = lx * col(dnu[0]) + ly * col(dnu[1]) + lz * col(dnu[2])
    dc_v = lx * col(dnv[0]) + ly * col(dnv[1]) + lz * col(dnv[2])

    ox, oy, oz = la.omega.T
    mu = la.mu
    if np.any(mu > 0):
        t = -(lx * ox + ly * oy + lz * oz)
        tp = np.maximum(t, 0.0)
        phi = la.phi0 * np.where(mu > 0, tp, 1.0) ** mu
        dt_z = -(dlx * ox + dly * oy + dlz * oz)
        with np.errstate(divide="ignore", invalid="ignore"):
            dphi = la.phi0 * mu * np.where(tp > 0, tp, 1.0) ** (mu - 1.0)
        dphi_z = np.where((mu > 0) & (t > 0), dphi * dt_z, 0.0)
    else:
        phi = la.phi0
        dphi_z = 0.0

    lit = c > 0
    cp = np.where(lit, c, 0.0)
    phi_d = phi / D
    s = phi_d * cp
    ds_z = np.where(lit, (dphi_z * cp + phi * dc_z) / D - s * dD_z / D, 0.0)
    ds_g = np.empty(s.shape + (2,))
    ds_g[..., 0] = np.where(lit, phi_d * dc_u, 0.0)
    ds_g[..., 1] = np.where(lit, phi_d * dc_v, 0.0)
    return ShadingVector(s=s, ds_dz=ds_z, ds_dgrad=ds_g, lit=lit)


def shading(p, light: PointLight, z, grad_pixel, cam: CameraModel):
    """Shading of one light at one or many pixels.

    Returns ``(s, ds_dz, ds_dgrad)``; where the attached-shadow clamp fires
    all three are exactly zero.
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise InvalidDepthError("depth must be positive")
    p = np.asarray(p, dtype=np.float64)
    scalar = z.ndim == 0
    sv = shading_stack(p.reshape(-1, 2), z.reshape(-1),
                       np.asarray(grad_pixel, dtype=np.float64).reshape(-1, 2),
                       cam.f_pixels, [light])
    s, dz, dg = sv.s[:, 0], sv.ds_dz[:, 0], sv.ds_dgrad[:, 0]
    if scalar:
        return float(s[0]), float(dz[0]), dg[0]
    return s.reshape(z.shape), dz.reshape(z.shape), dg.reshape(z.shape + (2,))


def shadow_mask(stack: ObservationStack, ratio: float = SHADOW_RATIO) -> ObservationStack:
    """Discard intensities below ``ratio`` times the per-image median.

    The median is taken over currently valid pixels; the comparison is strict,
    so a pixel exactly at the threshold is kept.  The mask only ever shrinks.
    """
    if stack.images.size == 0:
        raise EmptyProblemError("empty observation stack")
    mask = stack.mask.copy()
    for i in range(stack.n_lights):
        img = stack.images[..., i]
        valid = mask[..., i]
        vals = img[valid]
        if vals.size == 0:
            continue
        med = np.median(vals)
        if med <= 0:
            warnings.warn(f"image {i} has zero median intensity; masking it entirely")
            mask[..., i] = False
            continue
        mask[..., i] &= ~(img < ratio * med)
    return ObservationStack(stack.images, mask)


def albedo_lsq(m, s, mask=None) -> float:
    """Least-squares albedo ``(m . s) / (s . s)`` over unmasked lights."""
    m = np.asarray(m, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    w = np.ones(m.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    ss = np.sum(s[w] ** 2)
    if ss == 0:
        raise UndefinedAlbedoError("no unmasked light shades this pixel")
    return float(np.sum(m[w] * s[w]) / ss)


@dataclass
class PixelLoss:
    """Loss pieces before normalization by ``count``."""

    total: float
    count: int
    zbar: np.ndarray  # dL/dz per pixel (already divided by count)
    gbar: np.ndarray  # dL/dgrad_pixel per pixel (already divided by count)
    albedo: np.ndarray
    defined: np.ndarray

    @property
    def loss(self) -> float:
        return self.total / self.count


def loss_from_shading(m, w, sv: ShadingVector, detach_albedo=False, norm="l1",
                      albedo=None) -> PixelLoss:
    """Reconstruction loss and its adjoints with respect to depth and gradient.

    The albedo is the closed-form least-squares value at each pixel unless a
    fixed ``albedo`` array is given.  Pixels where it is undefined drop out.
    With ``detach_albedo`` the albedo is treated as a constant when
    differentiating.
    """
    s = sv.s
    w = np.asarray(w, dtype=bool)
    ws = np.where(w, s, 0.0)
    if albedo is None:
        s2 = np.sum(ws * s, axis=1)
        defined = s2 > 0
        s2_safe = np.where(defined, s2, 1.0)
        rho = np.where(defined, np.sum(ws * m, axis=1) / s2_safe, 0.0)
    else:
        rho = np.asarray(albedo, dtype=np.float64)
        defined = np.ones(rho.shape, dtype=bool)
        detach_albedo = True
    wd = w & defined[:, None]
    count = int(np.count_nonzero(wd))
    if count == 0:
        raise EmptyProblemError("no valid (pixel, light) observations")
    e = np.where(wd, m - rho[:, None] * s, 0.0)
    if norm == "l1":
        total = float(np.sum(np.abs(e)))
        ebar = np.sign(e)
    elif norm == "l2":
        total = float(np.sum(e * e))
        ebar = 2.0 * e
    else:
        raise ValueError(f"unknown norm {norm!r}")
    ebar /= count
    sbar = -rho[:, None] * ebar
    if not detach_albedo:
        es = np.sum(ebar * s, axis=1)
        sbar -= (es / s2_safe)[:, None] * np.where(wd, m - 2.0 * rho[:, None] * s, 0.0)
    zbar = np.sum(sbar * sv.ds_dz, axis=1)
    gbar = np.einsum("pl,plk->pk", sbar, sv.ds_dgrad)
    return PixelLoss(total, count, zbar, gbar, rho, defined)


def flatten_stack(stack: ObservationStack, cam: CameraModel):
    """Pixel coordinates, intensities and masks as ``(N, ...)`` arrays."""
    h, w = stack.shape
    if (cam.height, cam.width) != (h, w):
        raise ShapeMismatchError(
            f"camera is {cam.width}x{cam.height} but images are {w}x{h}"
        )
    p = pixel_grid(cam).reshape(-1, 2)
    m = stack.images.reshape(h * w, -1)
    mask = stack.mask.reshape(h * w, -1)
    return p, m, mask


def reconstruction_loss(stack: ObservationStack, params: ns.ParameterVector, lights,
                        cam: CameraModel, detach_albedo=False, pixels=None, dtype=np.float64):
    """Mean L1 image reconstruction error and its gradient over the network.

    ``pixels`` optionally restricts the loss to a subset of flat pixel indices
    (mini-batch mode).  ``dtype`` is the network's compute precision; shading
    and the loss itself are always evaluated in double precision.
    Returns ``(loss, grad)``.
    """
    la = LightArrays.from_lights(lights)
    if len(la) != stack.n_lights:
        raise ShapeMismatchError(f"{len(la)} lights for {stack.n_lights} images")
    p, m, mask = flatten_stack(stack, cam)
    keep = np.flatnonzero(mask.any(axis=1))
    if pixels is not None:
        keep = np.intersect1d(keep, np.asarray(pixels))
    if keep.size == 0:
        raise EmptyProblemError("no valid pixels")
    p, m, mask = p[keep], m[keep], mask[keep]
    cs = chain_scale(cam)
    ev, tape = ns.forward_with_tape(params, p * cs, dtype=dtype)
    sv = shading_stack(p, ev.z.astype(np.float64), ev.grad_norm.astype(np.float64) * cs,
                       cam.f_pixels, la)
    pl = loss_from_shading(m, mask, sv, detach_albedo=detach_albedo)
    grad = ns.backward(tape, pl.zbar, pl.gbar * cs)
    return pl.loss, grad
