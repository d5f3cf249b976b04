"""Finite-difference ablation: depth gradients from a pixel-grid stencil.

Used only to compare against the analytic derivatives of the neural surface.
The network is evaluated on the full grid every iteration, the depth gradient
is taken by central differences (one-sided at borders and next to invalid
pixels), and the loss gradient flows back through the stencil's depth samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neural_surface as ns
from . import photometric as ph
from .errors import EmptyProblemError, MaskedGradientError, ShapeMismatchError
from .geometry import CameraModel, chain_scale, pixel_grid


@dataclass
class DepthGrid:
    depth: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.depth.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.depth.shape:
            raise ShapeMismatchError("mask and depth shapes differ")


def _axis_weights(mask, axis):
    """Stencil coefficients (minus, center, plus) along one axis."""
    h, w = mask.shape
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    padded = np.pad(mask, pad, constant_values=False)
    if axis == 0:
        minus, plus = padded[:-2, :], padded[2:, :]
    else:
        minus, plus = padded[:, :-2], padded[:, 2:]
    both = minus & plus
    only_plus = plus & ~minus
    only_minus = minus & ~plus
    if np.any(mask & ~minus & ~plus):
        raise MaskedGradientError("isolated pixel has no neighbour along an axis")
    cm = np.where(both, -0.5, np.where(only_minus, -1.0, 0.0))
    cp = np.where(both, 0.5, np.where(only_plus, 1.0, 0.0))
    cc = np.where(only_plus, -1.0, np.where(only_minus, 1.0, 0.0))
    zero = ~mask
    return cm * ~zero, cc * ~zero, cp * ~zero


def _shift(a, axis, step):
    """``out[i] = a[i + step]`` along ``axis`` with zero fill."""
    out = np.zeros_like(a)
    if axis == 0:
        if step > 0:
            out[:-step] = a[step:]
        else:
            out[-step:] = a[:step]
    else:
        if step > 0:
            out[:, :-step] = a[:, step:]
        else:
            out[:, -step:] = a[:, :step]
    return out


def grid_gradient(grid: DepthGrid) -> np.ndarray:
    """``(dz/du, dz/dv)`` in meters per pixel for every valid pixel, shape ``(H, W, 2)``.

    ``u`` runs along columns, ``v`` along rows.  Invalid pixels get zeros.
    """
    z = np.where(grid.mask, grid.depth, 0.0)
    out = np.zeros(z.shape + (2,))
    for k, axis in enumerate((1, 0)):
        cm, cc, cp = _axis_weights(grid.mask, axis)
        out[..., k] = cm * _shift(z, axis, -1) + cc * z + cp * _shift(z, axis, 1)
    return out


def grid_gradient_adjoint(gbar, mask) -> np.ndarray:
    """Transpose of :func:`grid_gradient`: pull gradient sensitivities back to depths."""
    gbar = np.asarray(gbar, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    zbar = np.zeros(mask.shape)
    for k, axis in enumerate((1, 0)):
        cm, cc, cp = _axis_weights(mask, axis)
        g = gbar[..., k]
        zbar += cc * g + _shift(cm * g, axis, 1) + _shift(cp * g, axis, -1)
    return zbar


def central_difference(grid: DepthGrid, row: int, col: int) -> np.ndarray:
    """Stencil gradient ``(dz/du, dz/dv)`` at one pixel (array indices).

    Uses symmetric differences with unit pixel spacing and falls back to
    one-sided differences where a neighbour is missing.
    """
    h, w = grid.depth.shape
    if not (0 <= row < h and 0 <= col < w) or not grid.mask[row, col]:
        raise MaskedGradientError(f"pixel ({row}, {col}) is not a valid grid pixel")

    def valid(r, c):
        return 0 <= r < h and 0 <= c < w and grid.mask[r, c]

    z = grid.depth
    out = np.zeros(2)
    for k, (dr, dc) in enumerate(((0, 1), (1, 0))):
        lo, hi = valid(row - dr, col - dc), valid(row + dr, col + dc)
        if lo and hi:
            out[k] = (z[row + dr, col + dc] - z[row - dr, col - dc]) / 2.0
        elif hi:
            out[k] = z[row + dr, col + dc] - z[row, col]
        elif lo:
            out[k] = z[row, col] - z[row - dr, col - dc]
        else:
            raise MaskedGradientError(f"pixel ({row}, {col}) is isolated")
    return out


def fd_reconstruction_loss(stack: ph.ObservationStack, params: ns.ParameterVector, lights,
                           cam: CameraModel, detach_albedo=False, pixels=None,
                           dtype=np.float64):
    """The reconstruction loss with stencil gradients in place of analytic ones."""
    if pixels is not None:
        raise ValueError("finite-difference mode works on the full grid only")
    la = ph.LightArrays.from_lights(lights)
    if len(la) != stack.n_lights:
        raise ShapeMismatchError(f"{len(la)} lights for {stack.n_lights} images")
    h, w = cam.height, cam.width
    p, m, mask = ph.flatten_stack(stack, cam)
    cs = chain_scale(cam)
    ev, tape = ns.forward_with_tape(params, p * cs, order=0, dtype=dtype)
    grid = DepthGrid(ev.z.astype(np.float64).reshape(h, w))
    g = grid_gradient(grid).reshape(-1, 2)
    keep = np.flatnonzero(mask.any(axis=1))
    if keep.size == 0:
        raise EmptyProblemError("no valid pixels")
    sv = ph.shading_stack(p[keep], grid.depth.reshape(-1)[keep], g[keep], cam.f_pixels, la)
    pl = ph.loss_from_shading(m[keep], mask[keep], sv, detach_albedo=detach_albedo)
    zbar = np.zeros(h * w)
    gbar = np.zeros((h * w, 2))
    zbar[keep] = pl.zbar
    gbar[keep] = pl.gbar
    zbar += grid_gradient_adjoint(gbar.reshape(h, w, 2), grid.mask).reshape(-1)
    return pl.loss, ns.backward(tape, zbar)


def solve_fd_mode(stack, lights, cam, arch=None, schedule=None, seed=0, **kw):
    """:func:`nlps.optimizer.solve` with finite-difference depth gradients."""
    from .optimizer import solve

    kw["derivatives"] = "finite"
    return solve(stack, lights, cam, arch, schedule, seed, **kw)
