"""Adam over the network parameters, learning-rate schedule and the solve loop."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import neural_surface as ns
from . import photometric as ph
from .errors import DivergenceError, NonFiniteGradientError, ShapeMismatchError
from .geometry import CameraModel, chain_scale, pixel_grid, unnormalized_normal
from .maps import SurfaceMaps

log = logging.getLogger(__name__)

_ADAM_MAGIC = b"NLPSADAM"
_CKPT_MAGIC = b"NLPSCKPT"
_VERSION = 1


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)

    def to_bytes(self) -> bytes:
        head = struct.pack("<8sIQdddQ", _ADAM_MAGIC, _VERSION, self.step,
                           self.beta1, self.beta2, self.eps, self.m.size)
        return head + self.m.astype("<f8").tobytes() + self.v.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AdamState":
        fmt = struct.Struct("<8sIQdddQ")
        magic, version, step, b1, b2, eps, n = fmt.unpack_from(blob)
        if magic != _ADAM_MAGIC or version != _VERSION:
            raise ShapeMismatchError("not an Adam state blob")
        body = blob[fmt.size :]
        if len(body) != 16 * n:
            raise ShapeMismatchError("Adam state blob length does not match header")
        arr = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return cls(arr[:n].copy(), arr[n:].copy(), step, b1, b2, eps)


@dataclass(frozen=True)
class Schedule:
    lr0: float = 1e-4
    halve_every: int = 8000
    stop_loss: float = 1e-6
    max_iters: int = 50_000

    def __post_init__(self):
        if not (self.lr0 > 0 and self.halve_every > 0 and self.stop_loss > 0
                and self.max_iters > 0):
            raise ValueError("schedule values must all be positive")

    def lr_at(self, t: int) -> float:
        return self.lr0 * 2.0 ** -(t // self.halve_every)

    def to_dict(self) -> dict:
        return {"lr0": self.lr0, "halve_every": self.halve_every,
                "stop_loss": self.stop_loss, "max_iters": self.max_iters}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        base = cls()
        return cls(
            lr0=float(d.get("lr0", base.lr0)),
            halve_every=int(d.get("halve_every", base.halve_every)),
            stop_loss=float(d.get("stop_loss", base.stop_loss)),
            max_iters=int(d.get("max_iters", base.max_iters)),
        )


def adam_step(theta, grad, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(theta', state')`` without mutating inputs.

    The bias corrections are folded into the step size and epsilon is added to
    ``sqrt(v)``, so on the first step the update is ``lr * g / (|g| + eps * c)``
    with ``c = 1 / sqrt(1 - beta2)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise ShapeMismatchError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NonFiniteGradientError(
            f"{bad.size} non-finite gradient entries (first at index {bad[0]}) "
            f"at step {state.step}"
        )
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    t = state.step + 1
    lr_t = lr * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    new_theta = theta - lr_t * m / (np.sqrt(v) + state.eps)
    return new_theta, replace(state, m=m, v=v, step=t)


@dataclass
class Checkpoint:
    params: ns.ParameterVector
    adam: AdamState
    iteration: int
    schedule: Schedule

    def to_bytes(self) -> bytes:
        pb = self.params.to_bytes()
        ab = self.adam.to_bytes()
        sb = json.dumps(self.schedule.to_dict(), sort_keys=True).encode()
        out = struct.pack("<8sIQ", _CKPT_MAGIC, _VERSION, self.iteration)
        for blob in (pb, ab, sb):
            out += struct.pack("<Q", len(blob)) + blob
        return out

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        head = struct.Struct("<8sIQ")
        magic, version, it = head.unpack_from(blob)
        if magic != _CKPT_MAGIC or version != _VERSION:
            raise ShapeMismatchError("not a checkpoint file")
        off = head.size
        parts = []
        for _ in range(3):
            (n,) = struct.unpack_from("<Q", blob, off)
            off += 8
            parts.append(blob[off : off + n])
            off += n
        return cls(
            ns.ParameterVector.from_bytes(parts[0]),
            AdamState.from_bytes(parts[1]),
            it,
            Schedule.from_dict(json.loads(parts[2].decode())),
        )

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class SolveResult:
    maps: SurfaceMaps
    params: ns.ParameterVector
    adam: AdamState
    history: np.ndarray  # rows of (iteration, loss, lr)
    final_loss: float
    converged: bool
    iterations: int
    checkpoint: Checkpoint = field(repr=False, default=None)


def _loss_function(derivatives):
    if derivatives == "analytic":
        return ph.reconstruction_loss
    if derivatives == "finite":
        from .discrete_baseline import fd_reconstruction_loss

        return fd_reconstruction_loss
    raise ValueError(f"derivatives must be 'analytic' or 'finite', got {derivatives!r}")


def render_maps(params: ns.ParameterVector, stack: ph.ObservationStack, lights,
                cam: CameraModel, derivatives="analytic") -> SurfaceMaps:
    """Depth, normal and albedo of the surface ``params`` on the full pixel grid.

    Normals use the same derivative mode as the solve.  Albedo is the
    least-squares value against ``stack``; pixels where it is undefined are
    left out of ``mask``.
    """
    h, w = cam.height, cam.width
    grid = pixel_grid(cam)
    p = grid.reshape(-1, 2)
    cs = chain_scale(cam)
    if derivatives == "analytic":
        ev, _ = ns.forward_with_tape(params, p * cs)
        z, g = ev.z, ev.grad_norm * cs
    else:
        from .discrete_baseline import DepthGrid, grid_gradient

        z = ns.forward(params, p * cs)
        g = grid_gradient(DepthGrid(z.reshape(h, w))).reshape(-1, 2)
    a = unnormalized_normal(p, z, g, cam.f_pixels)
    normal = a / np.linalg.norm(a, axis=1, keepdims=True)
    sv = ph.shading_stack(p, z, g, cam.f_pixels, lights)
    m = stack.images.reshape(h * w, -1)
    wmask = stack.mask.reshape(h * w, -1)
    ws = np.where(wmask, sv.s, 0.0)
    s2 = np.sum(ws * sv.s, axis=1)
    defined = s2 > 0
    albedo = np.where(defined, np.sum(ws * m, axis=1) / np.where(defined, s2, 1.0), 0.0)
    return SurfaceMaps(
        depth=z.reshape(h, w),
        normal=normal.reshape(h, w, 3),
        albedo=albedo.reshape(h, w),
        mask=defined.reshape(h, w),
    )


def solve(stack: ph.ObservationStack, lights, cam: CameraModel,
          arch: ns.ArchitectureSpec = None, schedule: Schedule = None, seed: int = 0,
          *, z0: float = 3.0, derivatives: str = "analytic", detach_albedo: bool = False,
          batch_size: int | None = None, resume: Checkpoint | None = None,
          dtype=np.float64, callback=None) -> SolveResult:
    """Fit the neural surface to an observation stack.

    Full-batch by default.  Each iteration evaluates the loss at the current
    parameters, records ``(iteration, loss, lr)``, stops if the loss is below
    ``schedule.stop_loss`` and otherwise takes one Adam step.

    ``batch_size`` switches to random pixel mini-batches (analytic mode only);
    batches are drawn from a generator keyed on ``(seed, iteration)`` so that
    resumed runs see the same batches.  ``dtype=np.float32`` evaluates the
    network in single precision; parameters and Adam state stay float64.
    """
    arch = arch or ns.ArchitectureSpec()
    schedule = schedule or Schedule()
    lights = ph.LightArrays.from_lights(lights)
    if len(lights) < 3:
        log.warning("only %d lights; at least 3 are recommended", len(lights))
    loss_fn = _loss_function(derivatives)
    if batch_size is not None and derivatives != "analytic":
        raise ValueError("mini-batches need analytic derivatives")

    if resume is not None:
        params = resume.params.copy()
        adam = replace(resume.adam, m=resume.adam.m.copy(), v=resume.adam.v.copy())
        start = resume.iteration
    else:
        params = ns.init_params(arch, z0, seed)
        adam = AdamState.zeros(len(params))
        start = 0
    theta = params.flat

    n_pixels = cam.width * cam.height
    history = []
    converged = False
    last_good = None
    it = start
    for it in range(start, schedule.max_iters):
        lr = schedule.lr_at(it)
        pixels = None
        if batch_size is not None:
            rng = np.random.default_rng([seed, it])
            pixels = np.sort(rng.choice(n_pixels, size=min(batch_size, n_pixels), replace=False))
        cur = params.with_flat(theta)
        loss, grad = loss_fn(stack, cur, lights, cam, detach_albedo=detach_albedo,
                             pixels=pixels, dtype=dtype)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at iteration {it}", last_good)
        history.append((it, loss, lr))
        last_good = Checkpoint(cur.copy(), adam, it, schedule)
        if callback is not None:
            callback(it, loss)
        if it % 500 == 0:
            log.debug("iter %d loss %.3e lr %.2e", it, loss, lr)
        if loss < schedule.stop_loss:
            converged = True
            break
        try:
            theta, adam = adam_step(theta, grad, adam, lr)
        except NonFiniteGradientError as exc:
            raise DivergenceError(str(exc), last_good) from exc
    else:
        it = schedule.max_iters

    final = params.with_flat(theta)
    if converged:
        final_loss = history[-1][1]
        next_iter = it
    else:
        final_loss, _ = loss_fn(stack, final, lights, cam, detach_albedo=detach_albedo,
                                dtype=dtype)
        next_iter = schedule.max_iters
    maps = render_maps(final, stack, lights, cam, derivatives)
    hist = np.array(history, dtype=np.float64).reshape(-1, 3)
    maps.loss_history = hist
    return SolveResult(
        maps=maps,
        params=final,
        adam=adam,
        history=hist,
        final_loss=float(final_loss),
        converged=converged,
        iterations=len(history),
        checkpoint=Checkpoint(final.copy(), adam, next_iter, schedule),
    )
