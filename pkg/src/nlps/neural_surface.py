"""Sine-activated coordinate network representing depth over the image plane.

The network maps normalized image coordinates ``p`` in ``[-1, 1]^2`` to a
depth ``z`` in meters.  Every evaluation propagates a first-order *jet*
``(value, d/du, d/dv)`` through the layers, so the spatial gradient comes out
of the same pass as the depth and is exact (no finite differences anywhere).

Parameter gradients are obtained by hand-written reverse mode over that
extended graph.  Because the tangent rows of the jet depend on ``theta`` too,
back-propagating a sensitivity on the spatial gradient gives the mixed second
derivative ``d(grad_p z)/d(theta)`` required when the loss depends on normals.

Flattened parameter layout is layer-major, weights before biases, weights in
row-major ``(out, in)`` order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "ArchitectureSpec",
    "ParameterVector",
    "SurfaceEval",
    "Tape",
    "init_params",
    "forward",
    "spatial_gradient",
    "forward_with_tape",
    "replay",
    "backward",
]

_PARAM_MAGIC = b"NLPSPARM"
_PARAM_VERSION = 1
# magic, version, hidden_layers, width, input_dim, output_dim, omega0, seed, count
_PARAM_HEADER = struct.Struct("<8sIIIIIdqQ")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape of a fixed-width sine MLP with a linear head.

    ``hidden_layers`` counts the sine layers (the first one included), so the
    default 5 x 256 network has five sine layers followed by one linear layer.
    """

    hidden_layers: int = 5
    width: int = 256
    omega0: float = 30.0
    input_dim: int = 2
    output_dim: int = 1

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if self.input_dim != 2 or self.output_dim != 1:
            raise ValueError("the depth network maps 2-D coordinates to a scalar")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.width, self.input_dim)]
        shapes += [(self.width, self.width)] * (self.hidden_layers - 1)
        shapes.append((self.output_dim, self.width))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "hidden_layers": self.hidden_layers,
            "width": self.width,
            "omega0": self.omega0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(
            hidden_layers=int(d.get("hidden_layers", 5)),
            width=int(d.get("width", 256)),
            omega0=float(d.get("omega0", 30.0)),
        )


class ParameterVector:
    """All weights and biases of the network, stored as one flat float64 array.

    ``layers()`` returns ``(W, b)`` pairs that are *views* into ``flat``, so
    the optimizer can work on the flat array while the network reads the
    structured form.
    """

    def __init__(self, arch: ArchitectureSpec, flat=None, seed: int = 0):
        self.arch = arch
        self.seed = int(seed)
        if flat is None:
            flat = np.zeros(arch.n_params)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (arch.n_params,):
            raise ShapeMismatchError(
                f"expected {arch.n_params} parameters, got shape {flat.shape}"
            )
        self.flat = flat

    def __len__(self):
        return self.flat.size

    def __repr__(self):
        return f"ParameterVector({self.arch}, n={self.flat.size}, seed={self.seed})"

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        offset = 0
        for n_out, n_in in self.arch.layer_shapes:
            W = self.flat[offset : offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = self.flat[offset : offset + n_out]
            offset += n_out
            out.append((W, b))
        return out

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(W.copy(), b.copy()) for W, b in self.layers()]

    @classmethod
    def from_layers(cls, arch, layers, seed=0) -> "ParameterVector":
        if len(layers) != len(arch.layer_shapes):
            raise ShapeMismatchError("layer count does not match architecture")
        parts = []
        for (W, b), (n_out, n_in) in zip(layers, arch.layer_shapes):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ShapeMismatchError(
                    f"layer shapes {W.shape}/{b.shape} != {(n_out, n_in)}/{(n_out,)}"
                )
            parts += [W.ravel(), b]
        return cls(arch, np.concatenate(parts), seed=seed)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.arch, self.flat.copy(), seed=self.seed)

    def with_flat(self, flat) -> "ParameterVector":
        return ParameterVector(self.arch, flat, seed=self.seed)

    @property
    def output_bias(self) -> float:
        return float(self.flat[-1])

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        a = self.arch
        header = _PARAM_HEADER.pack(
            _PARAM_MAGIC,
            _PARAM_VERSION,
            a.hidden_layers,
            a.width,
            a.input_dim,
            a.output_dim,
            a.omega0,
            self.seed,
            self.flat.size,
        )
        return header + self.flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParameterVector":
        if len(blob) < _PARAM_HEADER.size:
            raise ShapeMismatchError("parameter blob too short")
        magic, version, hl, width, din, dout, omega0, seed, count = _PARAM_HEADER.unpack_from(blob)
        if magic != _PARAM_MAGIC:
            raise ShapeMismatchError("not a parameter blob (bad magic)")
        if version != _PARAM_VERSION:
            raise ShapeMismatchError(f"unsupported parameter blob version {version}")
        arch = ArchitectureSpec(hidden_layers=hl, width=width, omega0=omega0,
                                input_dim=din, output_dim=dout)
        body = blob[_PARAM_HEADER.size :]
        if count != arch.n_params or len(body) != 8 * count:
            raise ShapeMismatchError("parameter blob length does not match header")
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return cls(arch, flat, seed=seed)

    def to_json(self) -> str:
        """Human-readable dump; not used for round-tripping exact values."""
        layers = [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers()]
        return json.dumps(
            {"version": _PARAM_VERSION, "arch": self.arch.to_dict(),
             "seed": self.seed, "layers": layers},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ParameterVector":
        d = json.loads(text)
        arch = ArchitectureSpec.from_dict(d["arch"])
        return cls.from_layers(arch, [(l["W"], l["b"]) for l in d["layers"]], seed=d["seed"])


def init_params(arch: ArchitectureSpec, z0: float, seed: int) -> ParameterVector:
    """SIREN initialization with the output bias set to the depth offset ``z0``.

    First-layer weights are uniform in ``+-1/input_dim``, later weights in
    ``+-sqrt(6/width)/omega0``.  Biases follow the usual ``+-1/sqrt(fan_in)``
    rule.  The output bias is ``z0`` so the initial surface is a slightly
    rippled plane around that depth.
    """
    if not np.isfinite(z0):
        raise ValueError(f"z0 must be finite, got {z0}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_out, n_in) in enumerate(arch.layer_shapes):
        if i == 0:
            bound = 1.0 / n_in
        else:
            bound = np.sqrt(6.0 / n_in) / arch.omega0
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        bb = 1.0 / np.sqrt(n_in)
        b = rng.uniform(-bb, bb, size=n_out)
        layers.append((W, b))
    layers[-1] = (layers[-1][0], np.full(arch.output_dim, float(z0)))
    return ParameterVector.from_layers(arch, layers, seed=seed)


@dataclass
class SurfaceEval:
    z: np.ndarray
    grad_norm: np.ndarray


@dataclass
class Tape:
    """Activations of one batched jet pass.

    ``jets[i]`` is the input jet of layer ``i`` with shape ``(rows, P, n)``
    (row 0 values, rows 1.. tangents along u and v).  ``pre`` holds the
    matching pre-activation jets of the sine layers and ``cos`` the cosine
    factors ``cos(omega0 * a)``.
    """

    params: ParameterVector
    order: int
    jets: list
    pre: list
    cos: list
    z: np.ndarray
    grad_norm: np.ndarray | None
    scalar: bool
    dtype: type = np.float64

    @property
    def n_points(self) -> int:
        return self.z.size

    @property
    def nbytes(self) -> int:
        arrays = self.jets + self.pre + self.cos
        return sum(a.nbytes for a in arrays)


def _as_points(p_norm):
    p = np.asarray(p_norm, dtype=np.float64)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ShapeMismatchError(f"coordinates must have shape (2,) or (P, 2), got {p.shape}")
    return p, scalar


def _cast_layers(params, dtype):
    return [(W.astype(dtype, copy=False), b.astype(dtype, copy=False)) for W, b in params.layers()]


def _run(params: ParameterVector, p: np.ndarray, order: int, keep: bool, dtype=np.float64):
    omega = dtype(params.arch.omega0)
    layers = _cast_layers(params, dtype)
    n_pts = p.shape[0]
    # The value row and the tangent rows go through separate matmuls so the
    # value path is the same computation with or without derivatives.
    rows = 3 if order else 1
    jet = np.empty((rows, n_pts, 2), dtype=dtype)
    jet[0] = p
    if order:
        jet[1] = (1.0, 0.0)
        jet[2] = (0.0, 1.0)
    jets, pres, coss = [], [], []
    for W, b in layers[:-1]:
        a = np.empty((rows, n_pts, W.shape[0]), dtype=dtype)
        np.matmul(jet[0], W.T, out=a[0])
        a[0] += b
        if order:
            a[1:] = (jet[1:].reshape(-1, W.shape[1]) @ W.T).reshape(2, n_pts, -1)
        wa = omega * a[0]
        nxt = np.empty_like(a)
        np.sin(wa, out=nxt[0])
        if order:
            c = np.cos(wa)
            np.multiply(omega * c, a[1:], out=nxt[1:])
        else:
            c = None
        if keep:
            jets.append(jet)
            pres.append(a)
            coss.append(c)
        jet = nxt
    W, b = layers[-1]
    w = W[0]
    z = jet[0] @ w + b[0]
    grad = None
    if order:
        grad = (jet[1:].reshape(-1, w.size) @ w).reshape(2, n_pts).T.copy()
    if keep:
        jets.append(jet)
    return z, grad, jets, pres, coss


def forward(params: ParameterVector, p_norm):
    """Depth at normalized coordinates ``p_norm`` (shape ``(2,)`` or ``(P, 2)``)."""
    p, scalar = _as_points(p_norm)
    z, _, _, _, _ = _run(params, p, order=0, keep=False)
    return float(z[0]) if scalar else z


def spatial_gradient(params: ParameterVector, p_norm):
    """Exact ``dz/dp_norm`` by forward-mode tangent propagation."""
    p, scalar = _as_points(p_norm)
    _, grad, _, _, _ = _run(params, p, order=1, keep=False)
    return grad[0] if scalar else grad


def forward_with_tape(params: ParameterVector, p_norm, order: int = 1, dtype=np.float64):
    """Evaluate depth (and gradient when ``order=1``) and record a tape.

    ``order=0`` skips the tangent rows; the resulting tape can only be
    back-propagated with a zero gradient sensitivity.  ``dtype=np.float32``
    runs the whole pass (and its backward) in single precision, which is much
    faster for the sine evaluations; returned arrays keep that dtype.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    p, scalar = _as_points(p_norm)
    dtype = np.dtype(dtype).type
    z, grad, jets, pres, coss = _run(params, p, order=order, keep=True, dtype=dtype)
    tape = Tape(params=params, order=order, jets=jets, pre=pres, cos=coss,
                z=z, grad_norm=grad, scalar=scalar, dtype=dtype)
    if scalar:
        ev = SurfaceEval(float(z[0]), None if grad is None else grad[0])
    else:
        ev = SurfaceEval(z, grad)
    return ev, tape


def replay(tape: Tape) -> np.ndarray:
    """Recompute the depth from the recorded last-layer activations."""
    W, b = _cast_layers(tape.params, tape.dtype)[-1]
    return tape.jets[-1][0] @ W[0] + b[0]


def backward(tape: Tape, dL_dz, dL_dgrad=None, params: ParameterVector | None = None):
    """Gradient of ``sum(dL_dz * z + dL_dgrad . grad_norm)`` with respect to theta.

    Sensitivities are per point; the result is summed over the batch and
    returned as a flat array in parameter layout.  ``params`` is optional and
    only used to check that the tape was recorded with a compatible vector.
    """
    if params is not None and (
        params.arch != tape.params.arch or params.flat.shape != tape.params.flat.shape
    ):
        raise ShapeMismatchError("tape was recorded with a different parameter layout")
    n_pts = tape.n_points
    zbar = np.asarray(dL_dz, dtype=np.float64)
    if zbar.ndim == 0:
        zbar = np.full(n_pts, float(zbar))
    zbar = zbar.reshape(-1)
    if zbar.shape != (n_pts,):
        raise ShapeMismatchError(f"dL_dz has {zbar.size} entries for {n_pts} points")
    order = tape.order
    if dL_dgrad is not None:
        gbar = np.asarray(dL_dgrad, dtype=np.float64).reshape(-1, 2)
        if gbar.shape != (n_pts, 2):
            raise ShapeMismatchError(f"dL_dgrad has shape {np.shape(dL_dgrad)}, expected ({n_pts}, 2)")
        if order == 0:
            if np.any(gbar):
                raise ShapeMismatchError("tape recorded without tangents (order=0)")
            gbar = None
    else:
        gbar = None
    if gbar is None and order:
        gbar = np.zeros((n_pts, 2))

    dtype = tape.dtype
    zbar = zbar.astype(dtype, copy=False)
    if gbar is not None:
        gbar = gbar.astype(dtype, copy=False)
    omega = dtype(tape.params.arch.omega0)
    layers = _cast_layers(tape.params, dtype)
    grads = [None] * len(layers)

    # linear head
    W, _ = layers[-1]
    w = W[0]
    rows = 3 if order else 1
    out_bar = np.empty((rows, n_pts), dtype=dtype)
    out_bar[0] = zbar
    if order:
        out_bar[1:] = gbar.T
    jet = tape.jets[-1]
    gw = out_bar.reshape(-1) @ jet.reshape(-1, w.size)
    grads[-1] = (gw[None, :], np.array([zbar.sum()]))
    jet_bar = out_bar[..., None] * w

    for i in range(len(layers) - 2, -1, -1):
        W, _ = layers[i]
        a = tape.pre[i]
        s = tape.jets[i + 1][0]
        c = tape.cos[i]
        a_bar = np.empty_like(a)
        if order:
            wc = omega * c
            a_bar[0] = jet_bar[0] * wc
            a_bar[0] -= (omega * omega) * s * (jet_bar[1] * a[1] + jet_bar[2] * a[2])
            a_bar[1:] = jet_bar[1:] * wc
        else:
            a_bar[0] = jet_bar[0] * (omega * np.cos(omega * a[0]))
        prev = tape.jets[i]
        gW = a_bar.reshape(-1, W.shape[0]).T @ prev.reshape(-1, W.shape[1])
        gb = a_bar[0].sum(axis=0)
        grads[i] = (gW, gb)
        if i:
            jet_bar = (a_bar.reshape(-1, W.shape[0]) @ W).reshape(rows, n_pts, W.shape[1])

    return np.concatenate(
        [part.ravel() for gW, gb in grads for part in (gW, gb)]
    ).astype(np.float64)
