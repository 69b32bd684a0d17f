"""Convolutional ResNet viscosity.

The nodal solution is flattened cell-major and concatenated with a one-hot
channel per node position inside the cell. A small 1D ResNet maps it to a
positive raw output per node, which is then scaled per cell by
``min(dx, max(|[U]_L|, |[U]_R|))`` so the viscosity vanishes where the
solution is continuous and shrinks with the mesh.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.autodiff import Tensor
from dgvisc.dg import DGMesh
from dgvisc.equations import EquationSpec

__all__ = [
    "NetConfig",
    "CheckpointError",
    "NeuralViscosity",
    "init_params",
    "parameter_count",
    "encode_input",
    "forward",
    "jump_scale",
    "scale_output",
    "save_params",
    "load_params",
]

MAGIC = b"VISCNN1"


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not match the requested config."""


@dataclass(frozen=True)
class NetConfig:
    n_vars: int = 1
    p: int = 4
    width: int = 16
    kernel: int = 3
    depth: int = 1
    head_bias: float = -3.0

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if min(self.n_vars, self.p, self.width, self.depth) < 1:
            raise ValueError("invalid network size")

    @property
    def in_channels(self) -> int:
        return self.n_vars + self.p

    def shapes(self) -> dict[str, tuple[int, ...]]:
        w, k = self.width, self.kernel
        out = {"stem.weight": (w, self.in_channels, k), "stem.bias": (w,)}
        for b in range(self.depth):
            out[f"block{b}.conv1.weight"] = (w, w, k)
            out[f"block{b}.conv1.bias"] = (w,)
            out[f"block{b}.conv2.weight"] = (w, w, k)
            out[f"block{b}.conv2.bias"] = (w,)
        out["head.weight"] = (1, w, k)
        out["head.bias"] = (1,)
        return out


def parameter_count(config: NetConfig) -> int:
    return int(sum(np.prod(s) for s in config.shapes().values()))


def init_params(config: NetConfig, rng: np.random.Generator | int | None = 0) -> dict[str, np.ndarray]:
    """He-uniform convolutions, zero biases, and a zero head with bias -3."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in config.shapes().items():
        if name.startswith("head"):
            params[name] = np.zeros(shape) if name.endswith("weight") else np.full(shape, config.head_bias)
        elif name.endswith("weight"):
            bound = np.sqrt(6.0 / (shape[1] * shape[2]))
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _onehot(p: int, n_x: int) -> np.ndarray:
    return np.tile(np.eye(p), (1, n_x))


def encode_input(U) -> Tensor:
    """(s, n_x, p) nodal values -> (s + p, n_x p) network input."""
    U = U if isinstance(U, Tensor) else ad.constant(U)
    s, n_x, p = U.shape
    values = ad.reshape(U, (s, n_x * p))
    return ad.concat([values, ad.constant(_onehot(p, n_x))], axis=0)


def forward(params: dict, encoded, config: NetConfig, padding: str = "circular") -> Tensor:
    """Raw positive output of the ResNet, shape (L,) for an input of length L."""
    h = ad.relu(ad.conv1d(encoded, params["stem.weight"], params["stem.bias"], padding))
    for b in range(config.depth):
        r = ad.relu(ad.conv1d(h, params[f"block{b}.conv1.weight"], params[f"block{b}.conv1.bias"], padding))
        r = ad.conv1d(r, params[f"block{b}.conv2.weight"], params[f"block{b}.conv2.bias"], padding)
        h = ad.relu(ad.add(h, r))
    out = ad.softplus(ad.conv1d(h, params["head.weight"], params["head.bias"], padding))
    return ad.reshape(out, (out.shape[1],))


def jump_scale(mesh: DGMesh, U) -> Tensor:
    """Per-cell factor min(dx, max(|[U]_L|, |[U]_R|)), shape (n_x,).

    For systems the jump is the largest over the variables.
    """
    U = U if isinstance(U, Tensor) else ad.constant(U)
    s = U.shape[0]
    left = mesh.left_state if not mesh.periodic else None
    right = mesh.right_state if not mesh.periodic else None
    jumps = ad.absolute(ad.sub(mesh.face_op("plus", right)(U), mesh.face_op("minus", left)(U)))
    jumps = ad.reshape(jumps, (mesh.n_x + 1,)) if s == 1 else ad.amax(jumps, axis=0)
    largest = ad.maximum(jumps[:-1], jumps[1:])
    return ad.minimum(largest, ad.constant(np.full(mesh.n_x, mesh.dx)))


def scale_output(mesh: DGMesh, U, raw) -> Tensor:
    """mu = s_cell * raw, returned as (n_x, p)."""
    s_cell = jump_scale(mesh, U)
    s_nodes = ad.expand(ad.reshape(s_cell, (mesh.n_x, 1)), (mesh.n_x, mesh.p))
    return ad.mul(s_nodes, ad.reshape(raw, (mesh.n_x, mesh.p)))


class NeuralViscosity:
    """Viscosity model backed by network parameters.

    ``params`` values may be ndarrays or tape parameters; in the latter case
    the produced viscosity is differentiable with respect to them.
    """

    name = "nn"

    def __init__(self, config: NetConfig, params: dict):
        missing = set(config.shapes()) - set(params)
        if missing:
            raise CheckpointError(f"missing parameters: {sorted(missing)}")
        self.config = config
        self.params = params

    def raw(self, mesh: DGMesh, U) -> Tensor:
        padding = "circular" if mesh.periodic else "replicate"
        return forward(self.params, encode_input(U), self.config, padding)

    def __call__(self, mesh: DGMesh, eq: EquationSpec, U) -> Tensor:
        if U.shape[0] != self.config.n_vars or U.shape[2] != self.config.p:
            raise ValueError(
                f"network expects {self.config.n_vars} variables and p={self.config.p}, got state {U.shape}"
            )
        return scale_output(mesh, U, self.raw(mesh, U))

    def on_tape(self, tape: ad.Tape) -> NeuralViscosity:
        return NeuralViscosity(self.config, {k: tape.parameter(k, _np(v)) for k, v in self.params.items()})

    def numpy_params(self) -> dict[str, np.ndarray]:
        return {k: _np(v) for k, v in self.params.items()}


def _np(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


_U32 = struct.Struct("<I")


def save_params(params: dict, path, config: NetConfig) -> None:
    """Write the binary checkpoint (magic, sizes, then named float64 tensors)."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<5I", config.n_vars, config.p, config.width, config.kernel, config.depth)
    for name, value in params.items():
        arr = np.ascontiguousarray(_np(value), dtype="<f8")
        raw = name.encode("utf-8")
        buf += _U32.pack(len(raw)) + raw
        buf += _U32.pack(arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_params(path, config: NetConfig | None = None) -> tuple[NetConfig, dict[str, np.ndarray]]:
    """Read a checkpoint; if ``config`` is given, its sizes must match the file."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError("bad magic: not a viscosity checkpoint")
    pos = len(MAGIC)
    try:
        s, p, width, kernel, depth = struct.unpack_from("<5I", raw, pos)
        pos += 20
        params = {}
        while pos < len(raw):
            (n,) = _U32.unpack_from(raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = _U32.unpack_from(raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(raw):
                raise CheckpointError(f"truncated tensor {name!r}")
            params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None

    file_config = NetConfig(s, p, width, kernel, depth)
    if config is not None:
        mine = asdict(config)
        theirs = asdict(file_config)
        bad = [k for k in ("n_vars", "p", "width", "kernel", "depth") if mine[k] != theirs[k]]
        if bad:
            raise CheckpointError(
                "checkpoint does not match config: " + ", ".join(f"{k}={theirs[k]} (expected {mine[k]})" for k in bad)
            )
        file_config = config
    for name, shape in file_config.shapes().items():
        if name not in params:
            raise CheckpointError(f"checkpoint lacks {name!r}")
        if params[name].shape != shape:
            raise CheckpointError(f"{name}: shape {params[name].shape}, expected {shape}")
    return file_config, params
