"""Conditional velocity network over latent chunks.

A small residual MLP applied frame-wise. Each frame's input row is the
fixed-order concatenation of: the noisy frame, the reference latent, the
mean-pooled motion-context summary, that frame's audio features, and a
sinusoidal timestep embedding. The network predicts the flow velocity for
every frame of the chunk.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ContractError


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 8  # C, latent channels per frame
    chunk_frames: int = 33  # N, frames per generated chunk (1.32 s at 25 fps)
    ctx_frames: int = 5  # n, motion-context frames carried between chunks
    hidden: int = 64
    blocks: int = 3
    t_embed_dim: int = 8
    audio_layers: int = 3
    audio_feat_dim: int = 8

    @property
    def audio_dim(self) -> int:
        return self.audio_layers * self.audio_feat_dim

    @property
    def input_dim(self) -> int:
        # x_t + ref + ctx summary + audio features + t embedding, per frame
        return 3 * self.channels + self.audio_dim + self.t_embed_dim


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar time in [0, 1]."""
    half = dim // 2
    freqs = 2.0 ** np.arange(half)
    angles = np.pi * float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def assemble_inputs(
    x_t: np.ndarray,
    ref: np.ndarray,
    ctx: np.ndarray,
    cond: np.ndarray,
    t: float,
    cfg: ModelConfig,
) -> np.ndarray:
    """Per-frame network input rows, fixed concatenation order.

    ``x_t`` (N, C) noisy frames; ``ref`` (C,); ``ctx`` (n_ctx, C) motion
    context, summarized by its mean frame; ``cond`` (N, layers, D) audio
    features aligned 1:1 with frames; ``t`` scalar timestep.
    """
    if x_t is None or ref is None or ctx is None or cond is None:
        raise ContractError("assemble_inputs: all condition parts are required")
    x_t = np.asarray(x_t, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    ctx = np.asarray(ctx, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    n = x_t.shape[0]
    if x_t.ndim != 2 or x_t.shape[1] != cfg.channels:
        raise ContractError(f"x_t must be (N, {cfg.channels}), got {x_t.shape}")
    if ref.shape != (cfg.channels,):
        raise ContractError(f"ref must be ({cfg.channels},), got {ref.shape}")
    if ctx.ndim != 2 or ctx.shape[0] < 1 or ctx.shape[1] != cfg.channels:
        raise ContractError(f"ctx must be (n_ctx>=1, {cfg.channels}), got {ctx.shape}")
    if cond.shape != (n, cfg.audio_layers, cfg.audio_feat_dim):
        raise ContractError(
            f"cond must be ({n}, {cfg.audio_layers}, {cfg.audio_feat_dim}), got {cond.shape}"
        )
    ctx_summary = ctx.mean(axis=0)
    t_emb = timestep_embedding(t, cfg.t_embed_dim)
    rows = np.concatenate(
        [
            x_t,
            np.tile(ref, (n, 1)),
            np.tile(ctx_summary, (n, 1)),
            cond.reshape(n, cfg.audio_dim),
            np.tile(t_emb, (n, 1)),
        ],
        axis=1,
    )
    return rows


class VelocityNetwork:
    """Residual MLP predicting per-frame velocities, shape-preserving."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "VelocityNetwork":
        def dense(n_in, n_out, scale=1.0):
            return rng.normal(size=(n_in, n_out)) * (scale / np.sqrt(n_in))

        params = {
            "w_in": dense(cfg.input_dim, cfg.hidden),
            "b_in": np.zeros(cfg.hidden),
        }
        for i in range(cfg.blocks):
            params[f"blk{i}_w1"] = dense(cfg.hidden, cfg.hidden)
            params[f"blk{i}_b1"] = np.zeros(cfg.hidden)
            params[f"blk{i}_w2"] = dense(cfg.hidden, cfg.hidden)
            params[f"blk{i}_b2"] = np.zeros(cfg.hidden)
        params["w_out"] = dense(cfg.hidden, cfg.channels, scale=0.5)
        params["b_out"] = np.zeros(cfg.channels)
        return cls(cfg, params)

    def param_names(self) -> list[str]:
        names = ["w_in", "b_in"]
        for i in range(self.cfg.blocks):
            names += [f"blk{i}_w1", f"blk{i}_b1", f"blk{i}_w2", f"blk{i}_b2"]
        names += ["w_out", "b_out"]
        return names

    def tensors(self) -> dict[str, ad.Tensor]:
        """Wrap current parameter arrays as trainable graph leaves."""
        return {k: ad.parameter(self.params[k], name=k) for k in self.param_names()}

    def forward_t(self, inputs, p: dict[str, ad.Tensor]) -> ad.Tensor:
        """Graph-mode forward over (M, input_dim) rows -> (M, C) velocities."""
        h = ad.tanh(ad.add_bias(ad.matmul(inputs, p["w_in"]), p["b_in"]))
        for i in range(self.cfg.blocks):
            z = ad.tanh(ad.add_bias(ad.matmul(h, p[f"blk{i}_w1"]), p[f"blk{i}_b1"]))
            z = ad.add_bias(ad.matmul(z, p[f"blk{i}_w2"]), p[f"blk{i}_b2"])
            h = ad.add(h, z)
        return ad.add_bias(ad.matmul(h, p["w_out"]), p["b_out"])

    def velocity(self, inputs: np.ndarray) -> np.ndarray:
        """Value-only forward (no graph)."""
        with ad.no_grad():
            out = self.forward_t(ad.constant(inputs), self.tensors())
        return out.value

    def velocity_for(
        self, x: np.ndarray, ref: np.ndarray, ctx: np.ndarray, cond: np.ndarray, t: float
    ) -> np.ndarray:
        """Convenience: assemble conditions then evaluate, value-only."""
        return self.velocity(assemble_inputs(x, ref, ctx, cond, t, self.cfg))

    def clone(self) -> "VelocityNetwork":
        return VelocityNetwork(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for k in self.param_names():
            self.params[k] = self.params[k] - lr * grads[k]


def generate_chunk(
    net: VelocityNetwork,
    ref: np.ndarray,
    ctx: np.ndarray,
    cond: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Euler integration of the learned field from noise (t=0) to data (t=1).

    ``x <- x + (1/steps) * v(x, conditions, t_k)`` over a uniform grid.
    """
    if steps < 1:
        raise ContractError("steps must be >= 1")
    cfg = net.cfg
    if x0 is None:
        x0 = rng.standard_normal((cfg.chunk_frames, cfg.channels))
    x = np.asarray(x0, dtype=np.float64).copy()
    dt = 1.0 / steps
    for k in range(steps):
        t_k = k / steps
        v = net.velocity(assemble_inputs(x, ref, ctx, cond, t_k, cfg))
        x = x + dt * v
    return x


# ---------------------------------------------------------------------------
# checkpoint format: header (magic, version, shape fields) + f64 parameters

_CKPT_MAGIC = b"HFCK"
_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, net: VelocityNetwork) -> None:
    cfg = net.cfg
    out = bytearray()
    out += _CKPT_MAGIC
    out += struct.pack(
        "<H8I",
        _CKPT_VERSION,
        cfg.channels,
        cfg.chunk_frames,
        cfg.ctx_frames,
        cfg.hidden,
        cfg.blocks,
        cfg.t_embed_dim,
        cfg.audio_layers,
        cfg.audio_feat_dim,
    )
    names = net.param_names()
    out += struct.pack("<I", len(names))
    for name in names:
        arr = np.asarray(net.params[name], dtype="<f8")
        encoded = name.encode()
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> VelocityNetwork:
    blob = Path(path).read_bytes()
    if blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    fields = struct.unpack("<H8I", blob[4 : 4 + 2 + 32])
    version = fields[0]
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cfg = ModelConfig(
        channels=fields[1],
        chunk_frames=fields[2],
        ctx_frames=fields[3],
        hidden=fields[4],
        blocks=fields[5],
        t_embed_dim=fields[6],
        audio_layers=fields[7],
        audio_feat_dim=fields[8],
    )
    offset = 4 + 2 + 32
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape.append(d)
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += size * 8
        params[name] = data.reshape(shape).copy()

    net = VelocityNetwork(cfg, params)
    expected = VelocityNetwork.init(cfg, np.random.default_rng(0))
    for name in expected.param_names():
        if name not in params:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if params[name].shape != expected.params[name].shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {params[name].shape}, "
                f"expected {expected.params[name].shape}"
            )
    return net


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
