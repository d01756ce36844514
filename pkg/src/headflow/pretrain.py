"""Streaming-aware pre-training of the velocity network.

The loss regresses the network onto the velocity of the linear interpolant
between noise and data (target ``x1 - x0``). Batches are built through the
same queue -> encode -> trailing-window path that live inference uses, so
there is no train-only audio shortcut. Motion context is sampled
probabilistically: usually the frames adjacent to the target chunk, and
occasionally a lone frame to simulate the cold start where only the
reference image exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio import AudioConfig, build_queue, encode, extract_condition
from .errors import ContractError, DivergenceError
from .model import ModelConfig, VelocityNetwork, assemble_inputs
from .synth import SynthSample, chunk_dataset


@dataclass(frozen=True)
class MotionSamplingConfig:
    p_full: float = 0.9
    p_single: float = 0.1
    n: int = 5

    def __post_init__(self):
        if abs(self.p_full + self.p_single - 1.0) > 1e-12:
            raise ContractError("p_full + p_single must equal 1")


def sample_motion_context(
    gt: np.ndarray, cfg: MotionSamplingConfig, rng: np.random.Generator
) -> np.ndarray:
    """First ``n`` frames of the window with p_full, else only frame 0."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape[0] < cfg.n:
        raise ContractError(f"context window has {gt.shape[0]} frames < n={cfg.n}")
    if rng.random() < cfg.p_single:
        return gt[0:1].copy()
    return gt[: cfg.n].copy()


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolant ``t*x1 + (1-t)*x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ContractError(f"interpolate: shape mismatch {x0.shape} vs {x1.shape}")
    if not (0.0 <= t <= 1.0):
        raise ContractError(f"interpolate: t={t} outside [0, 1]")
    return t * x1 + (1.0 - t) * x0


@dataclass
class FlowBatchItem:
    """Everything needed for one chunk's term of the flow-matching loss."""

    x0: np.ndarray  # (N, C) noise
    x1: np.ndarray  # (N, C) data
    t: float
    ref: np.ndarray  # (C,)
    ctx: np.ndarray  # (n_ctx, C)
    cond: np.ndarray  # (N, layers, D)


def flow_matching_loss(
    net: VelocityNetwork, ptensors: dict[str, ad.Tensor], batch: list[FlowBatchItem]
) -> ad.Tensor:
    """MSE between predicted and target velocities, differentiable in theta."""
    if not batch:
        raise ContractError("flow_matching_loss: empty batch")
    rows = []
    targets = []
    for item in batch:
        x_t = interpolate(item.x0, item.x1, item.t)
        rows.append(assemble_inputs(x_t, item.ref, item.ctx, item.cond, item.t, net.cfg))
        targets.append(item.x1 - item.x0)
    inputs = ad.constant(np.concatenate(rows, axis=0))
    target = ad.constant(np.concatenate(targets, axis=0))
    pred = net.forward_t(inputs, ptensors)
    return ad.mse(pred, target)


class TrainingPool:
    """Chunked dataset with audio conditions precomputed via the live path.

    Every chunk's condition window is produced by literally running
    build_queue -> encode -> extract_condition on the audio history the
    live session would hold at that point.
    """

    def __init__(
        self,
        dataset: list[SynthSample],
        model_cfg: ModelConfig,
        audio_cfg: AudioConfig,
        motion_cfg: MotionSamplingConfig,
    ):
        if not dataset:
            raise ContractError("empty dataset")
        self.model_cfg = model_cfg
        self.audio_cfg = audio_cfg
        self.motion_cfg = motion_cfg
        self.entries = []
        n = model_cfg.chunk_frames
        for sample in dataset:
            for rec in chunk_dataset(sample, n):
                feats = encode(build_queue(rec.queue_audio, audio_cfg), audio_cfg)
                cond = extract_condition(feats, n)
                self.entries.append(
                    {
                        "ref": sample.ref,
                        "x1": rec.frames,
                        "preceding": rec.preceding,
                        "cond": cond,
                        "index": rec.index,
                    }
                )

    def draw_batch(self, rng: np.random.Generator, batch_size: int) -> list[FlowBatchItem]:
        cfg = self.model_cfg
        idx = rng.integers(0, len(self.entries), size=batch_size)
        batch = []
        for i in idx:
            e = self.entries[int(i)]
            if e["index"] == 0:
                ctx = e["ref"][None, :]  # cold start: context is the reference alone
            else:
                window = e["preceding"][-self.motion_cfg.n :]
                ctx = sample_motion_context(window, self.motion_cfg, rng)
            batch.append(
                FlowBatchItem(
                    x0=rng.standard_normal(e["x1"].shape),
                    x1=e["x1"],
                    t=float(rng.uniform(0.0, 1.0)),
                    ref=e["ref"],
                    ctx=ctx,
                    cond=e["cond"],
                )
            )
        return batch


def pretrain_step(
    net: VelocityNetwork, batch: list[FlowBatchItem], lr: float
) -> float:
    """One plain gradient-descent step; rejects non-finite losses."""
    ptensors = net.tensors()
    loss = flow_matching_loss(net, ptensors, batch)
    value = float(loss.value)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite flow-matching loss {value}")
    grads = ad.backward(loss, ptensors)
    net.apply_gradients(grads, lr)
    return value


def eval_loss(net: VelocityNetwork, batch: list[FlowBatchItem]) -> float:
    with ad.no_grad():
        loss = flow_matching_loss(net, net.tensors(), batch)
    return float(loss.value)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 0.5
    seed: int = 0
    eval_batch_size: int = 64


@dataclass
class PretrainResult:
    losses: list[float] = field(default_factory=list)
    eval_loss_start: float = 0.0
    eval_loss_end: float = 0.0


def pretrain(
    dataset: list[SynthSample],
    model_cfg: ModelConfig,
    cfg: PretrainConfig,
    audio_cfg: AudioConfig | None = None,
    motion_cfg: MotionSamplingConfig | None = None,
    net: VelocityNetwork | None = None,
) -> tuple[VelocityNetwork, PretrainResult]:
    """Full Stage-1 run: seeded, deterministic, returns the loss history."""
    audio_cfg = audio_cfg or AudioConfig()
    motion_cfg = motion_cfg or MotionSamplingConfig(n=model_cfg.ctx_frames)
    pool = TrainingPool(dataset, model_cfg, audio_cfg, motion_cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    batch_rng = np.random.default_rng(seeds[1])
    eval_rng = np.random.default_rng(seeds[2])
    if net is None:
        net = VelocityNetwork.init(model_cfg, init_rng)

    eval_batch = pool.draw_batch(eval_rng, cfg.eval_batch_size)
    result = PretrainResult()
    result.eval_loss_start = eval_loss(net, eval_batch)
    for _ in range(cfg.steps):
        batch = pool.draw_batch(batch_rng, cfg.batch_size)
        result.losses.append(pretrain_step(net, batch, cfg.lr))
    result.eval_loss_end = eval_loss(net, eval_batch)
    return net, result
