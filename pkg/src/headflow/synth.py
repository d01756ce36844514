"""Synthetic aligned (audio, latent-video, reference) triples.

The generative process is fully determined by a seed, so every metric has
an exact oracle: channel 0 of the latents is the smoothed per-frame RMS
envelope of the audio (sync oracle), channels 1..4 are a constant identity
vector (identity oracle), channels 5..7 follow a seeded AR(1) process
(something genuinely unpredictable for the distillation stage to match).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import read_audio, write_audio
from .errors import ContractError

CHANNELS = 8
MOUTH_CHANNEL = 0
IDENTITY_CHANNELS = slice(1, 5)
POSE_CHANNELS = slice(5, 8)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    duration_s: float = 4.0
    sample_rate: int = 16000
    fps: int = 25
    identity: tuple[float, ...] | None = None  # 4 values in [-1, 1]; None -> seeded draw
    envelope_half_life: float = 1.5  # frames
    noise_ar_coeff: float = 0.9
    noise_scale: float = 0.15  # stationary std of pose channels
    burst_amp: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        if abs(self.noise_ar_coeff) >= 1.0:
            raise ContractError("noise_ar_coeff must satisfy |a| < 1")
        n_frames = self.fps * self.duration_s
        if abs(n_frames - round(n_frames)) > 1e-9:
            raise ContractError("fps * duration_s must be integral")
        if self.identity is not None and len(self.identity) != 4:
            raise ContractError("identity vector must have 4 entries")

    @property
    def n_frames(self) -> int:
        return int(round(self.fps * self.duration_s))

    @property
    def hop(self) -> int:
        return self.sample_rate // self.fps


@dataclass
class SynthSample:
    spec: SynthSpec
    audio: np.ndarray  # (n_samples,)
    latents: np.ndarray  # (n_frames, CHANNELS)
    ref: np.ndarray  # (CHANNELS,)

    @property
    def identity(self) -> np.ndarray:
        return self.ref[IDENTITY_CHANNELS]


def smooth_envelope(rms: np.ndarray, half_life: float) -> np.ndarray:
    """Exponential smoothing with the configured half-life (in frames)."""
    alpha = 0.5 ** (1.0 / half_life) if half_life > 0 else 0.0
    out = np.zeros_like(rms)
    prev = 0.0
    for i, v in enumerate(rms):
        prev = alpha * prev + (1.0 - alpha) * v
        out[i] = prev
    return out


def frame_rms(audio: np.ndarray, hop: int, n_frames: int) -> np.ndarray:
    w = audio[: n_frames * hop].reshape(n_frames, hop)
    return np.sqrt(np.mean(w * w, axis=1))


def generate_sample(spec: SynthSpec) -> SynthSample:
    """Deterministic sample: seeded sinusoid bursts plus aligned latents."""
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.duration_s * spec.sample_rate))
    audio = np.zeros(n_samples)

    n_bursts = max(1, int(spec.duration_s / 0.8))
    ramp = int(0.01 * spec.sample_rate)
    for _ in range(n_bursts):
        dur = rng.uniform(0.2, 0.6)
        start = rng.uniform(0.0, max(spec.duration_s - dur, 0.0))
        freq = rng.uniform(200.0, 1500.0)
        amp = rng.uniform(*spec.burst_amp)
        i0 = int(start * spec.sample_rate)
        i1 = min(i0 + int(dur * spec.sample_rate), n_samples)
        t = np.arange(i1 - i0) / spec.sample_rate
        burst = amp * np.sin(2 * np.pi * freq * t)
        # raised-cosine edges so burst boundaries don't click
        m = min(ramp, burst.shape[0] // 2)
        if m > 0:
            win = 0.5 * (1 - np.cos(np.pi * np.arange(m) / m))
            burst[:m] *= win
            burst[-m:] *= win[::-1]
        audio[i0:i1] += burst

    rms = frame_rms(audio, spec.hop, spec.n_frames)
    env = smooth_envelope(rms, spec.envelope_half_life)

    identity = (
        np.asarray(spec.identity, dtype=np.float64)
        if spec.identity is not None
        else rng.uniform(-1.0, 1.0, size=4)
    )

    a = spec.noise_ar_coeff
    sigma_eta = spec.noise_scale * np.sqrt(1.0 - a * a)
    pose = np.zeros((spec.n_frames, 3))
    state = rng.normal(size=3) * spec.noise_scale
    for f in range(spec.n_frames):
        state = a * state + sigma_eta * rng.normal(size=3)
        pose[f] = state

    latents = np.zeros((spec.n_frames, CHANNELS))
    latents[:, MOUTH_CHANNEL] = env
    latents[:, IDENTITY_CHANNELS] = identity
    latents[:, POSE_CHANNELS] = pose
    return SynthSample(spec=spec, audio=audio, latents=latents, ref=latents[0].copy())


@dataclass
class ChunkRecord:
    """One training/eval unit: a latent chunk plus its live-session context."""

    index: int
    frames: np.ndarray  # (N, C)
    queue_audio: np.ndarray  # raw audio history up to the chunk's end
    preceding: np.ndarray  # frames before the chunk, (0, C) for the first chunk


def chunk_dataset(sample: SynthSample, n_chunk: int) -> list[ChunkRecord]:
    """Non-overlapping chunks with the audio history a live session would hold.

    Chunk ``j`` covers frames ``[j*N, (j+1)*N)``; at generation time the
    session has heard audio up to the chunk's last frame, so the snapshot is
    the raw history up to ``(j+1)*N*hop`` samples.
    """
    total = sample.latents.shape[0]
    if total < n_chunk:
        raise ContractError(f"sample has {total} frames < chunk size {n_chunk}")
    hop = sample.spec.hop
    records = []
    for j in range(total // n_chunk):
        lo, hi = j * n_chunk, (j + 1) * n_chunk
        records.append(
            ChunkRecord(
                index=j,
                frames=sample.latents[lo:hi].copy(),
                queue_audio=sample.audio[: hi * hop].copy(),
                preceding=sample.latents[max(lo - n_chunk, 0) : lo].copy(),
            )
        )
    return records


# ---------------------------------------------------------------------------
# latent binary format + dataset manifest

_LAT_MAGIC = b"HFLA"
_LAT_VERSION = 1


def write_latents(path: str | Path, latents: np.ndarray) -> None:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2:
        raise ContractError("latent file stores a rank-2 (frames, channels) array")
    header = _LAT_MAGIC + struct.pack(
        "<HII", _LAT_VERSION, latents.shape[0], latents.shape[1]
    )
    Path(path).write_bytes(header + latents.astype("<f8").tobytes())


def read_latents(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != _LAT_MAGIC:
        raise ContractError(f"{path}: not a latent file")
    version, frames, channels = struct.unpack("<HII", blob[4:14])
    if version != _LAT_VERSION:
        raise ContractError(f"{path}: unsupported latent file version {version}")
    data = np.frombuffer(blob[14:], dtype="<f8")
    if data.shape[0] != frames * channels:
        raise ContractError(f"{path}: truncated latent file")
    return data.reshape(frames, channels).copy()


def save_dataset(samples: list[SynthSample], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with manifest.open("w") as fh:
        for i, sample in enumerate(samples):
            audio_name = f"sample_{i:04d}.f32"
            lat_name = f"sample_{i:04d}.lat"
            write_audio(out_dir / audio_name, sample.audio, sample.spec.sample_rate)
            write_latents(out_dir / lat_name, sample.latents)
            record = {
                "seed": sample.spec.seed,
                "duration_s": sample.spec.duration_s,
                "sample_rate": sample.spec.sample_rate,
                "fps": sample.spec.fps,
                "identity": [float(v) for v in sample.identity],
                "audio": audio_name,
                "latents": lat_name,
                "envelope_half_life": sample.spec.envelope_half_life,
                "noise_ar_coeff": sample.spec.noise_ar_coeff,
                "noise_scale": sample.spec.noise_scale,
            }
            fh.write(json.dumps(record) + "\n")
    return manifest


def load_dataset(dataset_dir: str | Path) -> list[SynthSample]:
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / "manifest.jsonl"
    if not manifest.exists():
        raise ContractError(f"no manifest.jsonl under {dataset_dir}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        spec = SynthSpec(
            seed=rec["seed"],
            duration_s=rec["duration_s"],
            sample_rate=rec["sample_rate"],
            fps=rec["fps"],
            identity=tuple(rec["identity"]),
            envelope_half_life=rec.get("envelope_half_life", 1.5),
            noise_ar_coeff=rec.get("noise_ar_coeff", 0.9),
            noise_scale=rec.get("noise_scale", 0.15),
        )
        audio, _ = read_audio(dataset_dir / rec["audio"])
        latents = read_latents(dataset_dir / rec["latents"])
        samples.append(
            SynthSample(spec=spec, audio=audio, latents=latents, ref=latents[0].copy())
        )
    return samples


def make_specs(base_seed: int, count: int, duration_s: float = 4.0, **kwargs) -> list[SynthSpec]:
    """Independent per-sample seeds derived from one base seed."""
    seeds = np.random.SeedSequence(base_seed).generate_state(count)
    return [SynthSpec(seed=int(s), duration_s=duration_s, **kwargs) for s in seeds]
