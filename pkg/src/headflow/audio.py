"""Temporal audio context: fixed-window queue, toy encoder, condition slicing.

A raw audio stream of any length is standardized into a fixed window of
``t_max`` seconds: short streams get a leading-silence pad so the newest
audio always sits at the tail, long streams keep only the trailing window.
A deterministic multi-layer feature encoder (RMS envelope, zero-crossing
rate, coarse spectral bands) turns the window into one feature frame per
video frame; the driving condition for a chunk is the trailing slice of
that feature sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    t_max: int = 8
    feature_rate: int = 25
    layers: int = 3
    feat_dim: int = 8

    def __post_init__(self):
        if self.sample_rate % self.feature_rate != 0:
            raise ContractError(
                f"sample_rate {self.sample_rate} not divisible by feature_rate {self.feature_rate}"
            )
        if (self.t_max * self.feature_rate) != int(self.t_max * self.feature_rate):
            raise ContractError("t_max * feature_rate must be an integer")

    @property
    def queue_len(self) -> int:
        return self.t_max * self.sample_rate

    @property
    def hop(self) -> int:
        """Samples per feature frame."""
        return self.sample_rate // self.feature_rate

    @property
    def frames(self) -> int:
        """S: feature frames covering the full window."""
        return self.t_max * self.feature_rate


@dataclass
class AudioQueue:
    """Standardized fixed-length window; leading ``pad_len`` samples are silence."""

    samples: np.ndarray
    pad_len: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)


def build_queue(raw: np.ndarray, cfg: AudioConfig) -> AudioQueue:
    """Standardize a raw stream into the fixed window.

    Shorter streams are left-padded with silence (newest audio at the tail);
    longer streams keep only the trailing window. Empty input is legal.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    q = cfg.queue_len
    n = raw.shape[0]
    if n < q:
        samples = np.concatenate([np.zeros(q - n), raw])
        return AudioQueue(samples=samples, pad_len=q - n)
    return AudioQueue(samples=raw[n - q :].copy(), pad_len=0)


def encode(queue: AudioQueue, cfg: AudioConfig) -> np.ndarray:
    """Deterministic multi-layer features, shape (S, layers, feat_dim).

    Each feature frame is computed only from its own hop window, so the
    encoding is causal within the queue and shift-consistent by construction.
    Layer 0: RMS envelope over feat_dim sub-windows. Layer 1: zero-crossing
    rate. Layer 2: coarse spectral band magnitudes (RMS-consistent scale).
    """
    if queue.samples.shape[0] != cfg.queue_len:
        raise ContractError(
            f"queue length {queue.samples.shape[0]} != configured {cfg.queue_len}"
        )
    s, hop, d = cfg.frames, cfg.hop, cfg.feat_dim
    windows = queue.samples.reshape(s, hop)
    out = np.zeros((s, cfg.layers, d))

    if hop % d == 0:
        sub = windows.reshape(s, d, hop // d)
        out[:, 0, :] = np.sqrt(np.mean(sub * sub, axis=2))
        prod = sub[:, :, :-1] * sub[:, :, 1:]
        denom = max(hop // d - 1, 1)
        out[:, 1, :] = np.sum(prod < 0, axis=2) / denom
    else:
        for i in range(s):
            for j, piece in enumerate(np.array_split(windows[i], d)):
                if piece.size == 0:
                    continue
                out[i, 0, j] = np.sqrt(np.mean(piece * piece))
                if piece.size > 1:
                    out[i, 1, j] = np.sum(piece[:-1] * piece[1:] < 0) / (piece.size - 1)

    if cfg.layers >= 3:
        spec = np.abs(np.fft.rfft(windows, axis=1)) ** 2
        bins = spec.shape[1]
        edges = np.linspace(0, bins, d + 1).astype(int)
        for j in range(d):
            lo, hi = edges[j], edges[j + 1]
            if hi > lo:
                out[:, 2, j] = np.sqrt(2.0 * np.sum(spec[:, lo:hi], axis=1)) / hop
    return out


def extract_condition(features: np.ndarray, n_frames: int) -> np.ndarray:
    """Trailing ``n_frames`` rows of the feature sequence, order preserved."""
    s = features.shape[0]
    if not (1 <= n_frames <= s):
        raise ContractError(f"condition window {n_frames} out of range [1, {s}]")
    return features[s - n_frames :]


class RollingAudioCache:
    """Rolling raw-audio history; only the trailing window can matter.

    Feeding the cache sample-by-sample and building the queue at any point
    gives the same result as one-shot construction over the full history.
    """

    def __init__(self, cfg: AudioConfig):
        self.cfg = cfg
        self._buf = np.zeros(0)
        self.total_pushed = 0

    def push(self, samples: np.ndarray) -> int:
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self.total_pushed += samples.shape[0]
        self._buf = np.concatenate([self._buf, samples])
        q = self.cfg.queue_len
        if self._buf.shape[0] > q:
            self._buf = self._buf[self._buf.shape[0] - q :]
        return samples.shape[0]

    @property
    def seconds(self) -> float:
        return self._buf.shape[0] / self.cfg.sample_rate

    def queue(self) -> AudioQueue:
        return build_queue(self._buf, self.cfg)


# ---------------------------------------------------------------------------
# audio file format: raw little-endian float32 PCM, mono, sidecar descriptor


def write_audio(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    path = Path(path)
    data = np.asarray(samples, dtype="<f4")
    path.write_bytes(data.tobytes())
    desc = path.with_suffix(path.suffix + ".desc")
    duration = data.shape[0] / sample_rate
    desc.write_text(f"sample_rate={sample_rate}\nduration_s={duration}\n")


def read_audio(path: str | Path) -> tuple[np.ndarray, int]:
    path = Path(path)
    desc = path.with_suffix(path.suffix + ".desc")
    if not desc.exists():
        raise ContractError(f"missing sidecar descriptor {desc}")
    meta = {}
    for line in desc.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    rate = int(meta["sample_rate"])
    samples = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    return samples, rate
