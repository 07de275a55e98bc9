"""Reader for the `.rcds` channel dataset format (see the engine's
docs/formats.md): 16-byte magic, u32-LE JSON header length, JSON header,
then f64-LE interleaved complex entries, sample-major."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"RCFLOWDS" + bytes([0, 0, 0, 0, 0, 0, 0, 1])


@dataclass
class ChannelDataset:
    n_r: int
    n_t: int
    samples: np.ndarray  # (count, n_r, n_t) complex128
    normalized: bool
    model: dict

    def __len__(self) -> int:
        return self.samples.shape[0]


def load_channels(path) -> ChannelDataset:
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not a channel dataset (bad magic)")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        n_r, n_t, count = header["n_r"], header["n_t"], header["count"]
        payload = f.read(count * n_r * n_t * 16)
    if len(payload) != count * n_r * n_t * 16:
        raise ValueError(f"{path}: truncated payload")
    flat = np.frombuffer(payload, dtype="<f8").reshape(count, n_r, n_t, 2)
    samples = (flat[..., 0] + 1j * flat[..., 1]).astype(np.complex128)
    return ChannelDataset(n_r=n_r, n_t=n_t, samples=samples,
                          normalized=header["normalized"], model=header.get("model", {}))


def to_planes(samples: np.ndarray) -> np.ndarray:
    """Complex (B, H, W) -> real (B, 2, H, W) float32 with plane 0 = real part."""
    return np.stack([samples.real, samples.imag], axis=1).astype(np.float32)
