"""Weight-file and parity-fixture export (formats in the engine's docs/formats.md)."""

from __future__ import annotations

import base64
import json
import math
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .graph import GraphModel, GraphSpec

WEIGHT_MAGIC = b"RCFLOWNN"
WEIGHT_VERSION = 1


def export_weights(spec: GraphSpec, weights: dict[str, torch.Tensor], path) -> None:
    """Write the graph plus named f32 tensors, offsets laid out gap-free in
    the graph's declaration order."""
    tensor_specs, chunks, offset = [], [], 0
    for name, shape in spec.shapes.items():
        arr = weights[name].detach().cpu().numpy().astype("<f4")
        if tuple(arr.shape) != tuple(shape):
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        tensor_specs.append({"name": name, "shape": list(shape), "offset": offset, "dtype": "f32"})
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    blob = b"".join(chunks)
    header = {
        "graph": spec.nodes,
        "tensors": tensor_specs,
        "time_embed_dim": spec.time_embed_dim,
        "blob_crc32": zlib.crc32(blob),
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(bytes([WEIGHT_VERSION]))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_weights(path) -> tuple[GraphSpec, dict[str, torch.Tensor]]:
    """Read a weight file back into a spec + f32 tensors (round-trip checks)."""
    data = Path(path).read_bytes()
    if data[:8] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: bad magic")
    if data[8] != WEIGHT_VERSION:
        raise ValueError(f"{path}: unsupported version {data[8]}")
    (header_len,) = struct.unpack_from("<I", data, 9)
    header = json.loads(data[13 : 13 + header_len].decode("utf-8"))
    blob = data[13 + header_len :]
    if zlib.crc32(blob) != header["blob_crc32"]:
        raise ValueError(f"{path}: blob checksum mismatch")
    spec = GraphSpec(nodes=header["graph"], time_embed_dim=header["time_embed_dim"])
    tensors = {}
    for ts in header["tensors"]:
        count = int(np.prod(ts["shape"]))
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=ts["offset"])
        tensors[ts["name"]] = torch.from_numpy(flat.reshape(ts["shape"]).copy())
        spec.shapes[ts["name"]] = tuple(ts["shape"])
    return spec, tensors


def _encode_complex(m: np.ndarray) -> str:
    inter = np.empty(m.shape + (2,), dtype="<f8")
    inter[..., 0] = m.real
    inter[..., 1] = m.imag
    return base64.b64encode(inter.tobytes()).decode("ascii")


def export_fixtures(model: GraphModel, weights: dict[str, torch.Tensor], clean: np.ndarray,
                    path, n: int, seed: int) -> list[dict]:
    """Evaluate ``n`` (state, t, velocity) triples in float64 from the f32
    weights and write them as the engine's parity-fixture JSON.

    States are drawn from the training path (clean + t * unit noise) around
    held-out clean samples; t values cover a fixed grid plus random draws.
    """
    if n < 1:
        raise ValueError("fixture count must be positive")
    gen = torch.Generator().manual_seed(seed)
    w64 = {k: v.detach().double() for k, v in weights.items()}
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    records = []
    for i in range(n):
        t = grid[i] if i < len(grid) else float(torch.rand(1, generator=gen))
        idx = int(torch.randint(clean.shape[0], (1,), generator=gen))
        h0 = clean[idx]
        noise_r = torch.randn(h0.shape, generator=gen).numpy()
        noise_i = torch.randn(h0.shape, generator=gen).numpy()
        state = h0 + t * (noise_r + 1j * noise_i) / math.sqrt(2.0)
        planes = torch.from_numpy(np.stack([state.real, state.imag])[None]).double()
        with torch.no_grad():
            out = model(planes, torch.tensor([t], dtype=torch.float64), weights=w64)
        velocity = out[0, 0].numpy() + 1j * out[0, 1].numpy()
        records.append({
            "rows": state.shape[0],
            "cols": state.shape[1],
            "t": t,
            "input_b64": _encode_complex(state),
            "expected_b64": _encode_complex(velocity),
        })
    Path(path).write_text(json.dumps(records))
    return records
