import json
import struct
import zlib

import numpy as np
import pytest

from rcflow.core import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2.0


def random_psd(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    k = rank if rank is not None else n
    a = (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) / np.sqrt(2)
    return a @ a.conj().T


def write_weight_file(path, graph, tensors, time_embed_dim, *, with_crc=True,
                      truncate_blob=0, corrupt_magic=False, header_extra=None):
    """Independent weight-file writer used to exercise the loader.

    ``tensors`` is an ordered dict name -> float32 array; offsets are laid out
    gap-free in iteration order.
    """
    specs, blob = [], b""
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        specs.append({"name": name, "shape": list(arr.shape), "offset": len(blob), "dtype": "f32"})
        blob += arr.tobytes()
    if truncate_blob:
        blob = blob[:-truncate_blob]
    header = {"graph": graph, "tensors": specs, "time_embed_dim": time_embed_dim}
    if with_crc:
        header["blob_crc32"] = zlib.crc32(blob)
    if header_extra:
        header.update(header_extra)
    header_bytes = json.dumps(header).encode()
    magic = b"XXFLOWNN" if corrupt_magic else b"RCFLOWNN"
    with open(path, "wb") as f:
        f.write(magic)
        f.write(bytes([1]))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)
    return path
