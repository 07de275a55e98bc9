import json
import struct

import numpy as np
import pytest

MAGIC = b"RCFLOWDS" + bytes([0, 0, 0, 0, 0, 0, 0, 1])


def write_rcds(path, samples: np.ndarray, normalized=False, model=None):
    """Independent dataset writer (format per the engine's docs/formats.md)."""
    count, n_r, n_t = samples.shape
    header = json.dumps({"n_r": n_r, "n_t": n_t, "count": count,
                         "normalized": normalized, "model": model or {}},
                        sort_keys=True).encode()
    inter = np.empty((count, n_r, n_t, 2), dtype="<f8")
    inter[..., 0] = samples.real
    inter[..., 1] = samples.imag
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(inter.tobytes())
    return path


def iid_channels(count, n_r, n_t, seed):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((count, n_r, n_t))
            + 1j * rng.standard_normal((count, n_r, n_t))) / np.sqrt(2.0)


@pytest.fixture
def tiny_dataset(tmp_path):
    samples = iid_channels(320, 4, 16, seed=0)
    return write_rcds(tmp_path / "tiny.rcds", samples)
