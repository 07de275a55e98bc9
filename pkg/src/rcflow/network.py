"""Graph-interpreted network velocity fields and the weight file loader.

The network architecture is data-driven: the weight file header carries an
ordered list of layer descriptors over a fixed kernel vocabulary, and this
module executes that graph in float64. The file layout and descriptor schema
are documented in docs/formats.md; the trainer writes the same format.

Kernel vocabulary
-----------------
conv2d (zero padding (k-1)//2, stride 1 or 2), group_norm (eps 1e-5),
silu, gelu (exact erf form), linear, time_scale_shift, upsample_nearest2x,
concat (channel axis), add.

Reserved value names: ``input`` is the 2-plane real/imaginary image of the
complex state; ``time_embedding`` is the sinusoidal embedding of t. The last
node's output is the network output and must again be a 2-plane image of the
input's spatial size.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np
from scipy.special import erf, expit

from .core import as_complex_matrix

__all__ = ["NetworkField", "load_network", "sinusoidal_time_embedding", "WEIGHT_MAGIC", "WEIGHT_VERSION"]

WEIGHT_MAGIC = b"RCFLOWNN"
WEIGHT_VERSION = 1
GROUP_NORM_EPS = 1e-5

SUPPORTED_KINDS = {
    "conv2d",
    "group_norm",
    "silu",
    "gelu",
    "linear",
    "time_scale_shift",
    "upsample_nearest2x",
    "concat",
    "add",
}


def sinusoidal_time_embedding(t: float, dim: int) -> np.ndarray:
    """Positional-encoding embedding of a scalar time.

    For k < dim/2: emb[k] = sin(t * w_k) and emb[dim/2 + k] = cos(t * w_k)
    with w_k = 10000^(-2k/dim).
    """
    if dim % 2 != 0 or dim <= 0:
        raise ValueError("time embedding dimension must be a positive even number")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half, dtype=np.float64) / dim)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _silu(x):
    return x * expit(x)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    c_out, c_in, kh, kw = weight.shape
    pad_h, pad_w = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    h_out = (x.shape[1] + 2 * pad_h - kh) // stride + 1
    w_out = (x.shape[2] + 2 * pad_w - kw) // stride + 1
    cols = np.empty((c_in, kh, kw, h_out, w_out), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, di, dj] = xp[:, di : di + stride * h_out : stride, dj : dj + stride * w_out : stride]
    out = weight.reshape(c_out, -1) @ cols.reshape(c_in * kh * kw, h_out * w_out)
    return out.reshape(c_out, h_out, w_out) + bias[:, None, None]


def _group_norm(x: np.ndarray, groups: int, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    c = x.shape[0]
    g = x.reshape(groups, -1)
    mean = g.mean(axis=1, keepdims=True)
    var = g.var(axis=1, keepdims=True)
    normed = ((g - mean) / np.sqrt(var + GROUP_NORM_EPS)).reshape(x.shape)
    return normed * weight[:, None, None] + bias[:, None, None]


class NetworkField:
    """Velocity field backed by a layer graph loaded from a weight file."""

    def __init__(self, graph: list[dict], tensors: dict[str, np.ndarray], time_embed_dim: int):
        self.graph = graph
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.time_embed_dim = int(time_embed_dim)
        self._shape_cache: dict[tuple[int, int], None] = {}
        self._validate_structure()

    # -- structural checks that do not need an input shape -----------------

    def _validate_structure(self) -> None:
        if not self.graph:
            raise ValueError("network graph is empty")
        defined = {"input", "time_embedding"}
        for node in self.graph:
            kind = node.get("kind")
            name = node.get("name")
            if kind not in SUPPORTED_KINDS:
                raise ValueError(f"unsupported layer kind {kind!r} in node {name!r}")
            if not name or name in defined:
                raise ValueError(f"node name {name!r} missing or already defined")
            inputs = node.get("inputs")
            if not isinstance(inputs, list) or not inputs:
                raise ValueError(f"node {name!r} has no inputs list")
            for inp in inputs:
                if inp not in defined:
                    raise ValueError(f"node {name!r} references undefined input {inp!r}")
            for key in ("weight", "bias"):
                if key in node and node[key] not in self.tensors:
                    raise ValueError(f"node {name!r} references missing tensor {node[key]!r}")
            defined.add(name)

    # -- shape validation pass (runs before any arithmetic) ----------------

    def _infer_shapes(self, n_r: int, n_t: int) -> None:
        shapes: dict[str, tuple] = {"input": (2, n_r, n_t), "time_embedding": (self.time_embed_dim,)}

        def feature(name, node):
            s = shapes[name]
            if len(s) != 3:
                raise ValueError(f"node {node['name']!r}: input {name!r} is not a feature map (shape {s})")
            return s

        def vector(name, node):
            s = shapes[name]
            if len(s) != 1:
                raise ValueError(f"node {node['name']!r}: input {name!r} is not a vector (shape {s})")
            return s

        for node in self.graph:
            kind, name, inputs = node["kind"], node["name"], node["inputs"]
            if kind == "conv2d":
                c, h, w = feature(inputs[0], node)
                wt = self.tensors[node["weight"]]
                stride = int(node.get("stride", 1))
                if wt.ndim != 4 or wt.shape[1] != c:
                    raise ValueError(f"node {name!r}: conv weight shape {wt.shape} does not accept {c} channels")
                kh, kw = wt.shape[2], wt.shape[3]
                out = (wt.shape[0], (h + 2 * ((kh - 1) // 2) - kh) // stride + 1,
                       (w + 2 * ((kw - 1) // 2) - kw) // stride + 1)
                if self.tensors[node["bias"]].shape != (wt.shape[0],):
                    raise ValueError(f"node {name!r}: bias shape mismatch")
                shapes[name] = out
            elif kind == "group_norm":
                c, h, w = feature(inputs[0], node)
                groups = int(node["groups"])
                if c % groups != 0:
                    raise ValueError(f"node {name!r}: {c} channels not divisible by {groups} groups")
                if self.tensors[node["weight"]].shape != (c,) or self.tensors[node["bias"]].shape != (c,):
                    raise ValueError(f"node {name!r}: affine parameter shape mismatch")
                shapes[name] = (c, h, w)
            elif kind in ("silu", "gelu"):
                shapes[name] = shapes[inputs[0]]
            elif kind == "linear":
                (d,) = vector(inputs[0], node)
                wt = self.tensors[node["weight"]]
                if wt.ndim != 2 or wt.shape[1] != d:
                    raise ValueError(f"node {name!r}: linear weight shape {wt.shape} does not accept dim {d}")
                shapes[name] = (wt.shape[0],)
            elif kind == "time_scale_shift":
                c, h, w = feature(inputs[0], node)
                (d,) = vector(inputs[1], node)
                wt = self.tensors[node["weight"]]
                if wt.shape != (2 * c, d):
                    raise ValueError(f"node {name!r}: scale-shift weight shape {wt.shape}, expected {(2 * c, d)}")
                shapes[name] = (c, h, w)
            elif kind == "upsample_nearest2x":
                c, h, w = feature(inputs[0], node)
                shapes[name] = (c, 2 * h, 2 * w)
            elif kind == "concat":
                c1, h1, w1 = feature(inputs[0], node)
                c2, h2, w2 = feature(inputs[1], node)
                if (h1, w1) != (h2, w2):
                    raise ValueError(f"node {name!r}: concat spatial mismatch {(h1, w1)} vs {(h2, w2)}")
                shapes[name] = (c1 + c2, h1, w1)
            elif kind == "add":
                s1, s2 = shapes[inputs[0]], shapes[inputs[1]]
                if s1 != s2:
                    raise ValueError(f"node {name!r}: add shape mismatch {s1} vs {s2}")
                shapes[name] = s1
        out_shape = shapes[self.graph[-1]["name"]]
        if out_shape != (2, n_r, n_t):
            raise ValueError(f"network output shape {out_shape} does not match input (2, {n_r}, {n_t})")

    # -- execution ----------------------------------------------------------

    def eval(self, h: np.ndarray, t: float) -> np.ndarray:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        h = as_complex_matrix(h)
        key = h.shape
        if key not in self._shape_cache:
            self._infer_shapes(*key)
            self._shape_cache[key] = None
        values: dict[str, np.ndarray] = {
            "input": np.stack([h.real, h.imag]),
            "time_embedding": sinusoidal_time_embedding(t, self.time_embed_dim),
        }
        for node in self.graph:
            kind, inputs = node["kind"], node["inputs"]
            x = values[inputs[0]]
            if kind == "conv2d":
                out = _conv2d(x, self.tensors[node["weight"]], self.tensors[node["bias"]],
                              int(node.get("stride", 1)))
            elif kind == "group_norm":
                out = _group_norm(x, int(node["groups"]), self.tensors[node["weight"]],
                                  self.tensors[node["bias"]])
            elif kind == "silu":
                out = _silu(x)
            elif kind == "gelu":
                out = _gelu(x)
            elif kind == "linear":
                out = self.tensors[node["weight"]] @ x + self.tensors[node["bias"]]
            elif kind == "time_scale_shift":
                ss = self.tensors[node["weight"]] @ values[inputs[1]] + self.tensors[node["bias"]]
                c = x.shape[0]
                out = x * (1.0 + ss[:c, None, None]) + ss[c:, None, None]
            elif kind == "upsample_nearest2x":
                out = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
            elif kind == "concat":
                out = np.concatenate([x, values[inputs[1]]], axis=0)
            else:  # add
                out = x + values[inputs[1]]
            values[node["name"]] = out
        planes = values[self.graph[-1]["name"]]
        return planes[0] + 1j * planes[1]


def load_network(path) -> NetworkField:
    """Load a weight file (format in docs/formats.md) into a NetworkField."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: bad weight file magic")
    off = len(WEIGHT_MAGIC)
    version = blob[off]
    if version != WEIGHT_VERSION:
        raise ValueError(f"{path}: unsupported weight file version {version}")
    off += 1
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + header_len > len(blob):
        raise ValueError(f"{path}: truncated header")
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    off += header_len
    payload = blob[off:]

    tensors: dict[str, np.ndarray] = {}
    expected_off = 0
    for spec in header["tensors"]:
        name, shape, t_off, dtype = spec["name"], tuple(spec["shape"]), spec["offset"], spec["dtype"]
        if dtype != "f32":
            raise ValueError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        if t_off != expected_off:
            raise ValueError(f"tensor {name!r}: offset {t_off} leaves a gap (expected {expected_off})")
        nbytes = int(np.prod(shape)) * 4
        if t_off + nbytes > len(payload):
            raise ValueError(f"tensor {name!r}: blob truncated ({t_off + nbytes} > {len(payload)} bytes)")
        flat = np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)), offset=t_off)
        tensors[name] = flat.reshape(shape).astype(np.float64)
        expected_off = t_off + nbytes
    if expected_off != len(payload):
        raise ValueError(f"{path}: {len(payload) - expected_off} trailing bytes after last tensor")
    if "blob_crc32" in header and zlib.crc32(payload) != header["blob_crc32"]:
        raise ValueError(f"{path}: tensor blob checksum mismatch")
    return NetworkField(header["graph"], tensors, header["time_embed_dim"])
