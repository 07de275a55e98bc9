"""Layer-graph construction and a torch interpreter over it.

The network architecture is expressed as the same ordered descriptor list the
engine executes (docs/formats.md in the engine repo), so exporting weights is
a plain dump: descriptors + named tensors. The torch module here interprets
descriptors directly; there is no second architecture definition to keep in
sync.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

GROUP_NORM_EPS = 1e-5


@dataclass
class GraphSpec:
    nodes: list[dict] = field(default_factory=list)
    shapes: dict[str, tuple] = field(default_factory=dict)  # tensor name -> shape
    time_embed_dim: int = 32

    def conv(self, name, src, c_in, c_out, k, stride=1):
        self.shapes[f"{name}_w"] = (c_out, c_in, k, k)
        self.shapes[f"{name}_b"] = (c_out,)
        self.nodes.append({"kind": "conv2d", "name": name, "inputs": [src],
                           "weight": f"{name}_w", "bias": f"{name}_b", "stride": stride})
        return name

    def group_norm(self, name, src, channels, groups):
        self.shapes[f"{name}_w"] = (channels,)
        self.shapes[f"{name}_b"] = (channels,)
        self.nodes.append({"kind": "group_norm", "name": name, "inputs": [src],
                           "groups": groups, "weight": f"{name}_w", "bias": f"{name}_b"})
        return name

    def linear(self, name, src, d_in, d_out):
        self.shapes[f"{name}_w"] = (d_out, d_in)
        self.shapes[f"{name}_b"] = (d_out,)
        self.nodes.append({"kind": "linear", "name": name, "inputs": [src],
                           "weight": f"{name}_w", "bias": f"{name}_b"})
        return name

    def time_scale_shift(self, name, src, temb, channels, temb_dim):
        self.shapes[f"{name}_w"] = (2 * channels, temb_dim)
        self.shapes[f"{name}_b"] = (2 * channels,)
        self.nodes.append({"kind": "time_scale_shift", "name": name, "inputs": [src, temb],
                           "weight": f"{name}_w", "bias": f"{name}_b"})
        return name

    def op(self, kind, name, *inputs):
        self.nodes.append({"kind": kind, "name": name, "inputs": list(inputs)})
        return name


def _res_block(g: GraphSpec, prefix, src, c_in, c_out, groups, temb, temb_dim):
    h = g.group_norm(f"{prefix}_gn1", src, c_in, groups)
    h = g.op("silu", f"{prefix}_act1", h)
    h = g.conv(f"{prefix}_conv1", h, c_in, c_out, 3)
    h = g.time_scale_shift(f"{prefix}_tss", h, temb, c_out, temb_dim)
    h = g.group_norm(f"{prefix}_gn2", h, c_out, groups)
    h = g.op("silu", f"{prefix}_act2", h)
    h = g.conv(f"{prefix}_conv2", h, c_out, c_out, 3)
    skip = src if c_in == c_out else g.conv(f"{prefix}_skip", src, c_in, c_out, 1)
    return g.op("add", f"{prefix}_out", h, skip)


def build_toy_graph(base_channels=8, channel_mults=(1, 2), res_blocks=1,
                    time_embed_dim=32, time_mlp_dim=None, groups=4) -> GraphSpec:
    """Small encoder/decoder with per-level residual blocks, time conditioning
    through scale-shift, and a time-modulated global 1x1 skip from input to
    output (keeps the exactly-linear part of the target field representable
    despite the normalization layers)."""
    if time_mlp_dim is None:
        time_mlp_dim = 2 * time_embed_dim
    g = GraphSpec(time_embed_dim=time_embed_dim)
    channels = [base_channels * m for m in channel_mults]

    temb = g.linear("tmlp1", "time_embedding", time_embed_dim, time_mlp_dim)
    temb = g.op("gelu", "tmlp_act", temb)
    temb = g.linear("tmlp2", temb, time_mlp_dim, time_mlp_dim)

    h = g.conv("stem", "input", 2, channels[0], 3)
    skips = []
    for level, c in enumerate(channels):
        if level > 0:
            h = g.conv(f"down{level}", h, channels[level - 1], c, 3, stride=2)
        for r in range(res_blocks):
            h = _res_block(g, f"enc{level}_res{r}", h, c, c, groups, temb, time_mlp_dim)
        if level < len(channels) - 1:
            skips.append((h, c))
    for level in range(len(channels) - 2, -1, -1):
        c = channels[level]
        h = g.op("upsample_nearest2x", f"up{level}_nn", h)
        h = g.conv(f"up{level}_conv", h, channels[level + 1], c, 3)
        skip_name, skip_c = skips.pop()
        h = g.op("concat", f"cat{level}", h, skip_name)
        h = _res_block(g, f"dec{level}_res0", h, c + skip_c, c, groups, temb, time_mlp_dim)
        for r in range(1, res_blocks):
            h = _res_block(g, f"dec{level}_res{r}", h, c, c, groups, temb, time_mlp_dim)
    h = g.group_norm("head_gn", h, channels[0], groups)
    h = g.op("silu", "head_act", h)
    trunk = g.conv("head_conv", h, channels[0], 2, 3)

    sk = g.conv("gskip_conv", "input", 2, 2, 1)
    sk = g.time_scale_shift("gskip_tss", sk, temb, 2, time_mlp_dim)
    g.op("add", "output", trunk, sk)
    return g


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding matching the engine: sin block then cos block,
    frequencies 10000^(-2k/dim)."""
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * torch.arange(half, dtype=t.dtype, device=t.device) / dim)
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


def _init_tensor(name: str, shape: tuple, gen: torch.Generator) -> torch.Tensor:
    if len(shape) == 1:
        # group-norm affines start at identity; biases start at zero
        if "_gn" in name and name.endswith("_w"):
            return torch.ones(shape)
        return torch.zeros(shape)
    # conv / linear weights: kaiming-uniform with a = sqrt(5), the torch layer default
    fan_in = int(torch.tensor(shape[1:]).prod())
    bound = math.sqrt(6.0 / ((1 + 5.0) * fan_in))
    w = torch.empty(shape)
    w.uniform_(-bound, bound, generator=gen)
    return w


class GraphModel(nn.Module):
    """Executes a :class:`GraphSpec` with learnable parameters."""

    def __init__(self, spec: GraphSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(seed)
        params = {}
        for name, shape in spec.shapes.items():
            params[name] = nn.Parameter(_init_tensor(name, shape, gen))
        self.params = nn.ParameterDict(params)

    def tensors(self) -> dict[str, torch.Tensor]:
        return {k: v.detach() for k, v in self.params.items()}

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                weights: dict[str, torch.Tensor] | None = None) -> torch.Tensor:
        w = self.params if weights is None else weights
        values: dict[str, torch.Tensor] = {
            "input": x,
            "time_embedding": time_embedding(t, self.spec.time_embed_dim),
        }
        for node in self.spec.nodes:
            kind, inputs = node["kind"], node["inputs"]
            a = values[inputs[0]]
            if kind == "conv2d":
                kernel = w[node["weight"]]
                pad = (kernel.shape[-1] - 1) // 2
                out = F.conv2d(a, kernel, w[node["bias"]], stride=node.get("stride", 1), padding=pad)
            elif kind == "group_norm":
                out = F.group_norm(a, node["groups"], w[node["weight"]], w[node["bias"]],
                                   eps=GROUP_NORM_EPS)
            elif kind == "silu":
                out = F.silu(a)
            elif kind == "gelu":
                out = F.gelu(a)
            elif kind == "linear":
                out = F.linear(a, w[node["weight"]], w[node["bias"]])
            elif kind == "time_scale_shift":
                ss = F.linear(values[inputs[1]], w[node["weight"]], w[node["bias"]])
                c = a.shape[1]
                scale, shift = ss[:, :c], ss[:, c:]
                out = a * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
            elif kind == "upsample_nearest2x":
                out = F.interpolate(a, scale_factor=2, mode="nearest")
            elif kind == "concat":
                out = torch.cat([a, values[inputs[1]]], dim=1)
            elif kind == "add":
                out = a + values[inputs[1]]
            else:
                raise ValueError(f"unsupported layer kind {kind!r}")
            values[node["name"]] = out
        return values[self.spec.nodes[-1]["name"]]
