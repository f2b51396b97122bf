"""Configurable 1D-convolutional multi-label classifier.

Architecture: a stack of plain-conv or inception-lite blocks (parallel
odd-kernel branches over a 1x1 bottleneck, concatenated), then global
average pooling over time and a linear head to one logit per label.  No
batch norm: the mask penalty differentiates through the whole network
twice and every op here has a clean, checkable second-order path.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"GMCK"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ConvBlockSpec:
    out_channels: int
    kernel_size: int

    kind = "conv"


@dataclass(frozen=True)
class InceptionBlockSpec:
    kernel_sizes: tuple[int, ...] = (9, 19, 39)
    bottleneck_channels: int = 16

    kind = "inception"


@dataclass(frozen=True)
class ModelConfig:
    in_leads: int = 4
    n_classes: int = 4
    blocks: tuple = (InceptionBlockSpec(), InceptionBlockSpec())
    seed: int = 0

    def validate(self):
        if not self.blocks:
            raise ModelError("at least one block required")
        for b in self.blocks:
            ks = [b.kernel_size] if b.kind == "conv" else list(b.kernel_sizes)
            if any(k % 2 == 0 or k < 1 for k in ks):
                raise ModelError(f"kernel sizes must be odd and positive, got {ks}")
        return self

    def min_input_length(self):
        return max(
            max([b.kernel_size] if b.kind == "conv" else list(b.kernel_sizes))
            for b in self.blocks
        )

    def to_dict(self):
        blocks = []
        for b in self.blocks:
            if b.kind == "conv":
                blocks.append({"kind": "conv", "out_channels": b.out_channels, "kernel_size": b.kernel_size})
            else:
                blocks.append(
                    {
                        "kind": "inception",
                        "kernel_sizes": list(b.kernel_sizes),
                        "bottleneck_channels": b.bottleneck_channels,
                    }
                )
        return {
            "in_leads": self.in_leads,
            "n_classes": self.n_classes,
            "blocks": blocks,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d):
        blocks = []
        for b in d["blocks"]:
            if b["kind"] == "conv":
                blocks.append(ConvBlockSpec(b["out_channels"], b["kernel_size"]))
            else:
                blocks.append(
                    InceptionBlockSpec(tuple(b["kernel_sizes"]), b["bottleneck_channels"])
                )
        return ModelConfig(d["in_leads"], d["n_classes"], tuple(blocks), d.get("seed", 0)).validate()


class ModelParams:
    """Named parameter tensors in a fixed deterministic order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def leaves(self):
        return [self.tensors[n] for n in self.tensors]

    @property
    def total_count(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return ModelParams({n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self.tensors.items()})

    def detached(self, requires_grad=True):
        return ModelParams({n: Tensor(t.data, requires_grad=requires_grad) for n, t in self.tensors.items()})

    def allclose(self, other):
        return self.names() == other.names() and all(
            np.array_equal(self.tensors[n].data, other.tensors[n].data) for n in self.tensors
        )


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


def _channel_plan(config):
    """(block param shapes, channels out of the trunk)."""
    plan = []
    c = config.in_leads
    for i, b in enumerate(config.blocks):
        if b.kind == "conv":
            plan.append(("conv", i, c, b))
            c = b.out_channels
        else:
            plan.append(("inception", i, c, b))
            c = b.bottleneck_channels * len(b.kernel_sizes)
    return plan, c


def init(config: ModelConfig) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    tensors = {}

    def conv(name, c_out, c_in, k):
        fan_in = c_in * k
        tensors[f"{name}.w"] = Tensor(_kaiming_uniform(rng, (c_out, c_in, k), fan_in), requires_grad=True)
        tensors[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True)

    plan, c = _channel_plan(config)
    for kind, i, c_in, b in plan:
        if kind == "conv":
            conv(f"block{i}", b.out_channels, c_in, b.kernel_size)
        else:
            conv(f"block{i}.bottleneck", b.bottleneck_channels, c_in, 1)
            for j, k in enumerate(b.kernel_sizes):
                conv(f"block{i}.branch{j}", b.bottleneck_channels, b.bottleneck_channels, k)
    tensors["head.w"] = Tensor(_kaiming_uniform(rng, (config.n_classes, c), c), requires_grad=True)
    tensors["head.b"] = Tensor(np.zeros(config.n_classes), requires_grad=True)
    return ModelParams(tensors)


def conv1d(x, w, stride=1, padding=0):
    """Mathematical 1D convolution (kernel flipped) via im2col + matmul.

    x: (B, C_in, T), w: (C_out, C_in, k) -> (B, C_out, T_out).
    """
    B, c_in, T = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ad.ShapeError(f"conv1d channel mismatch: input {c_in}, kernel {c_in_w}")
    Tp = T + 2 * padding
    T_out = (Tp - k) // stride + 1
    if T_out < 1:
        raise ad.ShapeError(f"conv1d: input length {T} too short for kernel {k}")
    xp = ad.pad_axis(x, 2, padding, padding) if padding else x
    xf = ad.reshape(xp, (B, c_in * Tp))
    # flipped kernel index: convolution, not cross-correlation
    c_idx = np.arange(c_in)[:, None, None] * Tp
    j_idx = (k - 1) - np.arange(k)[None, :, None]
    t_idx = np.arange(T_out)[None, None, :] * stride
    idx = (c_idx + j_idx + t_idx).reshape(c_in * k, T_out)
    patches = ad.take_flat(xf, idx)  # (B, c_in*k, T_out)
    w2 = ad.reshape(w, (c_out, c_in * k))
    return ad.matmul(w2, patches)  # (B, c_out, T_out)


def _bias_add(x, b):
    return ad.add(x, ad.reshape(b, (b.size, 1)))


def forward(params: ModelParams, config: ModelConfig, x) -> Tensor:
    """Logits for a batch: x (B, L, T) or a single (L, T) example."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    single = x.data.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    B, L, T = x.shape
    if L != config.in_leads:
        raise ModelError(f"expected {config.in_leads} leads, got {L}")
    if T < config.min_input_length():
        raise ModelError(f"input length {T} below minimum {config.min_input_length()}")

    h = x
    for b_idx, b in enumerate(config.blocks):
        name = f"block{b_idx}"
        if b.kind == "conv":
            pad = (b.kernel_size - 1) // 2
            h = ad.relu(_bias_add(conv1d(h, params[f"{name}.w"], padding=pad), params[f"{name}.b"]))
        else:
            bn = ad.relu(
                _bias_add(conv1d(h, params[f"{name}.bottleneck.w"]), params[f"{name}.bottleneck.b"])
            )
            branches = []
            for j, k in enumerate(b.kernel_sizes):
                pad = (k - 1) // 2
                branches.append(
                    _bias_add(conv1d(bn, params[f"{name}.branch{j}.w"], padding=pad), params[f"{name}.branch{j}.b"])
                )
            h = ad.relu(ad.concat(branches, axis=1))
    pooled = ad.global_avg_pool(h)  # (B, C)
    z = ad.matmul(params["head.w"], ad.reshape(pooled, (B, pooled.shape[1], 1)))
    logits = ad.add(ad.reshape(z, (B, config.n_classes)), params["head.b"])
    return ad.reshape(logits, (config.n_classes,)) if single else logits


def predict(logits) -> np.ndarray:
    """Coordinate-wise sign with sign(0) = -1."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.where(data > 0, 1, -1).astype(np.int8)


def scores(logits) -> np.ndarray:
    """Sigmoid of logits, for ranking metrics."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    out = np.empty_like(data, dtype=np.float64)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    ex = np.exp(data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, config: ModelConfig, meta: dict | None = None):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    head = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}, "tensor_names": params.names()},
        sort_keys=True,
    ).encode()
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for name in params.names():
        t = params[name]
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", t.data.ndim))
        for d in t.data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(t.data.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    raw = open(path, "rb").read()
    buf = io.BytesIO(raw)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<H", buf.read(2))
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", buf.read(4))
    head = json.loads(buf.read(hlen))
    config = ModelConfig.from_dict(head["config"])
    tensors = {}
    for _ in head["tensor_names"]:
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode()
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf.read(8 * n), dtype="<f8").reshape(shape).copy()
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(tensors), config, head["meta"]
