"""Binary checkpoint format for trained networks.

Layout (all integers little-endian unless noted):

  magic   4 bytes "FFCK"
  u8      format version (1)
  u8      variant: 0 layer-local net, 1 cross-entropy bp, 2 goodness_last bp,
          3 goodness_all bp
  u8      goodness_mode: 0 mean_sq, 1 sum_sq, 2 l2norm
  f64     theta
  u8      layer count
  per layer: u32 fan_in, u32 fan_out
  u8      head flag; if 1: u32 fan_in, u32 fan_out
  blobs   per layer then head: weight f64 row-major, bias f64

Optimizer state is deliberately not stored: a checkpoint is a frozen network,
and training always starts with fresh optimizer state. Round trips are
bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bp import BP_VARIANTS, BPNetwork
from .ff import GOODNESS_MODES, FFLayer, FFNetwork

MAGIC = b"FFCK"
VERSION = 1

VARIANT_TAGS = {"ff": 0, "cross_entropy": 1, "goodness_last": 2, "goodness_all": 3}
TAG_VARIANTS = {v: k for k, v in VARIANT_TAGS.items()}


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def _variant_of(net) -> str:
    if isinstance(net, BPNetwork):
        return net.loss_variant
    if isinstance(net, FFNetwork):
        return "ff"
    raise TypeError(f"cannot checkpoint {type(net).__name__}")


def save_checkpoint(path: Path | str, net) -> None:
    variant = _variant_of(net)
    head = net.head if isinstance(net, BPNetwork) else None
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<BBB", VERSION, VARIANT_TAGS[variant], GOODNESS_MODES.index(net.goodness_mode)
    )
    out += struct.pack("<d", net.theta)
    out += struct.pack("<B", len(net.layers))
    for layer in net.layers:
        out += struct.pack("<II", layer.fan_in, layer.fan_out)
    if head is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<BII", 1, head.fan_in, head.fan_out)
    for layer in list(net.layers) + ([head] if head is not None else []):
        out += layer.weight.astype("<f8").tobytes()
        out += layer.bias.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: Path | str):
    """Parse a checkpoint into a network of the stored variant."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, tag, mode_idx = struct.unpack("<BBB", raw[4:7])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if tag not in TAG_VARIANTS:
        raise CheckpointError(f"{path}: unknown variant tag {tag}")
    if mode_idx >= len(GOODNESS_MODES):
        raise CheckpointError(f"{path}: unknown goodness_mode tag {mode_idx}")
    (theta,) = struct.unpack("<d", raw[7:15])
    n_layers = raw[15]
    if n_layers == 0:
        raise CheckpointError(f"{path}: zero layers")
    off = 16
    dims = []
    if len(raw) < off + 8 * n_layers + 1:
        raise CheckpointError(f"{path}: truncated layer table")
    for _ in range(n_layers):
        dims.append(struct.unpack("<II", raw[off : off + 8]))
        off += 8
    head_dims = None
    head_flag = raw[off]
    off += 1
    if head_flag == 1:
        if len(raw) < off + 8:
            raise CheckpointError(f"{path}: truncated head table")
        head_dims = struct.unpack("<II", raw[off : off + 8])
        off += 8
    elif head_flag != 0:
        raise CheckpointError(f"{path}: bad head flag {head_flag}")

    variant = TAG_VARIANTS[tag]
    if (head_dims is not None) != (variant == "cross_entropy"):
        raise CheckpointError(f"{path}: head presence does not match variant {variant!r}")

    expected = sum(fi * fo + fo for fi, fo in dims + ([head_dims] if head_dims else []))
    if len(raw) != off + 8 * expected:
        raise CheckpointError(
            f"{path}: blob is {len(raw) - off} bytes, dims promise {8 * expected}"
        )

    def take(fan_in: int, fan_out: int) -> FFLayer:
        nonlocal off
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        return FFLayer(w.copy(), b.copy())

    layers = [take(fi, fo) for fi, fo in dims]
    mode = GOODNESS_MODES[mode_idx]
    if variant == "ff":
        return FFNetwork(layers, mode, theta)
    head = take(*head_dims) if head_dims else None
    return BPNetwork(layers, variant, head, mode, theta)
