"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"NVIT"                      magic
    u32                          format version (1)
    u32 + bytes                  config block: UTF-8 ``key = value`` lines
    u32                          tensor count
    per tensor:
        u16 + bytes              name (UTF-8)
        u8                       rank
        u32 * rank               dims
        f32 * prod(dims)         values, row-major

The config block holds the full run config plus ``classes`` and ``meta.*`` keys.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, config_pairs, format_value, parse_lines, split_lines
from .dataset import CLASS_NAMES
from .errors import ConfigError, FormatError, InputError
from .fusion import param_shapes
from .tensor import Tensor

MAGIC = b"NVIT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    run_config: RunConfig = field(default_factory=RunConfig)
    class_names: tuple[str, ...] = CLASS_NAMES
    epoch: int = 0
    val_metrics: dict[str, float] = field(default_factory=dict)
    version: int = VERSION

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v.copy(), requires_grad=requires_grad) for k, v in self.params.items()}


def config_block(c: Checkpoint) -> bytes:
    lines = [f"{k} = {v}" for k, v in config_pairs(c.run_config)]
    lines.append(f"classes = {','.join(c.class_names)}")
    lines.append(f"meta.epoch = {c.epoch}")
    lines += [f"meta.val_{k} = {format_value(float(v))}" for k, v in sorted(c.val_metrics.items())]
    return ("\n".join(lines) + "\n").encode("utf-8")


def expected_size(c: Checkpoint) -> int:
    """Byte size implied by the layout: header + config + per-tensor records."""
    size = 4 + 4 + 4 + len(config_block(c)) + 4
    for name, arr in c.params.items():
        size += 2 + len(name.encode()) + 1 + 4 * arr.ndim + 4 * arr.size
    return size


def to_bytes(c: Checkpoint) -> bytes:
    block = config_block(c)
    out = [MAGIC, struct.pack("<I", c.version), struct.pack("<I", len(block)), block]
    out.append(struct.pack("<I", len(c.params)))
    for name, arr in c.params.items():
        enc = name.encode("utf-8")
        out.append(struct.pack("<H", len(enc)) + enc)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(c: Checkpoint, path) -> None:
    try:
        Path(path).write_bytes(to_bytes(c))
    except OSError as exc:
        raise InputError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic at offset 0: expected b'NVIT'")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version} at offset 4")
    (block_len,) = r.unpack("<I", "config length")
    block_at = r.pos
    try:
        text = r.take(block_len, "config block").decode("utf-8")
        run, extras = parse_lines(split_lines(text), extra_prefixes=("meta.", "classes"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise FormatError(f"bad config block at offset {block_at}: {exc}") from exc
    class_names = tuple(extras.get("classes", ",".join(CLASS_NAMES)).split(","))
    epoch = int(extras.get("meta.epoch", "0"))
    val_metrics = {k[len("meta.val_"):]: float(v) for k, v in extras.items() if k.startswith("meta.val_")}

    (count,) = r.unpack("<I", "tensor count")
    expected = param_shapes(run.model)
    if count != len(expected):
        raise FormatError(f"tensor count {count} at offset {r.pos - 4} but config implies {len(expected)}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        if expected.get(name) != tuple(dims):
            raise FormatError(
                f"tensor {name!r} at offset {at} has shape {tuple(dims)}, config expects {expected.get(name)}"
            )
        raw = r.take(4 * math.prod(dims), f"values of {name}")
        params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    if list(params) != list(expected):
        raise FormatError("tensor order does not match the canonical parameter order")
    return Checkpoint(params, run, class_names, epoch, val_metrics, version)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)
