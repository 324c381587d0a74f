"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DTRN"  u32 version=1  u64 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 rank, u64 extents[rank],
                f64 data[prod(extents)] (row-major)
"""

import logging
import struct
from pathlib import Path

import numpy as np

from .cnn import CnnParams
from .numerics import ShapeError
from .recurrent import TENSOR_NAMES as RNN_NAMES
from .recurrent import LstmParams

log = logging.getLogger(__name__)

MAGIC = b"DTRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors):
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")  # ascontiguousarray would turn 0-d into 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, tensors):
    Path(path).write_bytes(encode_checkpoint(tensors))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf):
    """Tensor dict from checkpoint bytes; magic and version are checked first."""
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = r.unpack("<Q", "tensor count")
    tensors = {}
    for i in range(count):
        (n,) = r.unpack("<I", f"name length of tensor {i}")
        try:
            name = r.take(n, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"tensor {i} name is not valid UTF-8") from None
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        (rank,) = r.unpack("<I", f"rank of {name}")
        shape = r.unpack(f"<{rank}Q", f"extents of {name}")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(8 * size, f"data of {name}"), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(shape)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last tensor")
    return tensors


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def cnn_tensor_names(n_layers=5):
    return [f"cnn.layer{i}.{k}" for i in range(1, n_layers + 1) for k in ("kernels", "bias")]


def _warn_unknown(tensors, known):
    extra = sorted(set(tensors) - set(known))
    if extra:
        log.warning("ignoring unknown checkpoint tensors: %s", ", ".join(extra))


def model_tensors(cnn=None, lstm=None):
    out = {}
    if cnn is not None:
        out.update(cnn.tensors())
    if lstm is not None:
        out.update(lstm.tensors)
    return out


def load_model(path, need_rnn=True):
    """(CnnParams, LstmParams or None) from a checkpoint file."""
    tensors = load_checkpoint(path)
    _warn_unknown(tensors, cnn_tensor_names() + list(RNN_NAMES))
    try:
        cnn = CnnParams.from_tensors(tensors)
        lstm = None
        if need_rnn or any(n in tensors for n in RNN_NAMES):
            lstm = LstmParams({n: tensors[n] for n in RNN_NAMES if n in tensors})
    except KeyError as exc:
        raise CheckpointError(str(exc.args[0])) from None
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from None
    return cnn, lstm
