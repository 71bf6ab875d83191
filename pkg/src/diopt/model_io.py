"""Binary model file format ("DIOP").

Layout, all integers little-endian:

    magic "DIOP" | u16 version | u16 node count
    metadata: u8 arch-id length + bytes, u32 epoch, u64 seed
    per node: u8 kind, u16 name len + utf-8 name,
              u8 param-name count, (u16 len + utf-8) per name,
              u8 hyper count, (u8 key len + ascii key, u8 tag, i64|f64) per hyper
    u32 parameter count
    per parameter: u16 name len + utf-8, u8 elem kind (0=f32 1=f64 2=i8),
                   u8 ndim, u32 per dim, raw values, f32 quant scale iff i8

Round trips are lossless: loaded graphs have identical nodes, hyperparams
and bitwise-identical parameter data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import NODE_KINDS, LayerNode, ModelGraph, ModelMeta
from .tensor import Tensor

MAGIC = b"DIOP"
VERSION = 1

_ELEM_CODES = {"f32": 0, "f64": 1, "i8": 2}
_ELEM_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("i1")}


class ModelFormatError(ValueError):
    """Malformed or truncated model file."""


def save_model(model: ModelGraph, path: str | Path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(model.nodes))

    arch = model.meta.arch_id.encode("utf-8")
    out += struct.pack("<B", len(arch)) + arch
    out += struct.pack("<IQ", model.meta.epoch, model.meta.seed)

    for node in model.nodes:
        out += struct.pack("<B", NODE_KINDS.index(node.kind))
        enc = node.name.encode("utf-8")
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", len(node.params))
        for name in node.params:
            enc = name.encode("utf-8")
            out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", len(node.hyper))
        for key, value in node.hyper.items():
            enc = key.encode("ascii")
            out += struct.pack("<B", len(enc)) + enc
            if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
                out += struct.pack("<Bq", 0, int(value))
            else:
                out += struct.pack("<Bd", 1, float(value))

    out += struct.pack("<I", len(model.params))
    for name, t in model.params.items():
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<BB", _ELEM_CODES[t.elem_kind], len(t.shape))
        out += struct.pack(f"<{len(t.shape)}I", *t.shape)
        out += np.ascontiguousarray(t.data.astype(_ELEM_DTYPES[_ELEM_CODES[t.elem_kind]],
                                                  copy=False)).tobytes()
        if t.elem_kind == "i8":
            out += struct.pack("<f", t.quant_scale)

    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError(f"truncated file: unexpected end while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_model(path: str | Path) -> ModelGraph:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError(f"bad magic number in {path}")
    version, n_nodes = r.unpack("<HH", "header")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")

    (arch_len,) = r.unpack("<B", "metadata")
    arch_id = r.take(arch_len, "arch id").decode("utf-8")
    epoch, seed = r.unpack("<IQ", "metadata")

    nodes: list[LayerNode] = []
    for i in range(n_nodes):
        (kind_code,) = r.unpack("<B", f"node {i}")
        if kind_code >= len(NODE_KINDS):
            raise ModelFormatError(f"unknown node kind code {kind_code} in node {i}")
        (name_len,) = r.unpack("<H", f"node {i} name")
        name = r.take(name_len, f"node {i} name").decode("utf-8")
        (n_params,) = r.unpack("<B", f"node {i} param count")
        param_names = []
        for _ in range(n_params):
            (nlen,) = r.unpack("<H", f"node {i} param name")
            param_names.append(r.take(nlen, f"node {i} param name").decode("utf-8"))
        (n_hyper,) = r.unpack("<B", f"node {i} hyper count")
        hyper: dict = {}
        for _ in range(n_hyper):
            (klen,) = r.unpack("<B", f"node {i} hyper key")
            key = r.take(klen, f"node {i} hyper key").decode("ascii")
            (tag,) = r.unpack("<B", f"node {i} hyper tag")
            if tag == 0:
                (hyper[key],) = r.unpack("<q", f"node {i} hyper value")
            elif tag == 1:
                (hyper[key],) = r.unpack("<d", f"node {i} hyper value")
            else:
                raise ModelFormatError(f"unknown hyper value tag {tag} in node {i}")
        nodes.append(LayerNode(kind=NODE_KINDS[kind_code], name=name,
                               hyper=hyper, params=tuple(param_names)))

    (n_tensors,) = r.unpack("<I", "parameter count")
    params: dict[str, Tensor] = {}
    for i in range(n_tensors):
        (nlen,) = r.unpack("<H", f"parameter {i} name")
        name = r.take(nlen, f"parameter {i} name").decode("utf-8")
        elem_code, ndim = r.unpack("<BB", f"parameter {name}")
        if elem_code not in _ELEM_DTYPES:
            raise ModelFormatError(f"unknown element kind code {elem_code} "
                                   f"for parameter {name}")
        dims = r.unpack(f"<{ndim}I", f"parameter {name} dims")
        dtype = _ELEM_DTYPES[elem_code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(r.take(nbytes, f"parameter {name} data"),
                             dtype=dtype).reshape(dims).copy()
        scale = None
        if elem_code == 2:
            (scale,) = r.unpack("<f", f"parameter {name} scale")
        params[name] = Tensor(data, scale)

    if r.pos != len(r.buf):
        raise ModelFormatError(f"{len(r.buf) - r.pos} trailing bytes after parameters")
    return ModelGraph(nodes, params, ModelMeta(arch_id, epoch, seed))
