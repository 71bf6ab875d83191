"""Weight-space optimization passes: conv+relu fusion, int8 weight
quantization, structured and global unstructured magnitude pruning, and the
sparse-storage memory model.

Every pass is a pure transform returning a new graph; parameter count and
dense byte size are preserved by fusion and pruning, and byte size strictly
shrinks under quantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LayerNode, ModelGraph, clone_model
from .tensor import ELEMENT_SIZES, Tensor

# node kinds whose "weight" parameter the pruning/quantization passes target;
# the sinc frontend is opaque and left untouched
_TARGET_KINDS = ("conv1d", "fused_conv_relu", "linear")


@dataclass
class PruneMask:
    """Binary keep-masks per parameter name (1 = kept, 0 = zeroed)."""

    masks: dict[str, np.ndarray]
    method: str  # "structured" | "unstructured"

    def apply(self, model: ModelGraph) -> ModelGraph:
        """Zero the masked weights; idempotent."""
        out = clone_model(model)
        for name, mask in self.masks.items():
            t = out.params[name]
            if mask.shape != t.shape:
                raise ValueError(f"mask shape {mask.shape} != parameter "
                                 f"{name} shape {t.shape}")
            out.params[name] = Tensor(t.data * mask.astype(t.data.dtype), t.quant_scale)
        return out


@dataclass
class SparsityReport:
    per_module: dict[str, float]
    average: float   # unweighted mean over pruned modules
    overall: float   # zero fraction pooled over all pruned weights
    is_pruned: dict[str, bool]


@dataclass
class MemoryEstimate:
    dense_bytes: int
    coo_bytes: int
    break_even_amount: float


def _targeted(model: ModelGraph) -> list[tuple[LayerNode, str]]:
    """(node, weight-param-name) pairs the passes operate on, in graph order."""
    out = []
    for node in model.nodes:
        if node.kind in _TARGET_KINDS:
            out.append((node, f"{node.name}.weight"))
    return out


# ---------------------------------------------------------------------------
# layer fusion
# ---------------------------------------------------------------------------

def fuse_conv_relu(model: ModelGraph) -> ModelGraph:
    """Merge every adjacent (conv1d, relu) pair into one fused node.

    The fused node computes max(conv(x), 0) in a single execution; arithmetic
    and parameters are untouched, so outputs are exactly equal.  leaky_relu
    is not a fusion target, so a baseline-style graph passes through
    unchanged.
    """
    fused = clone_model(model)
    nodes: list[LayerNode] = []
    i = 0
    while i < len(fused.nodes):
        node = fused.nodes[i]
        nxt = fused.nodes[i + 1] if i + 1 < len(fused.nodes) else None
        if node.kind == "conv1d" and nxt is not None and nxt.kind == "relu":
            nodes.append(LayerNode(kind="fused_conv_relu", name=node.name,
                                   hyper=dict(node.hyper), params=node.params))
            i += 2
        else:
            nodes.append(node)
            i += 1
    fused.nodes = nodes
    return fused


def count_conv_relu_pairs(model: ModelGraph) -> int:
    return sum(1 for a, b in zip(model.nodes, model.nodes[1:])
               if a.kind == "conv1d" and b.kind == "relu")


# ---------------------------------------------------------------------------
# int8 weight quantization
# ---------------------------------------------------------------------------

def quantize_tensor_int8(t: Tensor) -> Tensor:
    """Symmetric per-tensor int8 quantization.

    scale = max(|x|)/127 (1.0 for an all-zero tensor); values are rounded
    and clamped to [-127, 127], so |x - q*scale| <= scale/2 elementwise.
    """
    x = t.data
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize a tensor with NaN or infinite values")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    # scale is stored as f32 in the model format; round it first so the
    # quantized values and the error bound are consistent with what loads back
    scale = float(np.float32(peak / 127.0)) if peak > 0 else 1.0
    q = np.clip(np.round(x.astype(np.float64) / scale), -127, 127).astype(np.int8)
    return Tensor(q, quant_scale=scale)


def quantize_weights_int8(model: ModelGraph) -> ModelGraph:
    """Store conv/fused/linear weights as int8 plus a per-tensor scale.

    Biases, batchnorm parameters and the sinc frontend stay float32; the
    forward pass quantizes activations dynamically and accumulates in int32.
    """
    out = clone_model(model)
    for _, wname in _targeted(out):
        out.params[wname] = quantize_tensor_int8(out.params[wname])
    return out


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def prune_structured(model: ModelGraph, amount: int = 1, n: int = 2,
                     dim: int = 0) -> tuple[ModelGraph, PruneMask]:
    """Zero the ``amount`` slices with smallest Ln norm along ``dim`` of every
    targeted weight tensor.  Shapes and parameter counts are unchanged; ties
    break toward the lowest slice index.
    """
    if amount < 1:
        raise ValueError(f"amount must be >= 1, got {amount}")
    masks: dict[str, np.ndarray] = {}
    for node, wname in _targeted(model):
        w = model.params[wname].data
        if dim >= w.ndim:
            raise ValueError(f"dim {dim} out of range for {wname} with shape {w.shape}")
        n_slices = w.shape[dim]
        if amount >= n_slices:
            raise ValueError(f"amount {amount} >= slice count {n_slices} of {wname}")
        moved = np.moveaxis(w, dim, 0).reshape(n_slices, -1).astype(np.float64)
        norms = np.sum(np.abs(moved) ** n, axis=1) ** (1.0 / n)
        drop = np.argsort(norms, kind="stable")[:amount]
        mask = np.ones_like(w, dtype=np.float32)
        sl = [slice(None)] * w.ndim
        sl[dim] = drop
        mask[tuple(sl)] = 0.0
        masks[wname] = mask
    pmask = PruneMask(masks, "structured")
    return pmask.apply(model), pmask


def prune_unstructured_global(model: ModelGraph,
                              amount: float = 0.3) -> tuple[ModelGraph, PruneMask]:
    """Zero the globally smallest floor(amount*N) weights by magnitude across
    all targeted tensors pooled together.  Ties break toward the lowest flat
    index in graph order.
    """
    if not 0.0 <= amount < 1.0:
        raise ValueError(f"amount must be in [0, 1), got {amount}")
    names = [wname for _, wname in _targeted(model)]
    sizes = [model.params[w].size for w in names]
    total = sum(sizes)
    k = int(np.floor(amount * total))
    flat = np.concatenate([np.abs(model.params[w].data.reshape(-1)).astype(np.float64)
                           for w in names]) if names else np.empty(0)
    keep = np.ones(total, dtype=np.float32)
    if k > 0:
        keep[np.argsort(flat, kind="stable")[:k]] = 0.0
    masks: dict[str, np.ndarray] = {}
    offset = 0
    for wname, size in zip(names, sizes):
        masks[wname] = keep[offset:offset + size].reshape(model.params[wname].shape)
        offset += size
    pmask = PruneMask(masks, "unstructured")
    return pmask.apply(model), pmask


def sparsity_report(model: ModelGraph, mask: PruneMask) -> SparsityReport:
    """Per-module zero fraction over the pruned weight tensors, their
    unweighted mean, and the pooled (size-weighted) fraction."""
    per_module: dict[str, float] = {}
    is_pruned: dict[str, bool] = {}
    zeros = total = 0
    for node, wname in _targeted(model):
        if wname not in mask.masks:
            continue
        w = model.params[wname].data
        per_module[node.name] = float(np.count_nonzero(w == 0) / w.size)
        is_pruned[node.name] = bool(np.any(mask.masks[wname] == 0))
        zeros += int(np.count_nonzero(w == 0))
        total += w.size
    average = float(np.mean(list(per_module.values()))) if per_module else 0.0
    overall = zeros / total if total else 0.0
    return SparsityReport(per_module, average, overall, is_pruned)


# ---------------------------------------------------------------------------
# sparse storage memory model
# ---------------------------------------------------------------------------

def coo_memory_bytes(shape: tuple[int, ...], nze: int, element_size: int) -> int:
    """Bytes to store ``nze`` nonzeros of a tensor in COO form: one int64
    index per dimension per nonzero plus the values themselves."""
    if nze < 0:
        raise ValueError(f"nonzero count must be >= 0, got {nze}")
    if nze > int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"nonzero count {nze} exceeds element count of {shape}")
    return len(shape) * 8 * nze + nze * element_size


def dense_memory_bytes(shape: tuple[int, ...], element_size: int) -> int:
    return int(np.prod(shape, dtype=np.int64)) * element_size


def coo_break_even_amount(ndim: int, element_size: int) -> float:
    """Sparsity above which COO storage beats dense storage:
    1 - element_size / (ndim*8 + element_size)."""
    if ndim < 1 or element_size < 1:
        raise ValueError("ndim and element_size must be >= 1")
    return 1.0 - element_size / (ndim * 8 + element_size)


def memory_estimate(shape: tuple[int, ...], nze: int, element_size: int) -> MemoryEstimate:
    return MemoryEstimate(
        dense_bytes=dense_memory_bytes(shape, element_size),
        coo_bytes=coo_memory_bytes(shape, nze, element_size),
        break_even_amount=coo_break_even_amount(len(shape), element_size),
    )


def sparse_export_size(model: ModelGraph, mask: PruneMask) -> int:
    """Total bytes if every pruned tensor were exported in COO form."""
    total = 0
    for _, wname in _targeted(model):
        if wname not in mask.masks:
            continue
        t = model.params[wname]
        nze = int(np.count_nonzero(t.data))
        total += coo_memory_bytes(t.shape, nze, ELEMENT_SIZES[t.elem_kind])
    return total


def dense_export_size(model: ModelGraph, mask: PruneMask) -> int:
    """Dense byte size of the same tensors, for the COO comparison."""
    total = 0
    for _, wname in _targeted(model):
        if wname not in mask.masks:
            continue
        t = model.params[wname]
        total += dense_memory_bytes(t.shape, ELEMENT_SIZES[t.elem_kind])
    return total
