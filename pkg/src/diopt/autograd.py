"""Reverse-mode gradient tape over the layer kernels and loss primitives.

The tape covers exactly the operations the distillation trainer needs:
conv1d, batchnorm1d (training and inference statistics), relu/leaky_relu,
linear, temporal mean pooling and the elementwise/reduction primitives the
losses are composed from.  Dense ops accept leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError


class GradError(ValueError):
    """Raised when a tape cannot be differentiated as requested."""


class Node:
    """One value in the recorded computation.

    ``vjp`` maps the gradient of the loss w.r.t. this node's value to the
    gradients w.r.t. each parent's value.
    """

    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value: np.ndarray, parents: tuple["Node", ...] = (), vjp=None):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjp = vjp


class GradTape:
    """Named trainable leaves plus the root of a recorded forward pass."""

    def __init__(self) -> None:
        self.params: dict[str, Node] = {}
        self.root: Node | None = None
        self.output_node: Node | None = None

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a trainable leaf; gradients are reported under ``name``."""
        if name in self.params:
            raise GradError(f"duplicate tape parameter {name!r}")
        node = Node(np.asarray(value))
        self.params[name] = node
        return node


def constant(value) -> Node:
    """Leaf that does not receive a gradient."""
    return Node(np.asarray(value))


def backward(tape: GradTape, loss_seed: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of the tape's scalar root for every registered parameter.

    Parameters unreachable from the root get zero gradients.
    """
    root = tape.root
    if root is None:
        raise GradError("tape has no root; assign the loss node to tape.root")
    if root.value.size != 1:
        raise GradError(f"tape root must be a scalar, got shape {root.value.shape}")

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:  # iterative topo sort; training graphs can be deep
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {
        id(root): np.full_like(root.value, loss_seed, dtype=root.value.dtype)
    }
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    out: dict[str, np.ndarray] = {}
    for name, node in tape.params.items():
        g = grads.get(id(node))
        out[name] = np.zeros_like(node.value) if g is None else g
    return out


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Node(a.value * b.value, (a, b),
                lambda g: (g * b.value, g * a.value))


def smul(a: Node, s: float) -> Node:
    """Multiply by a python scalar constant."""
    return Node(a.value * s, (a,), lambda g: (g * s,))


def sqrt(a: Node) -> Node:
    y = np.sqrt(a.value)
    return Node(y, (a,), lambda g: (g / (2.0 * y),))


def clamp_min(a: Node, floor: float) -> Node:
    keep = a.value > floor
    return Node(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


def sum_all(a: Node) -> Node:
    return Node(np.asarray(a.value.sum()), (a,),
                lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def relu(a: Node) -> Node:
    mask = a.value > 0  # subgradient 0 at the kink
    return Node(np.maximum(a.value, 0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Node, slope: float) -> Node:
    mask = np.where(a.value >= 0, 1.0, slope).astype(a.value.dtype)
    return Node(kernels._leaky_relu(a.value, slope), (a,), lambda g: (g * mask,))


def matmul_nt(a: Node, b: Node) -> Node:
    """a @ b.T for a (B, D) and b (C, D); used for cosine score matrices."""
    return Node(a.value @ b.value.T, (a, b),
                lambda g: (g @ b.value, g.T @ a.value))


def normalize_rows(a: Node, eps: float = 0.0) -> Node:
    r = np.sqrt((a.value ** 2).sum(axis=-1, keepdims=True))
    if eps:
        r = np.maximum(r, eps)
    u = a.value / r

    def vjp(g):
        dot = (g * u).sum(axis=-1, keepdims=True)
        return ((g - dot * u) / r,)

    return Node(u, (a,), vjp)


def select_rows(a: Node, idx: np.ndarray) -> Node:
    """out[i] = a[i, idx[i]] for a 2-d node."""
    rows = np.arange(a.value.shape[0])

    def vjp(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, (rows, idx), g)
        return (ga,)

    return Node(a.value[rows, idx], (a,), vjp)


def row_mask_scale(mask: np.ndarray, v: Node) -> Node:
    """Constant (B, C) mask times a per-row scalar node of shape (B,)."""
    return Node(mask * v.value[:, None], (v,),
                lambda g: ((g * mask).sum(axis=1),))


def logsumexp_rows(a: Node) -> Node:
    m = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - m)
    z = e.sum(axis=1, keepdims=True)
    out = (m + np.log(z)).reshape(-1)
    soft = e / z
    return Node(out, (a,), lambda g: (g[:, None] * soft,))


# ---------------------------------------------------------------------------
# layer ops
# ---------------------------------------------------------------------------

def conv1d(x: Node, w: Node, b: Node, stride: int = 1, padding: int = 0) -> Node:
    xv, wv = x.value, w.value
    k = wv.shape[-1]

    def vjp(g):
        xp = np.pad(xv, [(0, 0)] * (xv.ndim - 1) + [(padding, padding)]) if padding else xv
        win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)[..., ::stride, :]
        gr = g.reshape((-1,) + g.shape[-2:])
        winr = win.reshape((-1,) + win.shape[-3:])
        gw = np.einsum("bol,bclk->ock", gr, winr)
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2))
        gwin = np.einsum("...ol,ock->...clk", g, wv)
        gxp = np.zeros_like(xp)
        l_out = g.shape[-1]
        for j in range(k):
            gxp[..., j:j + stride * l_out:stride] += gwin[..., j]
        gx = gxp[..., padding:xp.shape[-1] - padding] if padding else gxp
        return gx, gw, gb

    return Node(kernels._conv1d(xv, wv, b.value, stride, padding), (x, w, b), vjp)


def linear(x: Node, w: Node, b: Node) -> Node:
    def vjp(g):
        gx = g @ w.value
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.value.reshape(-1, x.value.shape[-1])
        gw = g2.T @ x2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return Node(kernels._linear(x.value, w.value, b.value), (x, w, b), vjp)


def mean_pool(x: Node) -> Node:
    n = x.value.shape[-1]
    return Node(x.value.mean(axis=-1), (x,),
                lambda g: (np.repeat(g[..., None], n, axis=-1) / n,))


def batchnorm_eval(x: Node, gamma: Node, beta: Node,
                   mean: np.ndarray, var: np.ndarray, eps: float) -> Node:
    """Normalization with fixed (running) statistics; mean/var are constants."""
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mean[:, None]) * inv[:, None]
    red = tuple(i for i in range(x.value.ndim) if i != x.value.ndim - 2)

    def vjp(g):
        gx = g * (gamma.value * inv)[:, None]
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        return gx, ggamma, gbeta

    return Node(xhat * gamma.value[:, None] + beta.value[:, None], (x, gamma, beta), vjp)


def batchnorm_train(x: Node, gamma: Node, beta: Node,
                    eps: float) -> tuple[Node, np.ndarray, np.ndarray]:
    """Normalization with batch statistics over batch and time.

    Returns the output node plus the biased batch mean/variance so the
    trainer can update running statistics outside the graph.
    """
    xv = x.value
    red = tuple(i for i in range(xv.ndim) if i != xv.ndim - 2)
    n = int(np.prod([xv.shape[i] for i in red]))
    mean = xv.mean(axis=red)
    var = xv.var(axis=red)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - _chan(mean, xv)) * _chan(inv, xv)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gxhat = g * _chan(gamma.value, xv)
        gx = _chan(inv, xv) * (
            gxhat
            - _chan(gxhat.sum(axis=red) / n, xv)
            - xhat * _chan((gxhat * xhat).sum(axis=red) / n, xv)
        )
        return gx, ggamma, gbeta

    out = xhat * _chan(gamma.value, xv) + _chan(beta.value, xv)
    return Node(out, (x, gamma, beta), vjp), mean, var


def _chan(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape a per-channel vector for broadcasting against (..., C, L)."""
    shape = [1] * like.ndim
    shape[-2] = v.shape[0]
    return v.reshape(shape)
