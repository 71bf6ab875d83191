"""Model graphs: the five-block and four-block speaker embedders and the
conv+LSTM segmenter, plus the executor and parameter accounting.

A model is an ordered list of layer nodes over a flat parameter store.
Graphs are immutable after build/load; the only sanctioned mutation is the
trainer updating batchnorm running statistics on its own private copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd, kernels
from .tensor import ShapeError, Tensor

NODE_KINDS = (
    "sinc_frontend",
    "conv1d",
    "batchnorm1d",
    "relu",
    "leaky_relu",
    "fused_conv_relu",
    "lstm",
    "pool",
    "linear",
    "sigmoid",
)

# parameter roles per node kind, in declaration order
_PARAM_ROLES = {
    "sinc_frontend": ("weight", "bias"),
    "conv1d": ("weight", "bias"),
    "fused_conv_relu": ("weight", "bias"),
    "batchnorm1d": ("gamma", "beta", "running_mean", "running_var"),
    "lstm": ("w_ih", "w_hh", "b_ih", "b_hh"),
    "linear": ("weight", "bias"),
}

# roles updated by gradient descent; sinc stays frozen, running stats are buffers
_TRAINABLE = {
    "conv1d": ("weight", "bias"),
    "fused_conv_relu": ("weight", "bias"),
    "batchnorm1d": ("gamma", "beta"),
    "linear": ("weight", "bias"),
}


@dataclass(frozen=True)
class LayerNode:
    """One executable graph node: kind, hyperparameters, parameter names."""

    kind: str
    name: str
    hyper: dict
    params: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass(frozen=True)
class ModelMeta:
    arch_id: str = ""
    epoch: int = 0
    seed: int = 0


@dataclass
class ModelGraph:
    nodes: list[LayerNode]
    params: dict[str, Tensor]
    meta: ModelMeta = field(default_factory=ModelMeta)

    def param(self, node: LayerNode, role: str) -> Tensor:
        return self.params[f"{node.name}.{role}"]


@dataclass(frozen=True)
class ModelConfig:
    """Desk-profile architecture settings; widths are config, not code."""

    sinc_channels: int = 16
    sinc_kernel: int = 81
    sinc_stride: int = 40
    conv_channels: tuple[int, ...] = (32, 32, 32, 32, 32)
    conv_kernel: int = 5
    conv_stride: int = 1
    embedding_dim: int = 32
    lstm_hidden: int = 16
    k_max: int = 4
    seg_sinc_kernel: int = 161
    seg_sinc_stride: int = 160
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    leaky_slope: float = 0.01

    def __post_init__(self) -> None:
        dims = (self.sinc_channels, self.sinc_kernel, self.sinc_stride,
                self.conv_kernel, self.conv_stride, self.embedding_dim,
                self.lstm_hidden, self.k_max, self.seg_sinc_kernel,
                self.seg_sinc_stride, *self.conv_channels)
        if any(d < 1 for d in dims):
            raise ValueError("all model dimensions must be positive")
        if len(self.conv_channels) not in (4, 5):
            raise ValueError(f"conv block count must be 4 or 5, "
                             f"got {len(self.conv_channels)}")


@dataclass
class ExecCounter:
    """Counts node executions across forward calls (fusion benchmark)."""

    nodes_executed: int = 0


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape).astype(np.float32)


def _conv_block(name: str, rng: np.random.Generator, c_in: int, c_out: int,
                kernel: int, stride: int, padding: int = 0) -> tuple[LayerNode, dict[str, Tensor]]:
    node = LayerNode(
        kind="conv1d", name=name,
        hyper={"in_channels": c_in, "out_channels": c_out,
               "kernel": kernel, "stride": stride, "padding": padding},
        params=(f"{name}.weight", f"{name}.bias"),
    )
    fan_in = c_in * kernel
    params = {
        f"{name}.weight": Tensor(_uniform(rng, fan_in, (c_out, c_in, kernel))),
        f"{name}.bias": Tensor(_uniform(rng, fan_in, (c_out,))),
    }
    return node, params


def _bn_block(name: str, channels: int, eps: float, momentum: float) -> tuple[LayerNode, dict[str, Tensor]]:
    node = LayerNode(
        kind="batchnorm1d", name=name,
        hyper={"channels": channels, "eps": eps, "momentum": momentum},
        params=(f"{name}.gamma", f"{name}.beta",
                f"{name}.running_mean", f"{name}.running_var"),
    )
    params = {
        f"{name}.gamma": Tensor(np.ones(channels, dtype=np.float32)),
        f"{name}.beta": Tensor(np.zeros(channels, dtype=np.float32)),
        f"{name}.running_mean": Tensor(np.zeros(channels, dtype=np.float32)),
        f"{name}.running_var": Tensor(np.ones(channels, dtype=np.float32)),
    }
    return node, params


def _linear_block(name: str, rng: np.random.Generator, n_in: int,
                  n_out: int) -> tuple[LayerNode, dict[str, Tensor]]:
    node = LayerNode(
        kind="linear", name=name,
        hyper={"in_features": n_in, "out_features": n_out},
        params=(f"{name}.weight", f"{name}.bias"),
    )
    params = {
        f"{name}.weight": Tensor(_uniform(rng, n_in, (n_out, n_in))),
        f"{name}.bias": Tensor(_uniform(rng, n_in, (n_out,))),
    }
    return node, params


def build_embedding_model(cfg: ModelConfig, variant: str, seed: int) -> ModelGraph:
    """Speaker embedder: sinc frontend, conv/activation/norm blocks, mean
    pooling, linear projection.

    ``baseline`` uses five conv blocks with leaky_relu; ``reduced`` drops one
    block and switches to relu (the fusable variant).
    """
    if variant == "baseline":
        n_blocks, act = 5, "leaky_relu"
    elif variant == "reduced":
        n_blocks, act = 4, "relu"
    else:
        raise ValueError(f"unknown embedding variant {variant!r}")
    if len(cfg.conv_channels) < n_blocks:
        raise ValueError(f"{variant} variant needs {n_blocks} conv widths, "
                         f"config has {len(cfg.conv_channels)}")

    rng = np.random.default_rng(seed)
    nodes: list[LayerNode] = []
    params: dict[str, Tensor] = {}

    sinc = LayerNode(
        kind="sinc_frontend", name="sinc",
        hyper={"in_channels": 1, "out_channels": cfg.sinc_channels,
               "kernel": cfg.sinc_kernel, "stride": cfg.sinc_stride, "padding": 0},
        params=("sinc.weight", "sinc.bias"),
    )
    params["sinc.weight"] = Tensor(_uniform(rng, cfg.sinc_kernel, (cfg.sinc_channels, 1, cfg.sinc_kernel)))
    params["sinc.bias"] = Tensor(_uniform(rng, cfg.sinc_kernel, (cfg.sinc_channels,)))
    nodes.append(sinc)

    c_in = cfg.sinc_channels
    for i in range(n_blocks):
        c_out = cfg.conv_channels[i]
        conv, p = _conv_block(f"block{i}.conv", rng, c_in, c_out,
                              cfg.conv_kernel, cfg.conv_stride)
        nodes.append(conv)
        params.update(p)
        slope = {"slope": cfg.leaky_slope} if act == "leaky_relu" else {}
        nodes.append(LayerNode(kind=act, name=f"block{i}.act", hyper=dict(slope)))
        bn, p = _bn_block(f"block{i}.bn", c_out, cfg.bn_eps, cfg.bn_momentum)
        nodes.append(bn)
        params.update(p)
        c_in = c_out

    nodes.append(LayerNode(kind="pool", name="pool", hyper={}))
    head, p = _linear_block("embed", rng, c_in, cfg.embedding_dim)
    nodes.append(head)
    params.update(p)

    model = ModelGraph(nodes, params, ModelMeta(f"embedding-{variant}", 0, seed))
    _validate_forward(model, cfg)
    return model


def build_segmentation_model(cfg: ModelConfig, seed: int) -> ModelGraph:
    """Per-frame activity scorer: sinc frontend, LSTM, linear, sigmoid.

    Output is (T, k_max) with values in [0, 1]; T is the sinc frame count.
    """
    rng = np.random.default_rng(seed)
    nodes: list[LayerNode] = []
    params: dict[str, Tensor] = {}

    pad = cfg.seg_sinc_kernel // 2
    sinc = LayerNode(
        kind="sinc_frontend", name="sinc",
        hyper={"in_channels": 1, "out_channels": cfg.sinc_channels,
               "kernel": cfg.seg_sinc_kernel, "stride": cfg.seg_sinc_stride,
               "padding": pad},
        params=("sinc.weight", "sinc.bias"),
    )
    params["sinc.weight"] = Tensor(_uniform(rng, cfg.seg_sinc_kernel, (cfg.sinc_channels, 1, cfg.seg_sinc_kernel)))
    params["sinc.bias"] = Tensor(_uniform(rng, cfg.seg_sinc_kernel, (cfg.sinc_channels,)))
    nodes.append(sinc)

    d, h = cfg.sinc_channels, cfg.lstm_hidden
    lstm = LayerNode(
        kind="lstm", name="lstm",
        hyper={"input_size": d, "hidden_size": h},
        params=("lstm.w_ih", "lstm.w_hh", "lstm.b_ih", "lstm.b_hh"),
    )
    params["lstm.w_ih"] = Tensor(_uniform(rng, h, (4 * h, d)))
    params["lstm.w_hh"] = Tensor(_uniform(rng, h, (4 * h, h)))
    params["lstm.b_ih"] = Tensor(_uniform(rng, h, (4 * h,)))
    params["lstm.b_hh"] = Tensor(_uniform(rng, h, (4 * h,)))
    nodes.append(lstm)

    head, p = _linear_block("head", rng, h, cfg.k_max)
    nodes.append(head)
    params.update(p)
    nodes.append(LayerNode(kind="sigmoid", name="squash", hyper={}))

    model = ModelGraph(nodes, params, ModelMeta("segmentation", 0, seed))
    _validate_forward(model, cfg)
    return model


def _validate_forward(model: ModelGraph, cfg: ModelConfig) -> None:
    """Build-time check that consecutive node shapes are compatible."""
    probe_len = cfg.sinc_kernel + cfg.sinc_stride * max(16, 4 * cfg.conv_kernel)
    forward(model, Tensor(np.zeros((1, probe_len), dtype=np.float32)))


def forward(model: ModelGraph, input: Tensor, record: bool = False,
            training: bool = False, counter: ExecCounter | None = None):
    """Run the graph on a (C, L) input (dense nodes also accept (B, C, L)).

    With ``record=True`` returns ``(output, tape)`` where the tape holds one
    node per trainable parameter.  ``training=True`` makes batchnorm use
    batch statistics and updates the model's running statistics in place
    (trainer-only path; inference calls never mutate the model).
    """
    if record:
        return _forward_recorded(model, input, training, counter)
    x = input.data
    for node in model.nodes:
        try:
            x = _run_node(model, node, x, training)
        except (ShapeError, ValueError) as err:
            raise ShapeError(f"node {node.name!r} ({node.kind}): {err}") from err
        if counter is not None:
            counter.nodes_executed += 1
    return Tensor(np.ascontiguousarray(x))


def _dequant(t: Tensor) -> np.ndarray:
    return t.data if t.elem_kind != "i8" else t.dequantized()


def _run_node(model: ModelGraph, node: LayerNode, x: np.ndarray,
              training: bool) -> np.ndarray:
    kind = node.kind
    if kind in ("sinc_frontend", "conv1d", "fused_conv_relu"):
        w = model.param(node, "weight")
        b = _dequant(model.param(node, "bias"))
        stride = node.hyper.get("stride", 1)
        padding = node.hyper.get("padding", 0)
        if x.shape[-2] != node.hyper["in_channels"]:
            raise ShapeError(f"expected {node.hyper['in_channels']} input channels, "
                             f"got {x.shape[-2]}")
        if w.elem_kind == "i8":
            y = kernels._conv1d_int8(x, w.data, w.quant_scale, b, stride, padding)
        else:
            y = kernels._conv1d(x, w.data, b, stride, padding)
        return kernels._relu(y) if kind == "fused_conv_relu" else y
    if kind == "batchnorm1d":
        gamma = model.param(node, "gamma").data
        beta = model.param(node, "beta").data
        if training:
            mean, var = kernels._batch_stats(x)
            _update_running_stats(model, node, mean, var, x)
        else:
            mean = model.param(node, "running_mean").data
            var = model.param(node, "running_var").data
        return kernels._batchnorm1d(x, gamma, beta, mean, var, node.hyper["eps"])
    if kind == "relu":
        return kernels._relu(x)
    if kind == "leaky_relu":
        return kernels._leaky_relu(x, node.hyper.get("slope", 0.01))
    if kind == "sigmoid":
        return kernels._sigmoid(x)
    if kind == "pool":
        if x.shape[-1] == 0:
            raise ShapeError("pool requires at least one frame")
        return kernels._mean_pool(x)
    if kind == "linear":
        w = model.param(node, "weight")
        b = _dequant(model.param(node, "bias"))
        if x.shape[-1] != node.hyper["in_features"]:
            raise ShapeError(f"expected {node.hyper['in_features']} input features, "
                             f"got {x.shape[-1]}")
        if w.elem_kind == "i8":
            return kernels._linear_int8(x, w.data, w.quant_scale, b)
        return kernels._linear(x, w.data, b)
    if kind == "lstm":
        if x.ndim != 2:
            raise ShapeError(f"lstm node takes a single (C, L) sequence, got {x.shape}")
        seq = x.T  # (C, L) -> time-major (T, D)
        return kernels._lstm(seq,
                             model.param(node, "w_ih").data,
                             model.param(node, "w_hh").data,
                             model.param(node, "b_ih").data,
                             model.param(node, "b_hh").data)
    raise ValueError(f"unknown node kind {kind!r}")


def _update_running_stats(model: ModelGraph, node: LayerNode,
                          mean: np.ndarray, var: np.ndarray, x: np.ndarray) -> None:
    m = node.hyper["momentum"]
    n = x.size // x.shape[-2]
    unbiased = var * (n / max(n - 1, 1))  # running update uses the unbiased estimate
    rm = model.param(node, "running_mean").data
    rv = model.param(node, "running_var").data
    model.params[f"{node.name}.running_mean"] = Tensor(((1 - m) * rm + m * mean).astype(np.float32))
    model.params[f"{node.name}.running_var"] = Tensor(((1 - m) * rv + m * unbiased).astype(np.float32))


def _forward_recorded(model: ModelGraph, input: Tensor, training: bool,
                      counter: ExecCounter | None):
    tape = autograd.GradTape()
    x = autograd.constant(input.data)
    for node in model.nodes:
        try:
            x = _run_node_recorded(model, node, x, tape, training)
        except (ShapeError, ValueError) as err:
            raise ShapeError(f"node {node.name!r} ({node.kind}): {err}") from err
        if counter is not None:
            counter.nodes_executed += 1
    tape.output_node = x
    tape.root = x
    return Tensor(np.ascontiguousarray(x.value)), tape


def _run_node_recorded(model: ModelGraph, node: LayerNode, x: autograd.Node,
                       tape: autograd.GradTape, training: bool) -> autograd.Node:
    kind = node.kind
    trainable = _TRAINABLE.get(kind, ())

    def leaf(role: str) -> autograd.Node:
        t = model.param(node, role)
        if t.elem_kind == "i8":
            raise ValueError("cannot record gradients through int8 parameters")
        name = f"{node.name}.{role}"
        return tape.param(name, t.data) if role in trainable else autograd.constant(t.data)

    if kind in ("sinc_frontend", "conv1d", "fused_conv_relu"):
        y = autograd.conv1d(x, leaf("weight"), leaf("bias"),
                            node.hyper.get("stride", 1), node.hyper.get("padding", 0))
        return autograd.relu(y) if kind == "fused_conv_relu" else y
    if kind == "batchnorm1d":
        gamma, beta = leaf("gamma"), leaf("beta")
        if training:
            out, mean, var = autograd.batchnorm_train(x, gamma, beta, node.hyper["eps"])
            _update_running_stats(model, node, mean, var, x.value)
            return out
        return autograd.batchnorm_eval(x, gamma, beta,
                                       model.param(node, "running_mean").data,
                                       model.param(node, "running_var").data,
                                       node.hyper["eps"])
    if kind == "relu":
        return autograd.relu(x)
    if kind == "leaky_relu":
        return autograd.leaky_relu(x, node.hyper.get("slope", 0.01))
    if kind == "pool":
        if x.value.shape[-1] == 0:
            raise ShapeError("pool requires at least one frame")
        return autograd.mean_pool(x)
    if kind == "linear":
        return autograd.linear(x, leaf("weight"), leaf("bias"))
    raise ValueError(f"gradient recording not supported for {kind!r} nodes")


def param_count(model: ModelGraph) -> int:
    """Total number of stored parameter elements."""
    return sum(t.size for t in model.params.values())


def model_size_bytes(model: ModelGraph) -> int:
    """Total parameter storage: elements times element size plus quant scales."""
    return sum(t.byte_size() for t in model.params.values())


def trainable_param_names(model: ModelGraph) -> list[str]:
    names = []
    for node in model.nodes:
        for role in _TRAINABLE.get(node.kind, ()):
            names.append(f"{node.name}.{role}")
    return names


def clone_model(model: ModelGraph) -> ModelGraph:
    """Deep copy; nodes are immutable and shared, parameter data is copied."""
    params = {name: Tensor(t.data.copy(), t.quant_scale)
              for name, t in model.params.items()}
    return ModelGraph(list(model.nodes), params, model.meta)
