"""Teacher-student training of the reduced embedder.

The task loss is an additive-angular-margin classifier over L2-normalized
embeddings; distillation adds the mean squared distance between student and
teacher embeddings scaled by a teacher weight.  Training is plain minibatch
SGD, fully deterministic given the config seed, with a checkpoint snapshot
every ``checkpoint_every`` epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autograd
from .autograd import Node
from .metrics import Annotation, der
from .models import ModelGraph, clone_model, forward
from .pipeline import PipelineConfig, run_pipeline
from .tensor import Tensor


@dataclass(frozen=True)
class DistillConfig:
    teacher_weight: float = 1000.0
    epochs: int = 30
    checkpoint_every: int = 20
    learning_rate: float = 0.05
    batch_size: int = 8
    seed: int = 0
    margin: float = 0.2
    scale: float = 10.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.teacher_weight < 0:
            raise ValueError("learning_rate must be > 0, batch_size >= 1, "
                             "teacher_weight >= 0")


@dataclass
class Checkpoint:
    epoch: int
    model: ModelGraph
    loss_trace: list[float]
    eval_der: float | None = None


@dataclass
class TrainResult:
    model: ModelGraph
    checkpoints: list[Checkpoint]
    loss_trace: list[float]
    class_weights: np.ndarray


@dataclass
class SweepRow:
    teacher_weight: float
    final_der: float | None
    seed: int
    error: str | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow]
    best_weight: float | None

    def to_csv(self) -> str:
        lines = ["lambda,DER"]
        for r in self.rows:
            lines.append(f"{r.teacher_weight},"
                         f"{repr(r.final_der) if r.final_der is not None else 'error:' + (r.error or '')}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def arcface_loss_node(emb: Node, class_weights: Node, labels: np.ndarray,
                      scale: float, margin: float) -> Node:
    """Margin-softmax loss node over a (B, D) embedding batch.

    Embeddings and class weights are L2-normalized internally; the true-class
    logit is scale*cos(theta + margin), the rest scale*cos(theta).
    """
    n_classes = class_weights.value.shape[0]
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    batch = emb.value.shape[0]

    en = autograd.normalize_rows(emb)
    wn = autograd.normalize_rows(class_weights)
    cos = autograd.matmul_nt(en, wn)
    if margin != 0.0:
        cos_y = autograd.select_rows(cos, labels)
        ones = autograd.constant(np.ones(batch, dtype=emb.value.dtype))
        sin_y = autograd.sqrt(autograd.clamp_min(
            autograd.sub(ones, autograd.mul(cos_y, cos_y)), 1e-12))
        cos_ym = autograd.sub(autograd.smul(cos_y, math.cos(margin)),
                              autograd.smul(sin_y, math.sin(margin)))
        onehot = np.zeros((batch, n_classes), dtype=emb.value.dtype)
        onehot[np.arange(batch), labels] = 1.0
        logits = autograd.add(
            autograd.smul(cos, scale),
            autograd.row_mask_scale(onehot, autograd.smul(
                autograd.sub(cos_ym, cos_y), scale)))
    else:
        logits = autograd.smul(cos, scale)
    lse = autograd.logsumexp_rows(logits)
    true_logit = autograd.select_rows(logits, labels)
    return autograd.smul(autograd.sum_all(autograd.sub(lse, true_logit)), 1.0 / batch)


def arcface_loss(embeddings: np.ndarray, labels: np.ndarray,
                 class_weights: np.ndarray, scale: float = 10.0,
                 margin: float = 0.2) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss value plus gradients w.r.t. embeddings and class weights."""
    tape = autograd.GradTape()
    e = tape.param("embeddings", np.asarray(embeddings))
    w = tape.param("class_weights", np.asarray(class_weights))
    tape.root = arcface_loss_node(e, w, labels, scale, margin)
    grads = autograd.backward(tape)
    return float(tape.root.value), grads["embeddings"], grads["class_weights"]


def mean_squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over the batch of the squared Euclidean embedding distance."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"embedding shape mismatch: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum() / a.shape[0])


def distill_loss(task_loss: float, student_emb: np.ndarray,
                 teacher_emb: np.ndarray, teacher_weight: float) -> float:
    """task_loss + teacher_weight * mean squared student-teacher distance."""
    return task_loss + teacher_weight * mean_squared_distance(student_emb, teacher_emb)


def _teacher_distance_node(emb: Node, teacher_emb: np.ndarray) -> Node:
    d = autograd.sub(emb, autograd.constant(teacher_emb.astype(emb.value.dtype)))
    return autograd.smul(autograd.sum_all(autograd.mul(d, d)),
                         1.0 / emb.value.shape[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def embed_chunks(model: ModelGraph, chunks: np.ndarray) -> np.ndarray:
    """Inference-mode embeddings (N, D) for a batch of (N, L) waveforms."""
    return forward(model, Tensor(np.asarray(chunks, dtype=np.float32)[:, None, :])).data


def _embedding_dim(model: ModelGraph) -> int:
    for node in reversed(model.nodes):
        if node.kind == "linear":
            return int(node.hyper["out_features"])
    raise ValueError("model has no linear head")


def train_distill(student: ModelGraph, teacher: ModelGraph | None,
                  chunks: np.ndarray, labels: np.ndarray,
                  cfg: DistillConfig) -> TrainResult:
    """SGD training of a private copy of ``student``; the teacher is frozen.

    With ``teacher_weight == 0`` (or no teacher) this is plain task training:
    the teacher term is skipped entirely, so traces are bit-identical to a
    task-only run under the same seed.
    """
    chunks = np.asarray(chunks, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(chunks) == 0:
        raise ValueError("training dataset is empty")
    use_teacher = teacher is not None and cfg.teacher_weight != 0
    if use_teacher and _embedding_dim(teacher) != _embedding_dim(student):
        raise ValueError(f"teacher embedding dim {_embedding_dim(teacher)} != "
                         f"student {_embedding_dim(student)}")

    model = clone_model(student)
    rng = np.random.default_rng(cfg.seed)
    n_classes = int(labels.max()) + 1
    dim = _embedding_dim(model)
    a = 1.0 / math.sqrt(dim)
    class_weights = rng.uniform(-a, a, size=(n_classes, dim)).astype(np.float32)

    teacher_embs = embed_chunks(teacher, chunks) if use_teacher else None

    n = len(chunks)
    loss_trace: list[float] = []
    checkpoints: list[Checkpoint] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            out, tape = forward(model, Tensor(chunks[idx][:, None, :]),
                                record=True, training=True)
            emb_node = tape.output_node
            cw = tape.param("head.class_weights", class_weights)
            loss = arcface_loss_node(emb_node, cw, labels[idx], cfg.scale, cfg.margin)
            if use_teacher:
                loss = autograd.add(loss, autograd.smul(
                    _teacher_distance_node(emb_node, teacher_embs[idx]),
                    cfg.teacher_weight))
            tape.root = loss
            grads = autograd.backward(tape)
            for name, g in grads.items():
                if name == "head.class_weights":
                    class_weights = class_weights - cfg.learning_rate * g
                else:
                    p = model.params[name]
                    model.params[name] = Tensor(p.data - cfg.learning_rate * g)
            running += float(loss.value) * len(idx)
        loss_trace.append(running / n)
        if (epoch + 1) % cfg.checkpoint_every == 0:
            snap = clone_model(model)
            snap.meta = replace(snap.meta, epoch=epoch)
            checkpoints.append(Checkpoint(epoch, snap, list(loss_trace)))

    model.meta = replace(model.meta, epoch=cfg.epochs - 1)
    return TrainResult(model, checkpoints, loss_trace, class_weights)


def lambda_sweep(lambdas: list[float], student: ModelGraph, teacher: ModelGraph,
                 chunks: np.ndarray, labels: np.ndarray, cfg: DistillConfig,
                 segmenter: ModelGraph, eval_audio: np.ndarray,
                 eval_reference: Annotation,
                 pipe_cfg: PipelineConfig) -> SweepReport:
    """One full training plus pipeline evaluation per teacher weight.

    Rows are sorted by weight ascending; row i trains with seed cfg.seed + i.
    Per-row failures are recorded and the sweep continues.
    """
    if not lambdas:
        raise ValueError("sweep needs at least one teacher weight")
    rows: list[SweepRow] = []
    for i, weight in enumerate(sorted(lambdas)):
        seed = cfg.seed + i
        try:
            row_cfg = replace(cfg, teacher_weight=weight, seed=seed)
            result = train_distill(student, teacher, chunks, labels, row_cfg)
            hyp, _ = run_pipeline(result.model, segmenter, eval_audio, pipe_cfg,
                                  file_id=eval_reference.file_id)
            rows.append(SweepRow(weight, der(eval_reference, hyp).der, seed))
        except Exception as err:  # propagate per row, keep sweeping
            rows.append(SweepRow(weight, None, seed, error=str(err)))
    scored = [r for r in rows if r.final_der is not None]
    best = min(scored, key=lambda r: (r.final_der, r.teacher_weight)).teacher_weight \
        if scored else None
    return SweepReport(rows, best)
