"""Command-line harness.

Subcommands mirror the experiment workflow: synth-data, train-distill,
sweep-lambda, optimize, bench, eval-der, analyze-memory.  Exit codes:
0 success, 1 usage error, 2 runtime failure.  Every command that writes
outputs also snapshots its fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import sys
import traceback
from pathlib import Path

import numpy as np

from . import audio_io, config, metrics, passes, rttm
from .distill import DistillConfig, lambda_sweep, train_distill
from .metrics import BenchRow, bench_report, der, latency_stats
from .model_io import load_model, save_model
from .models import (ModelConfig, build_embedding_model, build_segmentation_model,
                     model_size_bytes)
from .pipeline import PipelineConfig, chunk_stream, run_pipeline
from .synth import SynthSpec, labeled_chunks, synth_generate

_PASS_NAMES = ("fuse", "quant-int8", "prune-structured", "prune-unstructured")
_VARIANTS = ("reduced", "fused", "quantized", "pruned-structured", "pruned-unstructured")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract says 1
        raise UsageError(message)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (config.ConfigError,) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        if "--traceback" in (argv or sys.argv):
            traceback.print_exc()
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diopt", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None)

    p = sub.add_parser("synth-data", parents=[_common()],
                       help="generate multi-speaker audio plus reference RTTM")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--silence", type=float)
    p.add_argument("--turn-min", type=float)
    p.add_argument("--turn-max", type=float)
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-distill", parents=[_common()],
                       help="train the reduced embedder against a frozen teacher")
    p.add_argument("--audio", required=True)
    p.add_argument("--rttm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", help="teacher model file; default builds a baseline")
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--chunk-duration", type=float, default=0.5)
    p.add_argument("--teacher-weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep-lambda", parents=[_common()],
                       help="train once per teacher weight and report eval DER")
    p.add_argument("--audio", required=True)
    p.add_argument("--rttm", required=True)
    p.add_argument("--eval-audio", required=True)
    p.add_argument("--eval-rttm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", required=True,
                   help="comma-separated teacher weights, e.g. 0,1,10,100,1000")
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--chunk-duration", type=float, default=0.5)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("optimize", parents=[_common()],
                       help="apply optimization passes to a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pass", dest="passes", action="append", required=True,
                   choices=_PASS_NAMES, help="repeatable; applied in order")
    p.add_argument("--amount", type=float,
                   help="channels (structured) or fraction (unstructured)")
    p.add_argument("--prune-norm", type=int, default=2)
    p.add_argument("--prune-dim", type=int, default=0)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("bench", parents=[_common()],
                       help="run model variants over one audio set and tabulate")
    p.add_argument("--model", required=True, help="embedder model file")
    p.add_argument("--segmenter", help="segmenter model file; default built from seed")
    p.add_argument("--segmenter-seed", type=int, default=0)
    p.add_argument("--audio", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="reduced,fused,quantized")
    p.add_argument("--baseline", default="reduced")
    p.add_argument("--amount", type=float)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("eval-der", parents=[_common()],
                       help="score a hypothesis RTTM against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_der)

    p = sub.add_parser("analyze-memory", parents=[_common()],
                       help="COO vs dense storage break-even analysis")
    p.add_argument("--ndim", type=int, required=True)
    p.add_argument("--elem", type=int, required=True)
    p.add_argument("--shape", help="comma-separated dims for byte totals")
    p.add_argument("--nze", type=int, help="nonzero count for byte totals")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_analyze_memory)
    return parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--traceback", action="store_true", help=argparse.SUPPRESS)
    return p


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, settings: dict) -> None:
    config.write_kv(out / "run_config.txt",
                    {k: config.format_value(v) for k, v in settings.items()})


def _pipeline_settings(args) -> dict:
    return config.dataclass_defaults("pipeline", PipelineConfig())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    defaults = config.dataclass_defaults("synth", SynthSpec())
    overrides = {
        "synth.num_speakers": args.speakers,
        "synth.duration": args.duration,
        "synth.silence_fraction": args.silence,
        "synth.turn_min": args.turn_min,
        "synth.turn_max": args.turn_max,
        "synth.sample_rate": args.sample_rate,
        "synth.seed": args.seed,
    }
    settings = config.resolve_settings(defaults, args.config, overrides)
    spec = config.build_dataclass(SynthSpec, "synth", settings)
    wave, reference = synth_generate(spec)

    out = _outdir(args.out)
    audio_io.write_wav(out / "audio.wav", wave, spec.sample_rate)
    rttm.rttm_write(reference, out / "reference.rttm")
    _snapshot(out, settings)
    print(f"wrote {out / 'audio.wav'} ({spec.duration:.1f} s, "
          f"{spec.num_speakers} speakers) and reference.rttm")
    return 0


def _load_training_data(args, sample_rate: int):
    wave = audio_io.read_audio(args.audio, sample_rate)
    reference = rttm.rttm_read(args.rttm)
    chunks, labels, names = labeled_chunks(wave, reference, args.chunk_duration,
                                           sample_rate)
    if len(chunks) == 0:
        raise ValueError(f"no training chunks of {args.chunk_duration}s "
                         f"fit the labeled segments")
    return chunks, labels, names


def _cmd_train(args) -> int:
    model_cfg = ModelConfig()
    defaults = config.dataclass_defaults("train", DistillConfig())
    defaults.update(config.dataclass_defaults("model", model_cfg))
    defaults["data.sample_rate"] = 16000
    overrides = {
        "train.teacher_weight": args.teacher_weight,
        "train.epochs": args.epochs,
        "train.checkpoint_every": args.checkpoint_every,
        "train.learning_rate": args.learning_rate,
        "train.batch_size": args.batch_size,
        "train.seed": args.seed,
    }
    settings = config.resolve_settings(defaults, args.config, overrides)
    cfg = config.build_dataclass(DistillConfig, "train", settings)
    model_cfg = config.build_dataclass(ModelConfig, "model", settings)

    chunks, labels, _ = _load_training_data(args, settings["data.sample_rate"])
    if args.teacher:
        teacher = load_model(args.teacher)
    else:
        teacher = build_embedding_model(model_cfg, "baseline", args.model_seed)
    student = build_embedding_model(model_cfg, "reduced", args.model_seed)

    result = train_distill(student, teacher, chunks, labels, cfg)

    out = _outdir(args.out)
    save_model(result.model, out / "student.diop")
    if not args.teacher:
        save_model(teacher, out / "teacher.diop")
    for ckpt in result.checkpoints:
        save_model(ckpt.model, out / f"ckpt_ep{ckpt.epoch:03d}.diop")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "eval_der"])
        for epoch, loss in enumerate(result.loss_trace):
            w.writerow([epoch, repr(loss), ""])
    _snapshot(out, settings)
    print(f"trained {cfg.epochs} epochs on {len(chunks)} chunks; "
          f"final loss {result.loss_trace[-1]:.4f}; "
          f"{len(result.checkpoints)} checkpoints -> {out}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        weights = [float(w) for w in args.lambdas.split(",") if w.strip()]
    except ValueError as err:
        raise UsageError(f"bad --lambdas value: {err}") from err
    if not weights:
        raise UsageError("--lambdas must list at least one value")

    defaults = config.dataclass_defaults("train", DistillConfig())
    defaults.update(config.dataclass_defaults("model", ModelConfig()))
    defaults.update(_pipeline_settings(args))
    defaults["data.sample_rate"] = 16000
    overrides = {
        "train.epochs": args.epochs,
        "train.learning_rate": args.learning_rate,
        "train.batch_size": args.batch_size,
        "train.seed": args.seed,
    }
    settings = config.resolve_settings(defaults, args.config, overrides)
    cfg = config.build_dataclass(DistillConfig, "train", settings)
    model_cfg = config.build_dataclass(ModelConfig, "model", settings)
    pipe_cfg = config.build_dataclass(PipelineConfig, "pipeline", settings)

    chunks, labels, _ = _load_training_data(args, settings["data.sample_rate"])
    eval_audio = audio_io.read_audio(args.eval_audio, pipe_cfg.sample_rate)
    eval_ref = rttm.rttm_read(args.eval_rttm)
    teacher = build_embedding_model(model_cfg, "baseline", args.model_seed)
    student = build_embedding_model(model_cfg, "reduced", args.model_seed)
    segmenter = build_segmentation_model(model_cfg, args.model_seed)

    report = lambda_sweep(weights, student, teacher, chunks, labels, cfg,
                          segmenter, eval_audio, eval_ref, pipe_cfg)

    out = _outdir(args.out)
    (out / "sweep.csv").write_text(report.to_csv())
    _snapshot(out, settings)
    best = "none" if report.best_weight is None else repr(report.best_weight)
    (out / "best.txt").write_text(f"best_lambda = {best}\n")
    print(report.to_csv(), end="")
    print(f"best lambda: {best}")
    return 0


def _apply_pass(model, name: str, args):
    if name == "fuse":
        return passes.fuse_conv_relu(model), None
    if name == "quant-int8":
        return passes.quantize_weights_int8(model), None
    if name == "prune-structured":
        amount = 1 if args.amount is None else int(args.amount)
        return passes.prune_structured(model, amount=amount, n=args.prune_norm,
                                       dim=args.prune_dim)
    if name == "prune-unstructured":
        amount = 0.3 if args.amount is None else float(args.amount)
        return passes.prune_unstructured_global(model, amount=amount)
    raise UsageError(f"unknown pass {name!r}")


def _cmd_optimize(args) -> int:
    model = load_model(args.model)
    out = _outdir(args.out)
    before_nodes = len(model.nodes)
    mask = None
    for name in args.passes:
        model, new_mask = _apply_pass(model, name, args)
        mask = new_mask if new_mask is not None else mask
    save_model(model, out / "optimized.diop")

    report_lines = [f"passes = {','.join(args.passes)}",
                    f"nodes_before = {before_nodes}",
                    f"nodes_after = {len(model.nodes)}",
                    f"model_size_bytes = {model_size_bytes(model)}"]
    if mask is not None:
        rep = passes.sparsity_report(model, mask)
        with open(out / "sparsity.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["module", "sparsity", "is_pruned"])
            for module, frac in rep.per_module.items():
                w.writerow([module, repr(frac), rep.is_pruned[module]])
            w.writerow(["average", repr(rep.average), ""])
            w.writerow(["overall", repr(rep.overall), ""])
        sparse = passes.sparse_export_size(model, mask)
        dense = passes.dense_export_size(model, mask)
        report_lines += [f"average_sparsity = {rep.average}",
                         f"overall_sparsity = {rep.overall}",
                         f"sparse_coo_bytes = {sparse}",
                         f"dense_bytes = {dense}"]
    (out / "optimize_report.txt").write_text("\n".join(report_lines) + "\n")
    _snapshot(out, {"optimize.model": args.model,
                    "optimize.passes": ",".join(args.passes),
                    "optimize.amount": args.amount,
                    "optimize.prune_norm": args.prune_norm,
                    "optimize.prune_dim": args.prune_dim})
    print("\n".join(report_lines))
    return 0


def _make_variant(base, name: str, args):
    if name == "reduced":
        return base
    if name == "fused":
        return passes.fuse_conv_relu(base)
    if name == "quantized":
        return passes.quantize_weights_int8(base)
    if name == "pruned-structured":
        return passes.prune_structured(
            base, amount=1 if args.amount is None else int(args.amount))[0]
    if name == "pruned-unstructured":
        return passes.prune_unstructured_global(
            base, amount=0.3 if args.amount is None else float(args.amount))[0]
    raise UsageError(f"unknown variant {name!r}; choose from {_VARIANTS}")


def _cmd_bench(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if args.baseline not in variants:
        raise UsageError(f"baseline {args.baseline!r} not in variants {variants}")

    defaults = _pipeline_settings(args)
    defaults.update(config.dataclass_defaults("model", ModelConfig()))
    settings = config.resolve_settings(defaults, args.config, {})
    pipe_cfg = config.build_dataclass(PipelineConfig, "pipeline", settings)
    model_cfg = config.build_dataclass(ModelConfig, "model", settings)

    base = load_model(args.model)
    segmenter = load_model(args.segmenter) if args.segmenter \
        else build_segmentation_model(model_cfg, args.segmenter_seed)
    audio = audio_io.read_audio(args.audio, pipe_cfg.sample_rate)
    reference = rttm.rttm_read(args.ref)

    out = _outdir(args.out)
    rows = []
    for name in variants:  # sequential: latency measured without contention
        model = _make_variant(base, name, args)
        hyp, results = run_pipeline(model, segmenter, audio, pipe_cfg,
                                    file_id=reference.file_id)
        rttm.rttm_write(hyp, out / f"hyp_{name}.rttm")
        samples = [r.t2 - r.t1 for r in results]
        with open(out / f"latency_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chunk_index", "t1", "t2", "latency_s"])
            for r in results:
                w.writerow([r.chunk_index, repr(r.t1), repr(r.t2), repr(r.t2 - r.t1)])
        rows.append(BenchRow(name, der(reference, hyp), latency_stats(samples),
                             model_size_bytes(model)))

    report = bench_report(rows, args.baseline)
    (out / "report.csv").write_text(report.to_csv())
    _snapshot(out, {**settings, "bench.variants": ",".join(variants),
                    "bench.baseline": args.baseline,
                    "bench.model": args.model,
                    "bench.audio": args.audio, "bench.ref": args.ref})
    print(report.to_csv(), end="")
    return 0


def _cmd_eval_der(args) -> int:
    reference = rttm.rttm_read(args.ref)
    hypothesis = rttm.rttm_read(args.hyp)
    hypothesis.file_id = reference.file_id
    breakdown = der(reference, hypothesis)
    print(f"DER {breakdown.der:.6f} (missed {breakdown.missed:.3f}s, "
          f"false alarm {breakdown.false_alarm:.3f}s, "
          f"confusion {breakdown.confusion:.3f}s, "
          f"reference speech {breakdown.total_reference_speech:.3f}s)")
    if args.out:
        out = _outdir(args.out)
        with open(out / "der.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["der", "missed_s", "false_alarm_s", "confusion_s",
                        "total_reference_s"])
            w.writerow([repr(breakdown.der), repr(breakdown.missed),
                        repr(breakdown.false_alarm), repr(breakdown.confusion),
                        repr(breakdown.total_reference_speech)])
        _snapshot(out, {"eval.ref": args.ref, "eval.hyp": args.hyp})
    return 0


def _cmd_analyze_memory(args) -> int:
    break_even = passes.coo_break_even_amount(args.ndim, args.elem)
    lines = [f"break_even_amount = {break_even:.4f}"]
    if args.shape and args.nze is not None:
        shape = tuple(int(d) for d in args.shape.split(","))
        if len(shape) != args.ndim:
            raise UsageError(f"--shape has {len(shape)} dims but --ndim is {args.ndim}")
        est = passes.memory_estimate(shape, args.nze, args.elem)
        lines.append(f"dense_bytes = {est.dense_bytes}")
        lines.append(f"coo_bytes = {est.coo_bytes}")
        lines.append(f"coo_smaller = {est.coo_bytes < est.dense_bytes}")
    print("\n".join(lines))
    if args.out:
        out = _outdir(args.out)
        (out / "memory.txt").write_text("\n".join(lines) + "\n")
        _snapshot(out, {"memory.ndim": args.ndim, "memory.elem": args.elem,
                        "memory.shape": args.shape, "memory.nze": args.nze})
    return 0


if __name__ == "__main__":
    sys.exit(main())
