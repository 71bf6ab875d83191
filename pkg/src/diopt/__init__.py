"""diopt: a desk-scale online speaker diarization engine with inference
optimization passes (distillation, pruning, fusion, int8 quantization) and a
DER/latency benchmark harness."""

from .autograd import GradTape, backward
from .distill import (Checkpoint, DistillConfig, TrainResult, arcface_loss,
                      distill_loss, lambda_sweep, train_distill)
from .kernels import (activation_forward, batchnorm1d_forward, conv1d_forward,
                      linear_forward, lstm_forward, temporal_stats_pool)
from .metrics import (Annotation, BenchRow, DERBreakdown, LatencyStats, Segment,
                      bench_report, der, latency_stats, optimal_mapping)
from .model_io import ModelFormatError, load_model, save_model
from .models import (ExecCounter, LayerNode, ModelConfig, ModelGraph,
                     build_embedding_model, build_segmentation_model, forward,
                     model_size_bytes, param_count)
from .passes import (MemoryEstimate, PruneMask, SparsityReport,
                     coo_break_even_amount, coo_memory_bytes, fuse_conv_relu,
                     prune_structured, prune_unstructured_global,
                     quantize_tensor_int8, quantize_weights_int8,
                     sparse_export_size, sparsity_report)
from .pipeline import (ChunkResult, ClusteringState, PipelineConfig, StreamChunk,
                       chunk_stream, cluster_update, embed_active_speakers,
                       run_pipeline, segment_chunk)
from .rttm import RTTMParseError, rttm_read, rttm_write
from .synth import SynthSpec, labeled_chunks, synth_generate
from .tensor import ShapeError, Tensor

__version__ = "0.1.0"
