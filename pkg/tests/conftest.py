"""Shared fixtures: a tiny 8 kHz model profile that keeps the suite fast, a
matching pipeline config, and the central-difference gradient checker."""

import numpy as np
import pytest

from diopt import ModelConfig, PipelineConfig
from diopt.autograd import GradTape, backward, constant

# small profile: segmenter frame rate stays 8000/80 = 100 fps
TINY = ModelConfig(sinc_channels=6, sinc_kernel=33, sinc_stride=16,
                   conv_channels=(8, 8, 8, 8, 8), conv_kernel=3,
                   embedding_dim=8, lstm_hidden=6, k_max=3,
                   seg_sinc_kernel=81, seg_sinc_stride=80)

TINY_RATE = 8000


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_pipe_cfg():
    return PipelineConfig(window_duration=2.0, step=0.25, latency=1.0,
                          sample_rate=TINY_RATE)


def rel_grad_error(build_loss, params: dict, h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``build_loss`` maps {name: Node} to a scalar loss node; ``params`` holds
    float64 arrays (mutated in place during probing, restored after).
    """
    tape = GradTape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    tape.root = build_loss(nodes)
    analytic = backward(tape)

    def value() -> float:
        return float(build_loss({k: constant(v) for k, v in params.items()}).value)

    worst = 0.0
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat, nf = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            nf[i] = (up - down) / (2 * h)
        a = analytic[name]
        denom = max(np.abs(a).max(), np.abs(numeric).max(), 1e-10)
        worst = max(worst, float(np.abs(a - numeric).max() / denom))
    return worst
