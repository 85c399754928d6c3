"""Sentence encoders: piecewise-pooled convolution and column self-attention.

Both consume a (d, n) sentence matrix. The convolutional encoder pools its
feature map over the three segments split at the entity positions and
returns one vector of 3 * conv_channels entries. The self-attention encoder
scores every column per feature row, normalizes across the sequence, and
returns the attention-weighted column sum, one vector of d entries.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nm
from .numerics import Tensor


@dataclass
class PcnnParams:
    kernel: Tensor  # (conv_channels, kernel_width, d)
    bias: Tensor    # (conv_channels,)


@dataclass
class SelfAttnParams:
    w_hidden: Tensor  # (d, d)
    b_hidden: Tensor  # (d,)
    w_score: Tensor   # (d, d)
    b_score: Tensor   # (d,)


def pcnn_encode(x: Tensor, head_pos: int, tail_pos: int, params: PcnnParams) -> Tensor:
    """Convolve, max-pool per segment, concatenate, tanh. Output (3*d_c,)."""
    p1, p2 = sorted((int(head_pos), int(tail_pos)))
    feat = nm.conv1d(x, params.kernel, params.bias)
    pooled = nm.segment_max_pool(feat, (p1, p2))
    d_c = pooled.shape[0]
    # Transposing first makes the flat layout segment-major: all channels of
    # segment 1, then segment 2, then segment 3.
    flat = nm.reshape(nm.transpose(pooled), (3 * d_c,))
    return nm.tanh(flat)


def attention_weights(x: Tensor, params: SelfAttnParams) -> Tensor:
    """Per-row attention over columns; every row sums to 1 across n."""
    hidden = nm.relu(nm.add(nm.matmul(params.w_hidden, x), params.b_hidden))
    scores = nm.add(nm.matmul(params.w_score, hidden), params.b_score)
    return nm.softmax_over_axis(scores, 1)


def self_attn_encode(x: Tensor, params: SelfAttnParams) -> Tensor:
    """Attention-weighted sum of columns. Output (d,)."""
    weights = attention_weights(x, params)
    return nm.sum_over_axis(nm.mul(weights, x), 1)


def stacked_encode(
    x: Tensor, head_pos: int, tail_pos: int, pcnn: PcnnParams, attn: SelfAttnParams
) -> Tensor:
    """Reweight columns by attention, then run the convolutional encoder.

    The attention map is applied elementwise without the column sum, so the
    sequence keeps its length and its entity positions.
    """
    weights = attention_weights(x, attn)
    return pcnn_encode(nm.mul(weights, x), head_pos, tail_pos, pcnn)
