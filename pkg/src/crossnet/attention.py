"""Feature and temporal attention over the concatenated multi-rank tensor.

Both modules score with a Frobenius inner product against a learnable
weight tensor, softmax-normalize, and apply a residual (1 + score) scaling
through a ReLU. The score vectors p (per feature channel) and q (per time
step) are returned for the explanation pipeline.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param


class FeatureAttentionParams:
    def __init__(self, N, T, d):
        # zero init: training starts from uniform attention
        self.w_feat = Param(np.zeros((N, T, d)), name="att.w_feat")

    def params(self):
        return [self.w_feat]


class TemporalAttentionParams:
    def __init__(self, s, T, N, d):
        if s % 2 == 0 or not 1 <= s <= T:
            raise ValueError(f"window width s={s} must be odd and within [1, T={T}]")
        self.s = s
        self.w_s = Param(np.zeros((s, N, d)), name="att.w_s")

    def params(self):
        return [self.w_s]


def feature_attention(x_tilde, params):
    """Score each feature channel, softmax over channels, residual rescale.

    x_tilde: [B, T, N, d]. Returns (output [B, T, N, d], p [B, N]).
    """
    B, T, N, d = x_tilde.shape
    w = ad.transpose(params.w_feat, (1, 0, 2))                # [T, N, d]
    scores = ad.tsum(ad.mul(x_tilde, w), axis=(1, 3))         # [B, N]
    p = ad.softmax(scores, axis=-1)
    factor = ad.add(ad.reshape(p, (B, 1, N, 1)), 1.0)
    return ad.relu(ad.mul(x_tilde, factor)), p


def temporal_attention(x_tilde, params):
    """Score a zero-padded centered window of s steps per time point.

    x_tilde: [B, T, N, d]. Returns (output [B, T, N, d], q [B, T]).
    """
    B, T, N, d = x_tilde.shape
    s = params.s
    half = (s - 1) // 2
    padded = ad.pad_axis(x_tilde, 1, half, half)
    scores = []
    for t in range(T):
        window = ad.slice_axis(padded, 1, t, t + s)           # [B, s, N, d]
        scores.append(ad.tsum(ad.mul(window, params.w_s), axis=(1, 2, 3)))
    q = ad.softmax(ad.stack(scores, axis=1), axis=-1)         # [B, T]
    factor = ad.add(ad.reshape(q, (B, T, 1, 1)), 1.0)
    return ad.relu(ad.mul(x_tilde, factor)), q
