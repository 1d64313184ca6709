"""Stacked attentive feature-crossing blocks with lasso-pruned channel mixing.

Each block crosses the first-rank tensor with the previous rank's output
(pairwise Hadamard products of embedding vectors), scales each crossed
channel by an attention coefficient through a residual leaky-ReLU, and
mixes channels with a lasso-regularized selection matrix. Stacking blocks
yields the multi-rank concatenation used downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Param


class CrossingBlock:
    """Parameters for producing rank-``rank`` features (rank >= 2)."""

    def __init__(self, rank, n1, n_prev, c_o, T, rng):
        self.rank = rank
        self.n1 = n1
        self.n_prev = n_prev
        self.c_i = n1 * n_prev
        self.c_o = c_o
        bound = 1.0 / np.sqrt(self.c_i)
        self.w_query = Param(np.full(T, 1.0 / T), name=f"cross{rank}.w_query")
        self.w_key = Param(np.full(T, 1.0 / T), name=f"cross{rank}.w_key")
        self.w_pca = Param(rng.uniform(-bound, bound, size=(self.c_i, c_o)),
                           name=f"cross{rank}.w_pca")

    def params(self):
        return [self.w_query, self.w_key, self.w_pca]

    def channel_parents(self, channel):
        """Pre-mixing channel index -> (m, k) parent pair."""
        return divmod(channel, self.n1)


@dataclass
class RankStack:
    """All per-rank outputs of a crossing stack for one forward pass."""
    ranks: list          # rank i -> Tensor [B, T, n_i, d], index 0 is rank 1
    attentions: list     # per block: Tensor [B, n_prev, n1]
    x_tilde: "ad.Tensor"  # [B, T, N, d]
    widths: list         # [n_1, n_2, ..., n_l]

    @property
    def total_width(self):
        return sum(self.widths)


def temporal_aggregate(X, w):
    """Collapse the time axis with weights w: out[..., m, :] = sum_t w[t] X[..., t, m, :]."""
    T = w.shape[0]
    return ad.tsum(ad.mul(X, ad.reshape(w, (T, 1, 1))), axis=-3)


def cross_product(X1, Xprev):
    """All pairwise Hadamard products; channel (m*n1 + k) = Xprev[m] * X1[k].

    Accepts [..., n, d] tensors with matching leading axes.
    """
    n1 = X1.shape[-2]
    n_prev = Xprev.shape[-2]
    d = X1.shape[-1]
    lead = X1.shape[:-2]
    a = ad.reshape(Xprev, lead + (n_prev, 1, d))
    b = ad.reshape(X1, lead + (1, n1, d))
    return ad.reshape(ad.mul(a, b), lead + (n_prev * n1, d))


def cross_attention(X1, Xprev, block):
    """Key-value attention between rank-1 and previous-rank features.

    Queries/keys are temporal aggregates; scores are inner products; each
    column k is softmax-normalized over the previous-rank features m.
    Returns [B, n_prev, n1].
    """
    Q = temporal_aggregate(Xprev, block.w_query)   # [B, n_prev, d]
    K = temporal_aggregate(X1, block.w_key)        # [B, n1, d]
    scores = ad.matmul(Q, ad.transpose(K, (0, 2, 1)))  # [B, n_prev, n1]
    return ad.softmax(scores, axis=-2)


def residual_scale(crossed, a):
    """leaky_relu((1 + a_{m,k}) * x) per channel, slope 0.1."""
    B = crossed.shape[0]
    c_i = crossed.shape[2]
    factor = ad.add(ad.reshape(a, (B, 1, c_i, 1)), 1.0)
    return ad.leaky_relu(ad.mul(crossed, factor))


def pca_select(crossed, w_pca):
    """Channel mixing shared across time and embedding dims."""
    swapped = ad.transpose(crossed, (0, 1, 3, 2))      # [B, T, d, c_i]
    mixed = ad.matmul(swapped, w_pca)                   # [B, T, d, c_o]
    return ad.transpose(mixed, (0, 1, 3, 2))


def lasso_penalty(blocks):
    """Sum of absolute selection weights over all blocks (sign subgradient)."""
    terms = [ad.tsum(ad.absolute(b.w_pca)) for b in blocks]
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def make_blocks(n1, rank_widths, T, rng):
    """One block per entry of rank_widths; widths are the c_o channel counts."""
    blocks = []
    n_prev = n1
    for i, c_o in enumerate(rank_widths):
        blocks.append(CrossingBlock(i + 2, n1, n_prev, c_o, T, rng))
        n_prev = c_o
    return blocks


def run_stack(X1, blocks):
    """Run all crossing blocks and concatenate the ranks along the feature axis."""
    ranks = [X1]
    attentions = []
    widths = [X1.shape[2]]
    prev = X1
    for block in blocks:
        if block.n_prev != prev.shape[2] or block.n1 != X1.shape[2]:
            raise ad.ShapeError(
                f"block for rank {block.rank} expects ({block.n_prev}, {block.n1}) "
                f"inputs, got ({prev.shape[2]}, {X1.shape[2]})")
        a = cross_attention(X1, prev, block)
        crossed = cross_product(X1, prev)
        scaled = residual_scale(crossed, a)
        out = pca_select(scaled, block.w_pca)
        ranks.append(out)
        attentions.append(a)
        widths.append(block.c_o)
        prev = out
    x_tilde = ranks[0] if len(ranks) == 1 else ad.concat(ranks, axis=2)
    return RankStack(ranks=ranks, attentions=attentions, x_tilde=x_tilde, widths=widths)
