"""Full model assembly: GRU head, generalized cross-entropy training, metrics.

The per-time-step feature maps are flattened, fed through a GRU, and the
last hidden state is projected to per-class sigmoid scores. Training
minimizes the mean L_q loss (1 - p_true^q) / q plus a lasso penalty on the
crossing-block selection matrices, with plain minibatch SGD.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .attention import (FeatureAttentionParams, TemporalAttentionParams,
                        feature_attention, temporal_attention)
from .crossing import lasso_penalty, make_blocks, run_stack
from .data import FeatureField
from .embedding import EmbeddingLayer

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DCRS1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    T: int = 5
    d: int = 8
    rank_widths: tuple = (8, 4)
    s: int = 3
    h: int = 32
    k: int = 2
    q: float = 0.5
    lam: float = 1e-3
    lr: float = 0.001
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    epsilon: float = 1e-4
    top_k: int = 10

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.s % 2 == 0 or self.s < 1:
            raise ValueError(f"s must be odd and positive, got {self.s}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        self.rank_widths = tuple(int(w) for w in self.rank_widths)


class GruParams:
    def __init__(self, h, in_dim, rng):
        bound = 1.0 / np.sqrt(h + in_dim)
        shape = (h, h + in_dim)
        self.w_r = Param(rng.uniform(-bound, bound, shape), name="gru.w_r")
        self.w_z = Param(rng.uniform(-bound, bound, shape), name="gru.w_z")
        self.w_h = Param(rng.uniform(-bound, bound, shape), name="gru.w_h")
        self.h = h

    def params(self):
        return [self.w_r, self.w_z, self.w_h]


class OutputParams:
    def __init__(self, k, h, rng):
        bound = 1.0 / np.sqrt(h)
        self.w_fc = Param(rng.uniform(-bound, bound, (k, h)), name="out.w_fc")
        self.k = k

    def params(self):
        return [self.w_fc]


def time_concat(x_tilde):
    """Flatten each time step's [N, d] map to a vector, in channel-major order.

    x_tilde: [B, T, N, d] -> list of T tensors [B, N*d].
    """
    B, T, N, d = x_tilde.shape
    flat = ad.reshape(x_tilde, (B, T, N * d))
    return [ad.reshape(ad.slice_axis(flat, 1, t, t + 1), (B, N * d)) for t in range(T)]


def gru_forward(inputs, gru, h0=None):
    """Run the GRU over the step vectors and return the last hidden state.

    Gate layout: u (reset-role) gates the previous state inside the
    candidate; z mixes candidate and previous state.
    """
    B = inputs[0].shape[0]
    h = Tensor(np.zeros((B, gru.h))) if h0 is None else h0
    for e_t in inputs:
        x = ad.concat([h, e_t], axis=-1)
        u = ad.sigmoid(ad.matmul(x, ad.transpose(gru.w_r, (1, 0))))
        z = ad.sigmoid(ad.matmul(x, ad.transpose(gru.w_z, (1, 0))))
        gated = ad.concat([ad.mul(u, h), e_t], axis=-1)
        h_cand = ad.tanh(ad.matmul(gated, ad.transpose(gru.w_h, (1, 0))))
        h = ad.add(ad.mul(z, h_cand), ad.mul(ad.add(ad.scale(z, -1.0), 1.0), h))
    return h


def predict(h_last, out_params):
    """Per-class sigmoid scores plus their sum-normalized copy r."""
    y = ad.sigmoid(ad.matmul(h_last, ad.transpose(out_params.w_fc, (1, 0))))
    total = ad.tsum(y, axis=-1, keepdims=True)
    r = ad.mul(y, ad.power(total, -1.0))
    return y, r


def lq_loss(y_tilde, labels, q):
    """Generalized cross-entropy (1 - p_true^q) / q on normalized scores.

    Interpolates between cross entropy (q -> 0) and 1 - p_true (q = 1).
    Accepts a [k] vector with an int label or a [B, k] batch with an int
    array; returns the (mean) scalar loss.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    if len(y_tilde.shape) == 1:
        y_tilde = ad.reshape(y_tilde, (1,) + y_tilde.shape)
        labels = [labels]
    labels = np.asarray(labels, dtype=np.intp)
    B, k = y_tilde.shape
    total = ad.tsum(y_tilde, axis=-1, keepdims=True)
    r = ad.mul(y_tilde, ad.power(total, -1.0))
    onehot = np.zeros((B, k))
    onehot[np.arange(B), labels] = 1.0
    p_true = ad.clip(ad.tsum(ad.mul(r, Tensor(onehot)), axis=-1), 1e-12, 1.0 - 1e-12)
    per_sample = ad.scale(ad.add(ad.scale(ad.power(p_true, q), -1.0), 1.0), 1.0 / q)
    return ad.tmean(per_sample)


class Model:
    """Embedding -> crossing stack -> dual attention -> GRU -> projection."""

    def __init__(self, schema, config, rng=None):
        rng = rng or np.random.default_rng(config.seed)
        self.schema = schema
        self.config = config
        n1 = len(schema)
        self.embedding = EmbeddingLayer(schema, config.d, rng)
        self.blocks = make_blocks(n1, config.rank_widths, config.T, rng)
        self.N = n1 + sum(config.rank_widths)
        self.feat_att = FeatureAttentionParams(self.N, config.T, config.d)
        self.temp_att = TemporalAttentionParams(config.s, config.T, self.N, config.d)
        self.gru = GruParams(config.h, self.N * config.d, rng)
        self.out = OutputParams(config.k, config.h, rng)

    def params(self):
        out = self.embedding.params()
        for b in self.blocks:
            out.extend(b.params())
        out.extend(self.feat_att.params())
        out.extend(self.temp_att.params())
        out.extend(self.gru.params())
        out.extend(self.out.params())
        return out

    def named_params(self):
        return {p.name: p for p in self.params()}

    def forward(self, samples):
        """Full forward pass on a batch of normalized samples.

        Returns a dict with scores y [B,k], normalized r, attention vectors
        p [B,N] and q [B,T], and the rank stack.
        """
        x1 = self.embedding.embed_batch(samples)
        stack = run_stack(x1, self.blocks)
        feat_out, p = feature_attention(stack.x_tilde, self.feat_att)
        temp_out, q = temporal_attention(feat_out, self.temp_att)
        h_last = gru_forward(time_concat(temp_out), self.gru)
        y, r = predict(h_last, self.out)
        return {"y": y, "r": r, "p": p, "q": q, "stack": stack}


def objective(batch, model, config):
    """Mean L_q over the batch plus the weighted lasso penalty."""
    fwd = model.forward(batch)
    labels = [s.label for s in batch]
    loss = lq_loss(fwd["y"], labels, config.q)
    if config.lam > 0 and model.blocks:
        loss = ad.add(loss, ad.scale(lasso_penalty(model.blocks), config.lam))
    return loss, fwd


def train(train_samples, schema, config, log_every=0):
    """Seeded minibatch SGD; returns the model and a per-epoch loss trace.

    Trace rows are (epoch, mean_loss, train_acc). Raises TrainingDiverged
    on a NaN loss.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    model = Model(schema, config)
    params = model.params()
    rng = np.random.default_rng(config.seed)
    trace = []
    n = len(train_samples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            loss, fwd = objective(batch, model, config)
            val = float(loss.data)
            if not np.isfinite(val):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, batch {start // config.batch_size}")
            losses.append((val, len(batch)))
            preds = fwd["y"].data.argmax(axis=-1)
            correct += int((preds == np.array([s.label for s in batch])).sum())
            ad.backward(loss)
            ad.sgd_step(params, config.lr)
            ad.zero_grads(params)
        mean_loss = sum(v * w for v, w in losses) / n
        acc = correct / n
        trace.append((epoch, mean_loss, acc))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d: loss %.5f acc %.4f", epoch, mean_loss, acc)
    return model, trace


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    acc: float
    err1: float
    err2: float
    auc: float

    def as_table(self):
        return (f"tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}\n"
                f"acc={self.acc:.4f} err1={self.err1:.4f} "
                f"err2={self.err2:.4f} auc={self.auc:.4f}")


def auc(scores, labels):
    """Mann-Whitney AUC: P(random positive outranks random negative), ties 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc needs both classes present")
    # midranks over the pooled scores
    pooled = np.concatenate([pos, neg])
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    sorted_scores = pooled[order]
    i = 0
    while i < len(pooled):
        j = i
        while j < len(pooled) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    rank_sum_pos = ranks[:len(pos)].sum()
    return float((rank_sum_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def evaluate(model, samples, batch_size=256):
    """Confusion counts, accuracy, type I/II errors and AUC on class-1 scores."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    preds = []
    pos_scores = []
    for start in range(0, len(samples), batch_size):
        fwd = model.forward(samples[start:start + batch_size])
        preds.extend(fwd["y"].data.argmax(axis=-1).tolist())
        pos_scores.extend(fwd["y"].data[:, 1].tolist())
    labels = np.array([s.label for s in samples])
    preds = np.array(preds)
    return confusion_report(preds, labels, pos_scores)


def confusion_report(preds, labels, pos_scores=None):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    total = tp + fp + fn + tn
    acc = (tp + tn) / total if total else 0.0
    err1 = fp / (tn + fp) if (tn + fp) else 0.0
    err2 = fn / (fn + tp) if (fn + tp) else 0.0
    auc_val = 0.5
    if pos_scores is not None and len(set(labels.tolist())) == 2:
        auc_val = auc(pos_scores, labels)
    return EvalReport(tp=tp, fp=fp, fn=fn, tn=tn, acc=acc, err1=err1,
                      err2=err2, auc=auc_val)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _schema_json(schema):
    return json.dumps([asdict(f) for f in schema], sort_keys=True).encode()


def schema_hash(schema):
    return hashlib.sha256(_schema_json(schema)).hexdigest()


def save_checkpoint(model, path):
    """Binary format: magic, schema JSON, config JSON, named float64 params."""
    schema_blob = _schema_json(model.schema)
    config_blob = json.dumps(asdict(model.config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for blob in (schema_blob, config_blob):
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
        named = model.named_params()
        fh.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            p = named[name]
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.data.ndim))
            for ext in p.data.shape:
                fh.write(struct.pack("<I", ext))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the model from a checkpoint written by save_checkpoint."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic {magic!r})")

        def read_blob():
            (n,) = struct.unpack("<I", fh.read(4))
            return fh.read(n)

        schema = [FeatureField(**f) for f in json.loads(read_blob())]
        cfg_dict = json.loads(read_blob())
        config = TrainConfig(**cfg_dict)
        model = Model(schema, config)
        named = model.named_params()
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            name = read_blob().decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            raw = fh.read(8 * int(np.prod(shape)) if ndim else 8)
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
            if name not in named:
                raise ValueError(f"checkpoint param {name!r} has no slot in the model")
            if named[name].data.shape != arr.shape:
                raise ValueError(f"checkpoint param {name!r} shape {arr.shape} != "
                                 f"model shape {named[name].data.shape}")
            named[name].data = arr.copy()
    return model
