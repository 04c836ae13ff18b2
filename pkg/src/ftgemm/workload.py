"""Deterministic toy transformer workload expressed as a graph of GEMM nodes.

The model is a pre-layernorm transformer with random (untrained) weights and a
self-labeled dataset: labels are the clean model's own argmax, so clean
accuracy is 1.0 by construction and accuracy degradation under faults is well
defined at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .abft import AbftStrategy, ThresholdSet, protect_gemm
from .faults import FaultConfig, FaultRecord, RngStream, faulty_gemm
from .tensor_core import GemmShape, OpCounter, gelu, gemm, layernorm_rows, softmax_rows


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    embed_dim: int = 32
    num_heads: int = 2
    seq_len: int = 16
    ff_multiplier: int = 4
    num_classes: int = 10
    weight_seed: int = 0

    def __post_init__(self):
        if min(self.num_layers, self.embed_dim, self.num_heads, self.seq_len,
               self.ff_multiplier, self.num_classes) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


@dataclass(frozen=True)
class GemmNode:
    gemm_id: str
    shape: GemmShape
    kind: str  # weight_proj | attn_score | attn_value | classifier


class Model:
    def __init__(self, cfg: ModelConfig, nodes, weights, ln_params):
        self.cfg = cfg
        self.nodes = list(nodes)  # topological order
        self.node_by_id = {n.gemm_id: n for n in self.nodes}
        self.weights = weights  # gemm_id -> float32 weight matrix
        self.ln_params = ln_params  # (layer, which) -> (scale, shift)

    def node_table(self):
        return [(n.gemm_id, n.shape.m, n.shape.k, n.shape.n) for n in self.nodes]


def build_model(cfg: ModelConfig) -> Model:
    rng = np.random.default_rng(cfg.weight_seed)
    d = cfg.embed_dim
    s = cfg.seq_len
    hd = cfg.head_dim
    ff = cfg.ff_multiplier * d

    def draw(fan_in, fan_out):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=(fan_in, fan_out)).astype(np.float32)

    nodes: list[GemmNode] = []
    weights: dict[str, np.ndarray] = {}
    ln_params: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for layer in range(cfg.num_layers):
        for which in (0, 1):
            ln_params[(layer, which)] = (
                np.ones(d, dtype=np.float32),
                np.zeros(d, dtype=np.float32),
            )
        for name in ("q", "k", "v"):
            nid = f"layer{layer}.attn.{name}"
            nodes.append(GemmNode(nid, GemmShape(s, d, d), "weight_proj"))
            weights[nid] = draw(d, d)
        for h in range(cfg.num_heads):
            nodes.append(
                GemmNode(f"layer{layer}.attn.head{h}.score", GemmShape(s, hd, s), "attn_score")
            )
            nodes.append(
                GemmNode(f"layer{layer}.attn.head{h}.value", GemmShape(s, s, hd), "attn_value")
            )
        nid = f"layer{layer}.attn.out"
        nodes.append(GemmNode(nid, GemmShape(s, d, d), "weight_proj"))
        weights[nid] = draw(d, d)
        nid = f"layer{layer}.ff.in"
        nodes.append(GemmNode(nid, GemmShape(s, d, ff), "weight_proj"))
        weights[nid] = draw(d, ff)
        nid = f"layer{layer}.ff.out"
        nodes.append(GemmNode(nid, GemmShape(s, ff, d), "weight_proj"))
        weights[nid] = draw(ff, d)
    nodes.append(GemmNode("classifier", GemmShape(1, d, cfg.num_classes), "classifier"))
    weights["classifier"] = draw(d, cfg.num_classes)
    return Model(cfg, nodes, weights, ln_params)


def forward(
    model: Model,
    X,
    cfg: FaultConfig | None = None,
    strategy: AbftStrategy | None = None,
    thresholds: dict[str, ThresholdSet] | None = None,
    counter: OpCounter | None = None,
    trial: int = 0,
    sample: int = 0,
    observer=None,
):
    """One forward pass; returns (logits vector, {gemm_id: (det, corr)}).

    cfg is None: clean run. strategy is None: faults without protection.
    Otherwise every GEMM node runs through protect_gemm. `observer`, when
    given, is called as observer(node, A, B, C, record) after each node.
    """
    mc = model.cfg
    X = np.asarray(X, dtype=np.float32)
    if X.shape != (mc.seq_len, mc.embed_dim):
        raise ValueError(f"input shape {X.shape} != {(mc.seq_len, mc.embed_dim)}")
    reports: dict[str, tuple] = {}

    def run(node: GemmNode, A, B):
        if cfg is None:
            C = gemm(A, B, counter)
            rec = None
        else:
            node_cfg = cfg.restricted(node.gemm_id)
            stream = RngStream(cfg.seed, node.gemm_id, trial, sample)
            rec = FaultRecord() if observer is not None else None
            if strategy is None:
                C = faulty_gemm(A, B, node_cfg, stream, counter, record=rec)
            else:
                ts = thresholds.get(node.gemm_id) if thresholds else None
                C, det, corr = protect_gemm(
                    A, B, node_cfg, strategy, ts, stream, counter, record=rec
                )
                reports[node.gemm_id] = (det, corr)
        if observer is not None:
            observer(node, A, B, C, rec)
        return C

    inv_sqrt_hd = np.float32(1.0 / math.sqrt(mc.head_dim))
    x = X
    # Injected faults legitimately produce overflow/NaN; let them propagate
    # silently instead of warning on every arithmetic op.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _forward_body(model, x, run, inv_sqrt_hd), reports


def _forward_body(model: Model, x, run, inv_sqrt_hd):
    mc = model.cfg
    for layer in range(mc.num_layers):
        scale1, shift1 = model.ln_params[(layer, 0)]
        h = layernorm_rows(x, scale1, shift1)
        Q = run(model.node_by_id[f"layer{layer}.attn.q"], h, model.weights[f"layer{layer}.attn.q"])
        K = run(model.node_by_id[f"layer{layer}.attn.k"], h, model.weights[f"layer{layer}.attn.k"])
        V = run(model.node_by_id[f"layer{layer}.attn.v"], h, model.weights[f"layer{layer}.attn.v"])
        head_outs = []
        for hh in range(mc.num_heads):
            lo, hi = hh * mc.head_dim, (hh + 1) * mc.head_dim
            Qh = (Q[:, lo:hi] * inv_sqrt_hd).astype(np.float32)
            KhT = np.ascontiguousarray(K[:, lo:hi].T)
            S = run(model.node_by_id[f"layer{layer}.attn.head{hh}.score"], Qh, KhT)
            P = softmax_rows(S)
            Vh = np.ascontiguousarray(V[:, lo:hi])
            head_outs.append(run(model.node_by_id[f"layer{layer}.attn.head{hh}.value"], P, Vh))
        O = np.concatenate(head_outs, axis=1)
        attn = run(model.node_by_id[f"layer{layer}.attn.out"], O, model.weights[f"layer{layer}.attn.out"])
        x = (x + attn).astype(np.float32)
        scale2, shift2 = model.ln_params[(layer, 1)]
        h2 = layernorm_rows(x, scale2, shift2)
        F1 = run(model.node_by_id[f"layer{layer}.ff.in"], h2, model.weights[f"layer{layer}.ff.in"])
        G = gelu(F1)
        F2 = run(model.node_by_id[f"layer{layer}.ff.out"], G, model.weights[f"layer{layer}.ff.out"])
        x = (x + F2).astype(np.float32)
    pooled = x.mean(axis=0, dtype=np.float32).reshape(1, mc.embed_dim)
    logits = run(model.node_by_id["classifier"], pooled, model.weights["classifier"])
    return logits.ravel()


@dataclass
class Dataset:
    inputs: list
    labels: list


def generate_dataset(model: Model, n_samples: int, data_seed: int) -> Dataset:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mc = model.cfg
    rng = np.random.default_rng(data_seed)
    inputs = [
        rng.uniform(-1.0, 1.0, size=(mc.seq_len, mc.embed_dim)).astype(np.float32)
        for _ in range(n_samples)
    ]
    labels = [int(np.argmax(forward(model, x)[0])) for x in inputs]
    return Dataset(inputs=inputs, labels=labels)


@dataclass
class EvalStats:
    accuracy: float
    detections_triggered: int = 0
    exact_corrected: int = 0
    approx_corrected: int = 0
    ignored: int = 0


def evaluate(
    model: Model,
    dataset: Dataset,
    cfg: FaultConfig | None = None,
    strategy: AbftStrategy | None = None,
    thresholds: dict[str, ThresholdSet] | None = None,
    counter: OpCounter | None = None,
    trial: int = 0,
) -> EvalStats:
    stats = EvalStats(accuracy=0.0)
    correct = 0
    for idx, (x, label) in enumerate(zip(dataset.inputs, dataset.labels)):
        logits, reports = forward(
            model, x, cfg, strategy, thresholds, counter, trial=trial, sample=idx
        )
        if int(np.argmax(logits)) == label:
            correct += 1
        for det, corr in reports.values():
            stats.detections_triggered += int(det.triggered)
            stats.exact_corrected += corr.exact_corrected
            stats.approx_corrected += corr.approx_corrected
            stats.ignored += corr.ignored
    stats.accuracy = correct / len(dataset.inputs)
    return stats


def evaluate_accuracy(model, dataset, cfg=None, strategy=None, thresholds=None,
                      counter=None, trial=0) -> float:
    return evaluate(model, dataset, cfg, strategy, thresholds, counter, trial).accuracy
