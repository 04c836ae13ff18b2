"""Dense single-precision matrix kernels with exact operation accounting.

All values are float32; checksum-style reductions accumulate in float64 so
that round-off stays far below injected fault magnitudes. GEMM accumulates
in float32 with a fixed k-ascending order so results are reproducible and
comparable against a naive triple-loop oracle bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class GemmShape(NamedTuple):
    m: int
    k: int
    n: int

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n


@dataclass
class OpCounter:
    """Tallies of primitive operations, split workload vs ABFT machinery."""

    workload_mults: int = 0
    workload_adds: int = 0
    abft_mults: int = 0
    abft_adds: int = 0
    abft_comparisons: int = 0

    def merge(self, other: "OpCounter") -> "OpCounter":
        self.workload_mults += other.workload_mults
        self.workload_adds += other.workload_adds
        self.abft_mults += other.abft_mults
        self.abft_adds += other.abft_adds
        self.abft_comparisons += other.abft_comparisons
        return self

    def copy(self) -> "OpCounter":
        return OpCounter(
            self.workload_mults,
            self.workload_adds,
            self.abft_mults,
            self.abft_adds,
            self.abft_comparisons,
        )


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D matrix, got shape {a.shape}")
    return a


def gemm(A, B, counter: OpCounter | None = None) -> np.ndarray:
    """C = A @ B with float32 accumulation in k-ascending order."""
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"gemm shape mismatch: {A.shape} x {B.shape}")
    m, k = A.shape
    n = B.shape[1]
    C = np.zeros((m, n), dtype=np.float32)
    for kk in range(k):
        C += A[:, kk, None] * B[kk, None, :]
    if counter is not None:
        counter.workload_mults += m * k * n
        counter.workload_adds += m * (k - 1) * n
    return C


def softmax_rows(X) -> np.ndarray:
    X = as_matrix(X)
    mx = X.max(axis=1, keepdims=True)
    e = np.exp((X - mx).astype(np.float32))
    return (e / e.sum(axis=1, keepdims=True, dtype=np.float32)).astype(np.float32)


_GELU_C = np.float32(math.sqrt(2.0 / math.pi))


def gelu(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    inner = _GELU_C * (X + np.float32(0.044715) * X * X * X)
    return (np.float32(0.5) * X * (np.float32(1.0) + np.tanh(inner))).astype(np.float32)


def layernorm_rows(X, scale, shift, eps: float = 1e-6) -> np.ndarray:
    X = as_matrix(X)
    scale = np.asarray(scale, dtype=np.float32)
    shift = np.asarray(shift, dtype=np.float32)
    mu = X.mean(axis=1, keepdims=True, dtype=np.float32)
    d = (X - mu).astype(np.float32)
    var = (d * d).mean(axis=1, keepdims=True, dtype=np.float32)
    y = d / np.sqrt(var + np.float32(eps))
    return (y * scale + shift).astype(np.float32)


_ACTIVATIONS = {
    "softmax_rows": lambda X, params: softmax_rows(X),
    "gelu": lambda X, params: gelu(X),
    "layernorm_rows": lambda X, params: layernorm_rows(X, params["scale"], params["shift"]),
}


def apply_activation(X, kind: str, params: dict | None = None) -> np.ndarray:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
    return fn(X, params or {})


def row_sums(X, counter: OpCounter | None = None) -> np.ndarray:
    X = as_matrix(X)
    if counter is not None:
        counter.abft_adds += X.shape[0] * (X.shape[1] - 1)
    return X.sum(axis=1, dtype=np.float64)


def col_sums(X, counter: OpCounter | None = None) -> np.ndarray:
    X = as_matrix(X)
    if counter is not None:
        counter.abft_adds += X.shape[1] * (X.shape[0] - 1)
    return X.sum(axis=0, dtype=np.float64)


def total_sum(X, counter: OpCounter | None = None) -> float:
    X = as_matrix(X)
    if counter is not None:
        counter.abft_adds += X.size - 1
    return float(X.sum(dtype=np.float64))
