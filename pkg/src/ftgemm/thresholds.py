"""Calibration of approximation thresholds.

Deviation ranges come from seeded fault-injection profiling; the proportion
threshold alpha maps a range [min, max] to the cut min + (max - min) * alpha.
Alpha itself is chosen either globally with a binary search or per GEMM with
a greedy pass over the GEMMs (optionally in ascending order of GEMM size),
holding the accuracy loss of each step under a budget. Accuracy evaluations
reuse the same trial seeds (common random numbers) so feasibility checks are
deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .abft import ThresholdSet, compute_sum_profiles, precompute_checksums, strategy_from_name
from .faults import FaultConfig
from .workload import Dataset, Model, evaluate_accuracy, forward


@dataclass
class DeviationProfile:
    gemm_id: str
    ber: float
    msd_min: float
    msd_max: float
    rcsd_min: float
    rcsd_max: float
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.msd_min > self.msd_max or self.rcsd_min > self.rcsd_max:
            raise ValueError("profile min must not exceed max")


@dataclass
class AlphaAssignment:
    """Per-GEMM (alpha_detect, alpha_localize) pairs, each in [0, 1]."""

    alphas: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for gid, (ad, al) in self.alphas.items():
            if not (0.0 <= ad <= 1.0 and 0.0 <= al <= 1.0):
                raise ValueError(f"alpha out of range for {gid}: {(ad, al)}")

    @classmethod
    def uniform(cls, gemm_ids, alpha: float, alpha_localize: float | None = None):
        al = alpha if alpha_localize is None else alpha_localize
        return cls({gid: (alpha, al) for gid in gemm_ids})

    def to_dict(self):
        return {gid: list(pair) for gid, pair in self.alphas.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({gid: (float(p[0]), float(p[1])) for gid, p in d.items()})

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class SearchConfig:
    accuracy_budget: float = 0.01
    trials_per_eval: int = 10
    ber: float = 1e-6
    resolution: float = 1.0 / 64.0
    order: str = "ascending_size"  # ascending_size | inorder
    strategy: str = "opt"

    def __post_init__(self):
        if not 0.0 <= self.accuracy_budget <= 1.0:
            raise ValueError("accuracy_budget must be in [0, 1]")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be > 0")
        if self.order not in ("ascending_size", "inorder"):
            raise ValueError(f"unknown search order {self.order!r}")


def alpha_to_threshold(profile_min: float, profile_max: float, alpha: float) -> float:
    """Threshold cutting off the lowest alpha fraction of [min, max],
    never below the float32 round-off floor."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if profile_min > profile_max:
        raise ValueError("profile min must not exceed max")
    from .abft import REL_EPS

    return max(REL_EPS, profile_min + (profile_max - profile_min) * alpha)


def profile_all(
    model: Model,
    inputs,
    ber: float,
    trials: int,
    seed: int,
) -> dict[str, DeviationProfile]:
    """Empirical per-GEMM MSD and |R/CSD| ranges from seeded faulty forwards."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    msd_samples: dict[str, list[float]] = {n.gemm_id: [] for n in model.nodes}
    rc_samples: dict[str, list[float]] = {n.gemm_id: [] for n in model.nodes}

    def obs(node, A, B, C, rec):
        ck = precompute_checksums(A, B)
        prof = compute_sum_profiles(A, B, C, checksums=ck)
        msd = abs(ck.predicted_total - float(C.sum(dtype=np.float64)))
        if math.isfinite(msd):
            msd_samples[node.gemm_id].append(msd)
        rc = np.abs(np.concatenate([prof.rsd, prof.csd]))
        rc = rc[np.isfinite(rc)]
        if rc.size:
            rc_samples[node.gemm_id].append(float(rc.min()))
            rc_samples[node.gemm_id].append(float(rc.max()))

    cfg = FaultConfig(ber=ber, seed=seed)
    for t in range(trials):
        x = inputs[t % len(inputs)]
        forward(model, x, cfg, None, None, None, trial=t, sample=0, observer=obs)

    profiles = {}
    for node in model.nodes:
        ms = msd_samples[node.gemm_id] or [0.0]
        rs = rc_samples[node.gemm_id] or [0.0]
        profiles[node.gemm_id] = DeviationProfile(
            gemm_id=node.gemm_id,
            ber=ber,
            msd_min=min(ms),
            msd_max=max(ms),
            rcsd_min=min(rs),
            rcsd_max=max(rs),
            sample_count=trials,
        )
    return profiles


def profile_deviations(
    model: Model, inputs, gemm_id: str, ber: float, trials: int, seed: int
) -> DeviationProfile:
    if gemm_id not in model.node_by_id:
        raise KeyError(f"unknown gemm_id {gemm_id!r}")
    return profile_all(model, inputs, ber, trials, seed)[gemm_id]


def thresholds_from_assignment(
    profiles: dict[str, DeviationProfile], assignment: AlphaAssignment
) -> dict[str, ThresholdSet]:
    out = {}
    for gid, (ad, al) in assignment.alphas.items():
        p = profiles[gid]
        rc = alpha_to_threshold(p.rcsd_min, p.rcsd_max, al)
        out[gid] = ThresholdSet(
            detect_threshold=alpha_to_threshold(p.msd_min, p.msd_max, ad),
            row_threshold=rc,
            col_threshold=rc,
        )
    return out


def bisect_max_feasible(feasible, resolution: float):
    """Largest alpha in [0, 1] (to within resolution) passing `feasible`,
    assuming feasibility is monotone decreasing in alpha.

    Returns (alpha, flag); flag is False when even alpha = 0 is infeasible.
    """
    if feasible(1.0):
        return 1.0, True
    if not feasible(0.0):
        return 0.0, False
    lo, hi = 0.0, 1.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo, True


def _mean_accuracy(
    model: Model,
    dataset: Dataset,
    profiles: dict[str, DeviationProfile],
    assignment: AlphaAssignment,
    cfg: SearchConfig,
    base_seed: int,
) -> float:
    strategy = strategy_from_name(cfg.strategy)
    thresholds = thresholds_from_assignment(profiles, assignment)
    fault_cfg = FaultConfig(ber=cfg.ber, seed=base_seed)
    accs = [
        evaluate_accuracy(model, dataset, fault_cfg, strategy, thresholds, trial=t)
        for t in range(cfg.trials_per_eval)
    ]
    return float(np.mean(accs))


def binary_search_global_alpha(
    model: Model,
    dataset: Dataset,
    cfg: SearchConfig,
    profiles: dict[str, DeviationProfile],
    base_seed: int,
    clean_accuracy: float = 1.0,
):
    """Largest single alpha, shared by every GEMM, keeping mean accuracy
    within the budget of the clean accuracy. Returns (alpha, feasible)."""
    gemm_ids = [n.gemm_id for n in model.nodes]
    target = clean_accuracy - cfg.accuracy_budget

    def feasible(alpha):
        assignment = AlphaAssignment.uniform(gemm_ids, alpha)
        return _mean_accuracy(model, dataset, profiles, assignment, cfg, base_seed) >= target

    return bisect_max_feasible(feasible, cfg.resolution)


def greedy_gemmwise_search(
    model: Model,
    dataset: Dataset,
    cfg: SearchConfig,
    profiles: dict[str, DeviationProfile],
    base_seed: int,
) -> AlphaAssignment:
    """Per-GEMM alphas: visit GEMMs (ascending m*k*n or topological order),
    maximize each GEMM's alpha while that step's accuracy loss stays under
    the budget; unvisited GEMMs stay fully protected (alpha 0)."""
    nodes = list(model.nodes)
    if cfg.order == "ascending_size":
        order = sorted(range(len(nodes)), key=lambda i: (nodes[i].shape.macs, i))
    else:
        order = list(range(len(nodes)))
    assignment = AlphaAssignment({n.gemm_id: (0.0, 0.0) for n in nodes})
    for i in order:
        gid = nodes[i].gemm_id
        reference = _mean_accuracy(model, dataset, profiles, assignment, cfg, base_seed)

        def feasible(alpha):
            assignment.alphas[gid] = (alpha, alpha)
            acc = _mean_accuracy(model, dataset, profiles, assignment, cfg, base_seed)
            return reference - acc < cfg.accuracy_budget

        best, _ = bisect_max_feasible(feasible, cfg.resolution)
        assignment.alphas[gid] = (best, best)
    return assignment
