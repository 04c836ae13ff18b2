"""Campaign orchestration: BER x strategy x trial sweeps, deviation
statistics, and CSV/JSON emission. Results are deterministic for a given
config, with or without worker parallelism."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .abft import ThresholdSet, compute_sum_profiles, localize, precompute_checksums, strategy_from_name
from .faults import FaultConfig
from .tensor_core import OpCounter
from .thresholds import (
    AlphaAssignment,
    DeviationProfile,
    SearchConfig,
    thresholds_from_assignment,
)
from .workload import Dataset, Model, ModelConfig, build_model, evaluate, forward, generate_dataset

RESULT_FIELDS = (
    "ber",
    "strategy",
    "trial",
    "accuracy",
    "workload_mults",
    "abft_mults",
    "abft_adds",
    "abft_comparisons",
    "detections_triggered",
    "exact_corrected",
    "approx_corrected",
    "ignored",
)

_APPROX_STRATEGIES = ("v1", "v2", "opt", "opt-avg")


class ConfigError(ValueError):
    """Invalid or incomplete campaign configuration."""


@dataclass
class CampaignConfig:
    model: ModelConfig
    n_samples: int
    data_seed: int
    bers: list[float]
    strategies: list[str]
    trials: int
    base_seed: int
    scope: frozenset | None = None
    # per-BER deviation profiles: {ber: {gemm_id: DeviationProfile}}
    profiles: dict[float, dict[str, DeviationProfile]] | None = None
    # None, a single global alpha, or a full per-GEMM assignment
    alphas: AlphaAssignment | float | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    output_path: str = "results.csv"
    output_format: str = "csv"

    def __post_init__(self):
        if not self.bers:
            raise ConfigError("faults.bers must be a nonempty list")
        if not self.strategies:
            raise ConfigError("abft.strategies must be a nonempty list")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for name in self.strategies:
            try:
                strategy_from_name(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        needs_thresholds = [s for s in self.strategies if s in _APPROX_STRATEGIES]
        if needs_thresholds:
            if self.alphas is None:
                raise ConfigError(
                    f"strategies {needs_thresholds} need abft.alphas (searched or global)"
                )
            if self.profiles is None:
                raise ConfigError(f"strategies {needs_thresholds} need abft.profiles")
            for ber in self.bers:
                if ber > 0 and ber not in self.profiles:
                    raise ConfigError(f"no deviation profiles for ber={ber!r}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing mandatory key {where}.{key}")
    return section[key]


def config_from_dict(raw: dict) -> CampaignConfig:
    """Build a CampaignConfig from the JSON config-file structure."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    model_sec = raw.get("model", {})
    _require(model_sec, "weight_seed", "model")
    try:
        model = ModelConfig(**model_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc}") from None
    data_sec = raw.get("dataset", {})
    faults_sec = raw.get("faults", {})
    abft_sec = raw.get("abft", {})
    search_sec = raw.get("search", {})
    out_sec = raw.get("output", {})

    profiles = None
    if abft_sec.get("profiles") is not None:
        profiles = profiles_from_dict(abft_sec["profiles"])
    alphas = abft_sec.get("alphas")
    if isinstance(alphas, dict):
        alphas = AlphaAssignment.from_dict(alphas)
    elif alphas is not None:
        alphas = float(alphas)
    scope = faults_sec.get("scope")
    if scope is not None:
        scope = frozenset(scope)
    try:
        search = SearchConfig(**search_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad search section: {exc}") from None
    try:
        return CampaignConfig(
            model=model,
            n_samples=int(data_sec.get("n_samples", 100)),
            data_seed=int(_require(data_sec, "data_seed", "dataset")),
            bers=[float(b) for b in _require(faults_sec, "bers", "faults")],
            strategies=list(_require(abft_sec, "strategies", "abft")),
            trials=int(faults_sec.get("trials", 1)),
            base_seed=int(_require(faults_sec, "base_seed", "faults")),
            scope=scope,
            profiles=profiles,
            alphas=alphas,
            search=search,
            output_path=out_sec.get("results", "results.csv"),
            output_format=out_sec.get("format", "csv"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path: str) -> CampaignConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def profiles_to_dict(profiles: dict[float, dict[str, DeviationProfile]]) -> dict:
    return {
        repr(ber): {
            gid: {
                "msd_min": p.msd_min,
                "msd_max": p.msd_max,
                "rcsd_min": p.rcsd_min,
                "rcsd_max": p.rcsd_max,
                "sample_count": p.sample_count,
            }
            for gid, p in per_gemm.items()
        }
        for ber, per_gemm in profiles.items()
    }


def profiles_from_dict(d: dict) -> dict[float, dict[str, DeviationProfile]]:
    out = {}
    for ber_key, per_gemm in d.items():
        ber = float(ber_key)
        out[ber] = {
            gid: DeviationProfile(gemm_id=gid, ber=ber, **vals)
            for gid, vals in per_gemm.items()
        }
    return out


@dataclass
class _Context:
    model: Model
    dataset: Dataset
    thresholds: dict[float, dict[str, ThresholdSet] | None]
    config: CampaignConfig


def _build_context(config: CampaignConfig) -> _Context:
    model = build_model(config.model)
    dataset = generate_dataset(model, config.n_samples, config.data_seed)
    thresholds: dict[float, dict[str, ThresholdSet] | None] = {}
    for ber in config.bers:
        if config.profiles is not None and ber in config.profiles:
            if isinstance(config.alphas, AlphaAssignment):
                assignment = config.alphas
            elif config.alphas is not None:
                assignment = AlphaAssignment.uniform(
                    [n.gemm_id for n in model.nodes], float(config.alphas)
                )
            else:
                assignment = None
            thresholds[ber] = (
                thresholds_from_assignment(config.profiles[ber], assignment)
                if assignment is not None
                else None
            )
        else:
            thresholds[ber] = None
    return _Context(model=model, dataset=dataset, thresholds=thresholds, config=config)


def _run_point(ctx: _Context, ber: float, strategy_name: str, trial: int) -> dict:
    config = ctx.config
    strategy = strategy_from_name(strategy_name)
    counter = OpCounter()
    if strategy is None and ber == 0.0:
        cfg = None  # unprotected, fault-free: plain clean run
    else:
        cfg = FaultConfig(ber=ber, seed=config.base_seed, scope=config.scope)
    stats = evaluate(
        ctx.model,
        ctx.dataset,
        cfg,
        strategy,
        ctx.thresholds.get(ber) if strategy is not None else None,
        counter,
        trial=trial,
    )
    return {
        "ber": ber,
        "strategy": strategy_name,
        "trial": trial,
        "accuracy": stats.accuracy,
        "workload_mults": counter.workload_mults,
        "abft_mults": counter.abft_mults,
        "abft_adds": counter.abft_adds,
        "abft_comparisons": counter.abft_comparisons,
        "detections_triggered": stats.detections_triggered,
        "exact_corrected": stats.exact_corrected,
        "approx_corrected": stats.approx_corrected,
        "ignored": stats.ignored,
    }


_WORKER_CTX: _Context | None = None


def _init_worker(config: CampaignConfig):
    global _WORKER_CTX
    _WORKER_CTX = _build_context(config)


def _worker_run(task):
    ber, strategy_name, trial = task
    return _run_point(_WORKER_CTX, ber, strategy_name, trial)


def run_campaign(config: CampaignConfig, workers: int = 1) -> list[dict]:
    """Execute the full sweep; one row per (ber, strategy, trial), sorted."""
    tasks = [
        (ber, s, t)
        for ber in config.bers
        for s in config.strategies
        for t in range(config.trials)
    ]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(config,)
        ) as pool:
            rows = list(pool.map(_worker_run, tasks, chunksize=1))
    else:
        ctx = _build_context(config)
        rows = [_run_point(ctx, *task) for task in tasks]
    rows.sort(key=lambda r: (r["ber"], r["strategy"], r["trial"]))
    return rows


@dataclass
class StatsReport:
    ber: float
    histograms: dict  # gemm_id -> {"msd": {...}, "rcsd": {...}}
    multi_error_fraction: float
    flagged_rows_cols: int
    multi_error_rows_cols: int
    sample_count: int
    denominator: str = "flagged rows + flagged cols at baseline thresholds"

    def to_dict(self):
        return {
            "ber": self.ber,
            "histograms": self.histograms,
            "multi_error_fraction": self.multi_error_fraction,
            "flagged_rows_cols": self.flagged_rows_cols,
            "multi_error_rows_cols": self.multi_error_rows_cols,
            "sample_count": self.sample_count,
            "denominator": self.denominator,
        }


def _histogram(samples: list[float], bins: int = 20) -> dict:
    finite = [s for s in samples if math.isfinite(s)]
    if not finite:
        return {"edges": [], "counts": [], "nonfinite": len(samples)}
    counts, edges = np.histogram(finite, bins=bins)
    return {
        "edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
        "nonfinite": len(samples) - len(finite),
    }


def select_gemms(model: Model, selector) -> list[str]:
    if selector == "largest_per_layer":
        groups: dict[str, list] = {}
        for node in model.nodes:
            group = node.gemm_id.split(".")[0]
            groups.setdefault(group, []).append(node)
        return [
            max(nodes, key=lambda n: (n.shape.m * n.shape.n, n.gemm_id)).gemm_id
            for _, nodes in sorted(groups.items())
        ]
    ids = list(selector)
    for gid in ids:
        if gid not in model.node_by_id:
            raise KeyError(f"unknown gemm_id {gid!r}")
    return ids


def compute_stats(
    model: Model,
    inputs,
    ber: float,
    trials: int,
    seed: int,
    gemm_selector="largest_per_layer",
) -> StatsReport:
    """MSD / |R/CSD| sample histograms for the selected GEMMs, plus the
    fraction of flagged rows/columns holding more than one true error."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    selected = set(select_gemms(model, gemm_selector))
    msd_samples: dict[str, list[float]] = {gid: [] for gid in selected}
    rc_samples: dict[str, list[float]] = {gid: [] for gid in selected}
    flagged = 0
    multi = 0

    def obs(node, A, B, C, rec):
        nonlocal flagged, multi
        ck = precompute_checksums(A, B)
        prof = compute_sum_profiles(A, B, C, checksums=ck)
        if node.gemm_id in selected:
            msd_samples[node.gemm_id].append(
                abs(ck.predicted_total - float(C.sum(dtype=np.float64)))
            )
            rc_samples[node.gemm_id].extend(
                float(v) for v in np.abs(np.concatenate([prof.rsd, prof.csd]))
            )
        loc = localize(prof)
        true_rows = rec.errors_per_row()
        true_cols = rec.errors_per_col()
        for r in loc.faulty_rows:
            flagged += 1
            multi += int(true_rows[r] > 1)
        for c in loc.faulty_cols:
            flagged += 1
            multi += int(true_cols[c] > 1)

    cfg = FaultConfig(ber=ber, seed=seed)
    for t in range(trials):
        x = inputs[t % len(inputs)]
        forward(model, x, cfg, None, None, None, trial=t, sample=0, observer=obs)

    return StatsReport(
        ber=ber,
        histograms={
            gid: {"msd": _histogram(msd_samples[gid]), "rcsd": _histogram(rc_samples[gid])}
            for gid in sorted(selected)
        },
        multi_error_fraction=(multi / flagged) if flagged else 0.0,
        flagged_rows_cols=flagged,
        multi_error_rows_cols=multi,
        sample_count=trials,
    )


def _format_value(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(result, fmt: str, path: str):
    """Write campaign rows or a stats report; CSV numbers round-trip."""
    if isinstance(result, StatsReport):
        payload = result.to_dict()
        with open(path, "w") as f:
            json.dump(payload, f, indent=1, sort_keys=True)
        return
    rows = sorted(result, key=lambda r: (r["ber"], r["strategy"], r["trial"]))
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(RESULT_FIELDS)
            for row in rows:
                writer.writerow([_format_value(row[k]) for k in RESULT_FIELDS])
    elif fmt == "json":
        with open(path, "w") as f:
            json.dump([{k: row[k] for k in RESULT_FIELDS} for row in rows], f, indent=1)
    else:
        raise ValueError(f"unknown output format {fmt!r}")


def load_results_csv(path: str) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for raw in reader:
            row = dict(raw)
            row["ber"] = float(row["ber"])
            row["trial"] = int(row["trial"])
            row["accuracy"] = float(row["accuracy"])
            for k in RESULT_FIELDS[4:]:
                row[k] = int(row[k])
            rows.append(row)
    return rows
