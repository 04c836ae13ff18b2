"""Checksum-based fault tolerance for GEMM: detection, localization,
exact correction, and the approximate (threshold-relaxed) variants.

Sign convention: deviation = predicted - actual, so exact correction is
literally adding the deviation to the faulty element. All deviation
comparisons use absolute values. Checksum arithmetic runs in float64 and is
itself fault-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .faults import FaultConfig, FaultRecord, RngStream, faulty_gemm
from .tensor_core import OpCounter, ShapeError, as_matrix

# Relative tolerance absorbing float32 round-off: a deviation only counts as
# a fault when it exceeds REL_EPS times the absolute-value accumulation
# magnitude of the predicted quantity (never less than REL_EPS itself).
REL_EPS = 1e-4


def fp_floor(scale: float) -> float:
    return REL_EPS * max(1.0, abs(float(scale)))


@dataclass(frozen=True)
class AbftStrategy:
    detection: str  # BED | AED
    localization: str  # BEL | AEL
    correction: str  # BEC | AEC-zero | AEC-average


STRATEGY_PRESETS = {
    "baseline": AbftStrategy("BED", "BEL", "BEC"),
    "v1": AbftStrategy("AED", "BEL", "BEC"),
    "v2": AbftStrategy("AED", "AEL", "BEC"),
    "opt": AbftStrategy("AED", "AEL", "AEC-zero"),
    "opt-avg": AbftStrategy("AED", "AEL", "AEC-average"),
}


def strategy_from_name(name: str) -> AbftStrategy | None:
    """Map a strategy name to a preset; "none" means no protection."""
    if name == "none":
        return None
    try:
        return STRATEGY_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown strategy {name!r}; expected one of "
            f"{['none', *STRATEGY_PRESETS]}"
        ) from None


@dataclass
class ThresholdSet:
    """Calibrated approximation thresholds; the float32 round-off floor is
    applied on top of these at every comparison."""

    detect_threshold: float = 0.0
    row_threshold: float = 0.0
    col_threshold: float = 0.0


@dataclass
class Checksums:
    a_colsum: np.ndarray  # length-k column sums of the left operand
    b_rowsum: np.ndarray  # length-k row sums of the right operand
    predicted_total: float
    total_scale: float  # sum of |a_colsum| * |b_rowsum|, for the fp floor


@dataclass
class DetectionReport:
    msd: float
    threshold: float
    triggered: bool


@dataclass
class SumProfiles:
    predicted_row: np.ndarray
    actual_row: np.ndarray
    rsd: np.ndarray
    predicted_col: np.ndarray
    actual_col: np.ndarray
    csd: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray


@dataclass
class Localization:
    faulty_rows: tuple
    faulty_cols: tuple
    candidates: tuple  # cartesian product faulty_rows x faulty_cols


@dataclass
class CorrectionReport:
    exact_corrected: int = 0
    approx_corrected: int = 0
    ignored: int = 0
    strategy: str = "BEC"


def precompute_checksums(A, B, counter: OpCounter | None = None) -> Checksums:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"checksum shape mismatch: {A.shape} x {B.shape}")
    m, k = A.shape
    n = B.shape[1]
    a_colsum = A.sum(axis=0, dtype=np.float64)
    b_rowsum = B.sum(axis=1, dtype=np.float64)
    predicted_total = float(a_colsum @ b_rowsum)
    total_scale = float(np.abs(a_colsum) @ np.abs(b_rowsum))
    if counter is not None:
        counter.abft_mults += k
        counter.abft_adds += (m - 1) * k + (n - 1) * k + (k - 1)
    return Checksums(a_colsum, b_rowsum, predicted_total, total_scale)


def detect(
    C,
    checksums: Checksums,
    thresholds: ThresholdSet | None = None,
    counter: OpCounter | None = None,
) -> DetectionReport:
    C = as_matrix(C)
    actual = float(C.sum(dtype=np.float64))
    msd = abs(checksums.predicted_total - actual)
    calibrated = thresholds.detect_threshold if thresholds is not None else 0.0
    threshold = max(calibrated, fp_floor(checksums.total_scale))
    triggered = (not math.isfinite(msd)) or msd > threshold
    if counter is not None:
        counter.abft_adds += C.size - 1
        counter.abft_comparisons += 1
    return DetectionReport(msd=msd, threshold=threshold, triggered=triggered)


def compute_sum_profiles(
    A,
    B,
    C,
    counter: OpCounter | None = None,
    checksums: Checksums | None = None,
) -> SumProfiles:
    A = as_matrix(A)
    B = as_matrix(B)
    C = as_matrix(C)
    m, k = A.shape
    n = B.shape[1]
    if C.shape != (m, n):
        raise ShapeError(f"output shape {C.shape} inconsistent with {A.shape} x {B.shape}")
    if checksums is None:
        checksums = precompute_checksums(A, B)
    predicted_row = A.astype(np.float64) @ checksums.b_rowsum
    predicted_col = checksums.a_colsum @ B.astype(np.float64)
    row_scale = np.abs(A).astype(np.float64) @ np.abs(checksums.b_rowsum)
    col_scale = np.abs(checksums.a_colsum) @ np.abs(B).astype(np.float64)
    actual_row = C.sum(axis=1, dtype=np.float64)
    actual_col = C.sum(axis=0, dtype=np.float64)
    if counter is not None:
        counter.abft_mults += m * k + k * n
        counter.abft_adds += (
            m * (k - 1) + (k - 1) * n  # the two matrix-vector products
            + m * (n - 1) + (m - 1) * n  # actual row/column sums
            + m + n  # deviation subtractions
        )
    return SumProfiles(
        predicted_row=predicted_row,
        actual_row=actual_row,
        rsd=predicted_row - actual_row,
        predicted_col=predicted_col,
        actual_col=actual_col,
        csd=predicted_col - actual_col,
        row_scale=row_scale,
        col_scale=col_scale,
    )


def _deviation_floors(scale: np.ndarray) -> np.ndarray:
    return REL_EPS * np.maximum(1.0, scale)


def localize(
    profiles: SumProfiles,
    thresholds: ThresholdSet | None = None,
    counter: OpCounter | None = None,
) -> Localization:
    ts = thresholds if thresholds is not None else ThresholdSet()
    row_thr = np.maximum(ts.row_threshold, _deviation_floors(profiles.row_scale))
    col_thr = np.maximum(ts.col_threshold, _deviation_floors(profiles.col_scale))
    bad_rows = (~np.isfinite(profiles.rsd)) | (np.abs(profiles.rsd) > row_thr)
    bad_cols = (~np.isfinite(profiles.csd)) | (np.abs(profiles.csd) > col_thr)
    if counter is not None:
        counter.abft_comparisons += profiles.rsd.size + profiles.csd.size
    rows = tuple(int(i) for i in np.flatnonzero(bad_rows))
    cols = tuple(int(j) for j in np.flatnonzero(bad_cols))
    candidates = tuple((r, c) for r in rows for c in cols)
    return Localization(faulty_rows=rows, faulty_cols=cols, candidates=candidates)


def correct_exact(C, localization: Localization, profiles: SumProfiles):
    """Single-pass exact correction; returns (corrected matrix, residual).

    A candidate that is the unique candidate in its row is corrected with the
    row deviation; a candidate unique in its column with the column deviation.
    When neither applies, a candidate (r, c) is still exactly correctable if
    rsd[r] and csd[c] agree (both checksums see the same single error) and
    that agreement is unambiguous within its row and column. Everything else
    is returned as residual.
    """
    C2 = as_matrix(C).copy()
    rows = localization.faulty_rows
    cols = localization.faulty_cols
    rsd, csd = profiles.rsd, profiles.csd
    residual: list[tuple[int, int]] = []
    if not rows or not cols:
        return C2, residual
    row_floor = _deviation_floors(profiles.row_scale)
    col_floor = _deviation_floors(profiles.col_scale)

    if len(cols) == 1:
        c = cols[0]
        for r in rows:
            if math.isfinite(rsd[r]):
                C2[r, c] = np.float32(C2[r, c] + rsd[r])
            else:
                residual.append((r, c))
        return C2, residual
    if len(rows) == 1:
        r = rows[0]
        for c in cols:
            if math.isfinite(csd[c]):
                C2[r, c] = np.float32(C2[r, c] + csd[c])
            else:
                residual.append((r, c))
        return C2, residual

    # Cross-match row vs column deviations over the candidate grid.
    r_idx = np.array(rows)
    c_idx = np.array(cols)
    rv = rsd[r_idx]
    cv = csd[c_idx]
    tol = np.maximum(row_floor[r_idx][:, None], col_floor[c_idx][None, :])
    finite = np.isfinite(rv)[:, None] & np.isfinite(cv)[None, :]
    match = finite & (np.abs(rv[:, None] - cv[None, :]) <= tol)
    row_matches = match.sum(axis=1)
    col_matches = match.sum(axis=0)
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            if match[a, b] and row_matches[a] == 1 and col_matches[b] == 1:
                C2[r, c] = np.float32(C2[r, c] + rsd[r])
            else:
                residual.append((r, c))
    return C2, residual


def correct_approx(C, residual_candidates, profiles: SumProfiles, mode: str):
    """Approximate handling of residual candidates: zero them out, or spread
    the row deviation evenly over the residual candidates of each row."""
    C2 = as_matrix(C).copy()
    if mode == "zero":
        for r, c in residual_candidates:
            C2[r, c] = np.float32(0.0)
    elif mode == "average":
        per_row: dict[int, int] = {}
        for r, _ in residual_candidates:
            per_row[r] = per_row.get(r, 0) + 1
        for r, c in residual_candidates:
            share = profiles.rsd[r] / per_row[r]
            if math.isfinite(share):
                C2[r, c] = np.float32(C2[r, c] + share)
    else:
        raise ValueError(f"unknown approximate correction mode {mode!r}")
    return C2


def protect_gemm(
    A,
    B,
    cfg: FaultConfig,
    strategy: AbftStrategy,
    thresholds: ThresholdSet | None,
    stream: RngStream,
    counter: OpCounter | None = None,
    record: FaultRecord | None = None,
    tamper=None,
):
    """Run one checksum-protected faulty GEMM.

    Pipeline: checksums -> faulty GEMM -> detection; on a trigger, sum
    profiles -> localization -> exact correction -> approximate correction
    (or ignore, per strategy). `tamper` is a test hook applied to the raw
    output before detection, for controlled-error experiments.
    """
    ts = thresholds if thresholds is not None else ThresholdSet()
    checksums = precompute_checksums(A, B, counter)
    C = faulty_gemm(A, B, cfg, stream, counter, record=record)
    if tamper is not None:
        C = tamper(C)
    detect_ts = ThresholdSet(
        detect_threshold=ts.detect_threshold if strategy.detection == "AED" else 0.0
    )
    det = detect(C, checksums, detect_ts, counter)
    report = CorrectionReport(strategy=strategy.correction)
    if det.triggered:
        profiles = compute_sum_profiles(A, B, C, counter, checksums=checksums)
        loc_ts = ThresholdSet(
            row_threshold=ts.row_threshold if strategy.localization == "AEL" else 0.0,
            col_threshold=ts.col_threshold if strategy.localization == "AEL" else 0.0,
        )
        loc = localize(profiles, loc_ts, counter)
        C, residual = correct_exact(C, loc, profiles)
        report.exact_corrected = len(loc.candidates) - len(residual)
        if counter is not None:
            counter.abft_adds += report.exact_corrected
        if strategy.correction == "BEC":
            report.ignored = len(residual)
        else:
            mode = "zero" if strategy.correction == "AEC-zero" else "average"
            C = correct_approx(C, residual, profiles, mode)
            report.approx_corrected = len(residual)
            if counter is not None and mode == "average":
                counter.abft_adds += len(residual)
    return C, det, report
