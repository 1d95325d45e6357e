"""Ordinal and metric evaluation of predicted depth.

Ordinal side: disagreement rates between predicted and ground-truth pair
relations (overall, on equal pairs, on unequal pairs; all weights 1), the
score-difference threshold tau that turns scores into equality
predictions, and the two-way human-disagreement rate for datasets without
an equality label. Metric side: RMSE, log RMSE, scale-invariant log RMSE,
absolute and squared relative error, plus the affine normalization that
makes unit-free scores comparable to metric depth.

Scores follow the larger-is-closer convention of the ranking loss, so
metric comparison negates them (flag-controlled) before normalizing.
All statistics use the population standard deviation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

LOG_CLAMP = 1e-6

BASELINE_RULES = ("lower_point", "center_proximity", "left_point", "location_only")

REPORT_KEYS = ("wkdr", "wkdr_eq", "wkdr_neq", "tau", "whdr",
               "rmse", "rmse_log", "rmse_sinv", "absrel", "sqrrel")


def predict_relation(z_i: float, z_j: float, tau: float) -> int:
    """0 if the score gap is inside tau (strictly), else the gap's sign."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    d = z_i - z_j
    if abs(d) < tau:
        return 0
    return 1 if d > 0 else -1


def relations_from_scores(dz: np.ndarray, tau: float) -> np.ndarray:
    """Vectorized predict_relation over score differences dz = z_i - z_j."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    dz = np.asarray(dz)
    out = np.where(dz > 0, 1, -1)
    return np.where(np.abs(dz) < tau, 0, out)


def wkdr(gt: np.ndarray, pred: np.ndarray) -> tuple[float, float | None, float | None]:
    """(overall, equal-pairs, unequal-pairs) disagreement rates.

    A sub-rate is None when its denominator subset is empty.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.size == 0:
        raise ValueError("wkdr needs at least one pair")
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    wrong = gt != pred
    overall = float(wrong.mean())
    eq = gt == 0
    neq = ~eq
    rate_eq = float(wrong[eq].mean()) if eq.any() else None
    rate_neq = float(wrong[neq].mean()) if neq.any() else None
    return overall, rate_eq, rate_neq


@dataclass
class CalibrationResult:
    tau: float
    wkdr: float
    wkdr_eq: float
    wkdr_neq: float

    @property
    def max_rate(self) -> float:
        return max(self.wkdr, self.wkdr_eq, self.wkdr_neq)


def calibrate_tau(gt: np.ndarray, dz: np.ndarray) -> CalibrationResult:
    """Pick tau minimizing the max of the three disagreement rates.

    Candidates are 0, the midpoints between consecutive distinct |dz|
    values, and max|dz| plus a nudge; the objective is piecewise constant
    with breakpoints at the |dz| values, so this set attains its true
    minimum. Ties resolve to the smallest tau.
    """
    gt = np.asarray(gt)
    dz = np.asarray(dz, dtype=np.float64)
    if gt.size == 0:
        raise ValueError("calibration needs a nonempty validation set")
    if not (gt == 0).any() or not (gt != 0).any():
        raise ValueError("calibration needs both equal and unequal ground-truth pairs")
    mags = np.unique(np.abs(dz))
    mids = (mags[:-1] + mags[1:]) / 2.0
    eps = max(1e-9, 1e-6 * float(mags[-1]))
    candidates = np.concatenate([[0.0], mids, [mags[-1] + eps]])
    best: CalibrationResult | None = None
    for tau in candidates:
        w, weq, wneq = wkdr(gt, relations_from_scores(dz, float(tau)))
        cand = CalibrationResult(float(tau), w, weq, wneq)
        if best is None or cand.max_rate < best.max_rate - 1e-15:
            best = cand
    return best


def whdr(gt: np.ndarray, dz: np.ndarray) -> float:
    """Two-way disagreement rate: sign(dz) against relations in {+1, -1}.

    A zero score difference matches neither label and counts as a
    disagreement; there is no equality option.
    """
    gt = np.asarray(gt)
    dz = np.asarray(dz)
    if gt.size == 0:
        raise ValueError("whdr needs at least one pair")
    if (gt == 0).any():
        raise ValueError("whdr is undefined for pairs labeled equal")
    return float((np.sign(dz) != gt).mean())


def normalize_depth(pred: np.ndarray, target_mean: float, target_std: float,
                    negate: bool = False) -> np.ndarray:
    """Affine-map a score map to the target mean and population std."""
    if target_std <= 0:
        raise ValueError(f"target std must be positive, got {target_std}")
    x = np.asarray(pred, dtype=np.float64)
    if negate:
        x = -x
    std = x.std()
    if std == 0:
        raise ValueError("cannot normalize a constant prediction")
    return (x - x.mean()) / std * target_std + target_mean


@dataclass
class MetricErrors:
    rmse: float
    rmse_log: float
    rmse_sinv: float
    absrel: float
    sqrrel: float
    n_clamped: int = 0  # predictions floored to LOG_CLAMP before log


def metric_errors(pred: np.ndarray, gt: np.ndarray) -> MetricErrors:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    if (gt <= 0).any():
        raise ValueError("ground-truth depth must be strictly positive")
    diff = pred - gt
    clamped = pred < LOG_CLAMP
    d = np.log(np.maximum(pred, LOG_CLAMP)) - np.log(gt)
    return MetricErrors(
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean(d ** 2))),
        rmse_sinv=float(np.sqrt(max(np.mean(d ** 2) - np.mean(d) ** 2, 0.0))),
        absrel=float(np.mean(np.abs(diff) / gt)),
        sqrrel=float(np.mean(diff ** 2 / gt)),
        n_clamped=int(clamped.sum()),
    )


def baseline_relation(i: tuple[int, int], j: tuple[int, int], rule: str,
                      image_shape: tuple[int, int] | None = None,
                      rng: np.random.Generator | None = None) -> int:
    """Coordinate-only relation prediction.

    lower_point: the point with the larger row index is closer.
    center_proximity: the point nearer the image center is closer.
    left_point: the point with the smaller column is closer.
    location_only: lower_point with a random tie-break on equal rows.
    Undecided ties draw from `rng` (required in that case).
    """
    if rule not in BASELINE_RULES:
        raise ValueError(f"unknown rule {rule!r}, expected one of {BASELINE_RULES}")
    (y1, x1), (y2, x2) = i, j
    if rule in ("lower_point", "location_only"):
        verdict = np.sign(y1 - y2)
    elif rule == "left_point":
        verdict = np.sign(x2 - x1)
    else:
        if image_shape is None:
            raise ValueError("center_proximity needs the image shape")
        cy, cx = (image_shape[0] - 1) / 2.0, (image_shape[1] - 1) / 2.0
        d1 = np.hypot(y1 - cy, x1 - cx)
        d2 = np.hypot(y2 - cy, x2 - cx)
        verdict = np.sign(d2 - d1)
    if verdict == 0:
        if rng is None:
            raise ValueError(f"{rule} tie needs an rng for the tie-break")
        return 1 if rng.random() < 0.5 else -1
    return int(verdict)


# ---------------------------------------------------------------------------
# report files

@dataclass
class MetricsReport:
    wkdr: float | None = None
    wkdr_eq: float | None = None
    wkdr_neq: float | None = None
    tau: float | None = None
    whdr: float | None = None
    rmse: float | None = None
    rmse_log: float | None = None
    rmse_sinv: float | None = None
    absrel: float | None = None
    sqrrel: float | None = None

    def validate(self) -> None:
        for key in ("wkdr", "wkdr_eq", "wkdr_neq", "whdr"):
            v = getattr(self, key)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{key}={v} outside [0, 1]")
        for key, v in asdict(self).items():
            if v is not None and not np.isfinite(v):
                raise ValueError(f"{key} is not finite")


def write_report(report: MetricsReport, path_base) -> tuple[Path, Path]:
    """Write `<base>.txt` (key value lines) and `<base>.json`."""
    report.validate()
    base = Path(path_base)
    txt = base.with_suffix(".txt")
    js = base.with_suffix(".json")
    values = asdict(report)
    with txt.open("w", encoding="utf-8") as f:
        for key in REPORT_KEYS:
            v = values[key]
            f.write(f"{key} {'nan' if v is None else format(v, '.10g')}\n")
    with js.open("w", encoding="utf-8") as f:
        json.dump({k: values[k] for k in REPORT_KEYS}, f, indent=2, sort_keys=False)
        f.write("\n")
    return txt, js


def read_report(path) -> MetricsReport:
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return MetricsReport(**{k: data.get(k) for k in REPORT_KEYS})
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, value = line.split()
        out[key] = None if value == "nan" else float(value)
    return MetricsReport(**{k: out.get(k) for k in REPORT_KEYS})
