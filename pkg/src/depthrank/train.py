"""Training and evaluation drivers for the hourglass network.

The per-batch objective is the sum of per-image ranking losses divided by
the total query count in the batch, so the learning rate is insensitive
to the number of pairs per image. The alternative objective trains on
full depth maps with a log-space MSE.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .hourglass import Model
from .losses import log_depth_loss_op, ordinal_loss_op
from .metrics import (CalibrationResult, MetricsReport, calibrate_tau,
                      metric_errors, normalize_depth, whdr, wkdr,
                      relations_from_scores)
from .sampling import group_pairs, queries_to_arrays, read_pairs
from .synthetic import read_depth, read_image
from .tensor import AdamState, Tensor, adam_step, backward


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "ranking"  # or "logmse"

    def __post_init__(self):
        if self.loss not in ("ranking", "logmse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainSample:
    image_id: str
    image: np.ndarray  # 3xHxW float32
    queries: tuple[np.ndarray, ...] | None = None  # (y1, x1, y2, x2, r)
    depth: np.ndarray | None = None  # HxW, for the logmse loss


def load_dataset(data_dir, pair_file=None, with_depth=False) -> list[TrainSample]:
    """Load `img_*.png` (+ optional pairs and `dep_*.dmp`) from a directory."""
    data_dir = Path(data_dir)
    grouped = {}
    if pair_file is not None:
        grouped = group_pairs(read_pairs(pair_file))
    samples = []
    for img_path in sorted(data_dir.glob("img_*.png")):
        image_id = img_path.stem[len("img_"):]
        image = read_image(img_path)
        queries = None
        if grouped:
            qs = grouped.get(image_id, [])
            queries = queries_to_arrays(qs)
        depth = None
        if with_depth:
            depth = read_depth(data_dir / f"dep_{image_id}.dmp")
        samples.append(TrainSample(image_id, image, queries, depth))
    if not samples:
        raise FileNotFoundError(f"no img_*.png files under {data_dir}")
    return samples


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            f.write("epoch,mean_loss\n")
            for i, v in enumerate(self.epoch_losses, start=1):
                f.write(f"{i},{v:.8f}\n")


def train(model: Model, samples: list[TrainSample], cfg: TrainConfig) -> TrainHistory:
    """Optimize the model in place; returns the per-epoch loss trace."""
    if cfg.loss == "ranking" and any(s.queries is None for s in samples):
        raise ValueError("ranking loss needs pair queries for every image")
    if cfg.loss == "logmse" and any(s.depth is None for s in samples):
        raise ValueError("logmse loss needs a depth map for every image")
    params = model.parameters()
    state = AdamState.for_params(params)
    order_rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    start = time.perf_counter()
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(len(samples))
        losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            batch = [samples[i] for i in perm[lo:lo + cfg.batch_size]]
            x = Tensor(np.stack([s.image for s in batch]).astype(model.dtype))
            out = model(x)
            if cfg.loss == "ranking":
                total_queries = sum(len(s.queries[0]) for s in batch)
                if total_queries == 0:
                    continue
                loss = T.mul_scalar(
                    ordinal_loss_op(out, [s.queries for s in batch]),
                    1.0 / total_queries)
            else:
                loss = log_depth_loss_op(out, np.stack([s.depth for s in batch]))
            model.zero_grad()
            backward(loss, params=params)
            adam_step(params, [p.grad for p in params], state,
                      lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
            losses.append(float(loss.data))
        history.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
    history.seconds = time.perf_counter() - start
    return history


def predict_scores(model: Model, samples: list[TrainSample],
                   batch_size: int = 8) -> dict[str, np.ndarray]:
    """Score maps for every sample, keyed by image id."""
    out: dict[str, np.ndarray] = {}
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo:lo + batch_size]
        x = Tensor(np.stack([s.image for s in batch]).astype(model.dtype))
        maps = model(x).data[:, 0]
        for s, m in zip(batch, maps):
            out[s.image_id] = np.array(m)
    return out


def pair_score_diffs(scores: dict[str, np.ndarray], records) -> tuple[np.ndarray, np.ndarray]:
    """(ground-truth relations, score differences) for pair records."""
    gt, dz = [], []
    for image_id, q in records:
        z = scores[image_id]
        gt.append(q.r)
        dz.append(float(z[q.i] - z[q.j]))
    return np.asarray(gt), np.asarray(dz)


@dataclass
class EvalResult:
    report: MetricsReport
    calibration: CalibrationResult | None
    n_pairs: int
    n_clamped: int = 0


def evaluate(scores: dict[str, np.ndarray], records,
             val_records=None, tau: float | None = None,
             gt_depths: dict[str, np.ndarray] | None = None,
             target_mean: float | None = None, target_std: float | None = None,
             negate_scores: bool = True) -> EvalResult:
    """Ordinal metrics on pair records, plus metric errors when ground-truth
    depth maps and normalization targets are supplied.

    tau comes from `val_records` (preferred) or is given explicitly; with
    neither, tau = 0.
    """
    gt, dz = pair_score_diffs(scores, records)
    calibration = None
    if val_records is not None:
        vgt, vdz = pair_score_diffs(scores, val_records)
        calibration = calibrate_tau(vgt, vdz)
        tau = calibration.tau
    elif tau is None:
        tau = 0.0
    overall, eq, neq = wkdr(gt, relations_from_scores(dz, tau))
    decisive = gt != 0
    whdr_rate = whdr(gt[decisive], dz[decisive]) if decisive.any() else None
    report = MetricsReport(wkdr=overall, wkdr_eq=eq, wkdr_neq=neq,
                           tau=float(tau), whdr=whdr_rate)
    n_clamped = 0
    if gt_depths is not None:
        if target_mean is None or target_std is None:
            stacked = np.stack(list(gt_depths.values()))
            mean_map = stacked.mean(axis=0)
            target_mean = float(mean_map.mean())
            target_std = float(mean_map.std())
        errs = []
        for image_id, depth in gt_depths.items():
            pred = normalize_depth(scores[image_id], target_mean, target_std,
                                   negate=negate_scores)
            e = metric_errors(pred, depth)
            errs.append(e)
            n_clamped += e.n_clamped
        report.rmse = float(np.mean([e.rmse for e in errs]))
        report.rmse_log = float(np.mean([e.rmse_log for e in errs]))
        report.rmse_sinv = float(np.mean([e.rmse_sinv for e in errs]))
        report.absrel = float(np.mean([e.absrel for e in errs]))
        report.sqrrel = float(np.mean([e.sqrrel for e in errs]))
    return EvalResult(report=report, calibration=calibration,
                      n_pairs=len(records), n_clamped=n_clamped)


def depth_map_stats(depths) -> tuple[float, float]:
    """Mean and population std of the mean depth map of a training set."""
    stacked = np.stack(list(depths))
    mean_map = stacked.mean(axis=0)
    return float(mean_map.mean()), float(mean_map.std())
