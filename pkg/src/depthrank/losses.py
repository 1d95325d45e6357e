"""Relative-depth ranking loss and the full-depth-map alternative.

The relation convention: r = +1 drives the first point's score above the
second's, so a larger score means closer. r = -1 is the mirror case and
r = 0 penalizes any score difference quadratically. Softplus is evaluated
in the overflow-safe form max(t, 0) + log1p(exp(-|t|)).
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, _accum, _from_op

VALID_RELATIONS = (1, -1, 0)

LOG_CLAMP = 1e-6  # floor applied to predictions before any log


def _check_relation(r: int) -> None:
    if r not in VALID_RELATIONS:
        raise ValueError(f"relation must be one of {VALID_RELATIONS}, got {r!r}")


def softplus(t: float) -> float:
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def pair_loss(z_i: float, z_j: float, r: int) -> float:
    """Loss for one query: softplus of the mis-ordered margin, or squared
    difference when the pair is labeled equal."""
    _check_relation(r)
    d = z_i - z_j
    if r == 1:
        return softplus(-d)
    if r == -1:
        return softplus(d)
    return d * d


def pair_loss_grad(z_i: float, z_j: float, r: int) -> tuple[float, float]:
    """(d/dz_i, d/dz_j) of pair_loss; the two components sum to zero."""
    _check_relation(r)
    if r == 1:
        s = sigmoid(z_j - z_i)
        return -s, s
    if r == -1:
        s = sigmoid(z_i - z_j)
        return s, -s
    d = z_i - z_j
    return 2.0 * d, -2.0 * d


def pair_losses(diff: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorized pair_loss over score differences diff = z_i - z_j."""
    diff = np.asarray(diff, dtype=np.float64)
    r = np.asarray(r)
    bad = ~np.isin(r, VALID_RELATIONS)
    if bad.any():
        raise ValueError(f"invalid relation values: {np.unique(r[bad])}")
    t = -diff * r  # mis-ordered margin; sign irrelevant for r == 0
    soft = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return np.where(r == 0, diff * diff, soft)


def pair_loss_grads(diff: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorized d(pair_loss)/d(z_i); the z_j component is its negation."""
    diff = np.asarray(diff, dtype=np.float64)
    r = np.asarray(r)
    t = np.clip(-diff * r, -60.0, 60.0)
    s = 1.0 / (1.0 + np.exp(-t))
    return np.where(r == 0, 2.0 * diff, -r * s)


def image_loss(z: np.ndarray, queries) -> float:
    """Sum of pair_loss over all queries against a single score map."""
    z = np.asarray(z)
    h, w = z.shape
    total = 0.0
    for idx, q in enumerate(queries):
        (y1, x1), (y2, x2), r = q.i, q.j, q.r
        if not (0 <= y1 < h and 0 <= x1 < w and 0 <= y2 < h and 0 <= x2 < w):
            raise IndexError(
                f"query {idx} out of bounds for {h}x{w} map: i={q.i}, j={q.j}")
        total += pair_loss(float(z[y1, x1]), float(z[y2, x2]), r)
    return total


def metric_depth_loss(z: np.ndarray, gt: np.ndarray, log_space: bool = True) -> float:
    """Mean squared error against a full depth map, in log-depth by default."""
    z = np.asarray(z, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if z.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {z.shape} vs ground truth {gt.shape}")
    if (gt <= 0).any():
        raise ValueError("ground-truth depth must be strictly positive")
    if not log_space:
        return float(np.mean((z - gt) ** 2))
    d = np.log(np.maximum(z, LOG_CLAMP)) - np.log(gt)
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# graph ops: attach the analytic gradients above to a score-map tensor

def ordinal_loss_op(out: Tensor, batch_queries) -> Tensor:
    """Sum of ranking losses over a batch, as a scalar graph node.

    `out` is (N, 1, H, W); `batch_queries` holds per-image coordinate/relation
    arrays (y1, x1, y2, x2, r). Backward scatters the analytic pair gradients
    into the score map.
    """
    n, c, h, w = out.data.shape
    if c != 1:
        raise ValueError(f"expected a 1-channel score map, got {out.data.shape}")
    if len(batch_queries) != n:
        raise ValueError(f"{len(batch_queries)} query sets for batch of {n}")
    arrays = []
    total = 0.0
    for bi, q in enumerate(batch_queries):
        y1, x1, y2, x2, r = (np.asarray(a) for a in q)
        if len(y1) and (y1.max() >= h or y2.max() >= h or x1.max() >= w or x2.max() >= w
                        or min(y1.min(), y2.min(), x1.min(), x2.min()) < 0):
            raise IndexError(f"batch item {bi}: query out of bounds for {h}x{w} map")
        diff = out.data[bi, 0, y1, x1].astype(np.float64) - out.data[bi, 0, y2, x2]
        total += pair_losses(diff, r).sum()
        arrays.append((y1, x1, y2, x2, r, diff))
    value = np.asarray(total, dtype=out.data.dtype)

    def backward_fn(g):
        gz = np.zeros_like(out.data)
        for bi, (y1, x1, y2, x2, r, diff) in enumerate(arrays):
            gi = pair_loss_grads(diff, r).astype(out.data.dtype)
            np.add.at(gz[bi, 0], (y1, x1), gi)
            np.add.at(gz[bi, 0], (y2, x2), -gi)
        _accum(out, gz * g)

    return _from_op(value, (out,), "ordinal_loss", backward_fn)


def log_depth_loss_op(out: Tensor, gt_batch: np.ndarray) -> Tensor:
    """Log-space MSE against full depth maps, as a scalar graph node."""
    n, c, h, w = out.data.shape
    if c != 1:
        raise ValueError(f"expected a 1-channel score map, got {out.data.shape}")
    gt = np.asarray(gt_batch, dtype=np.float64).reshape(n, h, w)
    if (gt <= 0).any():
        raise ValueError("ground-truth depth must be strictly positive")
    zc = np.maximum(out.data[:, 0].astype(np.float64), LOG_CLAMP)
    d = np.log(zc) - np.log(gt)
    value = np.asarray((d * d).mean(), dtype=out.data.dtype)

    def backward_fn(g):
        mask = out.data[:, 0] > LOG_CLAMP
        gz = np.where(mask, 2.0 * d / (d.size * zc), 0.0)
        _accum(out, (gz * g)[:, None].astype(out.data.dtype))

    return _from_op(value, (out,), "log_depth_loss", backward_fn)
