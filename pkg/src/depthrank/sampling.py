"""Point-pair query sampling and ground-truth relation labeling.

Three strategies: unconstrained uniform pairs, horizontally symmetric
pairs mirrored about the vertical centerline, and pairs whose separation
falls in a pixel-distance band (given at a 320-wide reference resolution
and scaled linearly with image width). Relations derived from depth use a
ratio threshold for the equality band.

Pair file format (the interchange format for training, metrics, and the
annotation tooling): one header line, then one comma-separated record per
line: image_id, y1, x1, y2, x2, r with 0-based row/col coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REFERENCE_WIDTH = 320
PAIR_HEADER = "image_id,y1,x1,y2,x2,r"

STRATEGIES = ("unconstrained", "symmetric", "distance_constrained")


@dataclass(frozen=True)
class PairQuery:
    """One relative-depth query: two pixel locations and a relation."""
    i: tuple[int, int]  # (row, col) of the first point
    j: tuple[int, int]
    r: int = 0

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"query points must differ, both are {self.i}")
        if self.r not in (1, -1, 0):
            raise ValueError(f"relation must be +1, -1 or 0, got {self.r}")


@dataclass
class SamplerConfig:
    width: int
    height: int
    strategy: str = "unconstrained"
    d_min: float = 13.0  # pixels at the 320x240 reference resolution
    d_max: float = 19.0
    mix: float = 0.5  # unconstrained fraction for mixed datasets
    seed: int = 0
    pairs_per_image: int = 1
    ratio_threshold: float = 1.02  # equality band for relation_from_depth

    def __post_init__(self):
        if self.strategy not in STRATEGIES and self.strategy != "mixed":
            raise ValueError(f"unknown strategy {self.strategy!r}")
        # The band is given at the reference width; the feasibility bound
        # applies after scaling to this image's resolution.
        scale = self.width / REFERENCE_WIDTH
        if not (0 < self.d_min <= self.d_max
                and self.d_max * scale < min(self.width, self.height)):
            raise ValueError(
                f"need 0 < d_min <= d_max and scaled d_max < min(W, H), got "
                f"[{self.d_min}, {self.d_max}] (scale {scale:.4g}) for "
                f"{self.width}x{self.height}")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError(f"mix ratio must be in [0, 1], got {self.mix}")


def sample_unconstrained(cfg: SamplerConfig, rng: np.random.Generator) -> PairQuery:
    """Two distinct pixels, uniform over the image."""
    if cfg.width < 2 and cfg.height < 2:
        raise ValueError("image too small for two distinct points")
    while True:
        y1, y2 = rng.integers(0, cfg.height, size=2)
        x1, x2 = rng.integers(0, cfg.width, size=2)
        if (y1, x1) != (y2, x2):
            return PairQuery((int(y1), int(x1)), (int(y2), int(x2)))


def sample_symmetric(cfg: SamplerConfig, rng: np.random.Generator) -> PairQuery:
    """Two points on one row, mirrored about the vertical centerline.

    The left column is uniform on [0, ceil(W/2) - 1); the exact-center
    column of odd widths is never drawn, which keeps the points distinct.
    """
    if cfg.width < 3:
        raise ValueError(f"symmetric sampling needs width >= 3, got {cfg.width}")
    y = int(rng.integers(0, cfg.height))
    x = int(rng.integers(0, math.ceil(cfg.width / 2) - 1))
    return PairQuery((y, x), (y, cfg.width - 1 - x))


def _offset_bank(lo: float, hi: float) -> np.ndarray:
    """Integer (dy, dx) offsets with Euclidean length in [lo, hi]."""
    r = int(math.floor(hi)) + 1
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    d = np.hypot(dy, dx)
    mask = (d >= lo) & (d <= hi) & (d > 0)
    return np.stack([dy[mask], dx[mask]], axis=1)


def sample_distance_constrained(cfg: SamplerConfig, rng: np.random.Generator,
                                max_attempts: int = 1000) -> PairQuery:
    """Two points whose separation lies in the scaled distance band.

    The band [d_min, d_max] is given at the reference width and scales by
    s = W / 320. If no integer offset hits the exact band (degenerate or
    very narrow bands), it is widened by half a pixel once.
    """
    s = cfg.width / REFERENCE_WIDTH
    lo, hi = cfg.d_min * s, cfg.d_max * s
    bank = _offset_bank(lo, hi)
    if len(bank) == 0:
        bank = _offset_bank(lo - 0.5, hi + 0.5)
    if len(bank) == 0:
        raise ValueError(f"no integer offsets with length in [{lo}, {hi}]")
    for _ in range(max_attempts):
        y1 = int(rng.integers(0, cfg.height))
        x1 = int(rng.integers(0, cfg.width))
        dy, dx = bank[int(rng.integers(0, len(bank)))]
        y2, x2 = y1 + int(dy), x1 + int(dx)
        if 0 <= y2 < cfg.height and 0 <= x2 < cfg.width:
            return PairQuery((y1, x1), (y2, x2))
    raise ValueError(
        f"no in-bounds pair after {max_attempts} attempts; distance band "
        f"[{lo:.2f}, {hi:.2f}] is infeasible for {cfg.width}x{cfg.height}")


def sample_pair(cfg: SamplerConfig, rng: np.random.Generator) -> PairQuery:
    """Dispatch on cfg.strategy; 'mixed' draws the strategy per call."""
    strategy = cfg.strategy
    if strategy == "mixed":
        strategy = "unconstrained" if rng.random() < cfg.mix else "symmetric"
    if strategy == "unconstrained":
        return sample_unconstrained(cfg, rng)
    if strategy == "symmetric":
        return sample_symmetric(cfg, rng)
    return sample_distance_constrained(cfg, rng)


def relation_from_depth(gt: np.ndarray, i: tuple[int, int], j: tuple[int, int],
                        ratio_thresh: float = 1.02) -> int:
    """+1 if point i is closer, -1 if farther, 0 inside the equality band."""
    if ratio_thresh <= 1.0:
        raise ValueError(f"ratio threshold must be > 1, got {ratio_thresh}")
    gi = float(gt[i[0], i[1]])
    gj = float(gt[j[0], j[1]])
    if gi <= 0 or gj <= 0:
        raise ValueError(f"depth must be strictly positive, got {gi} and {gj}")
    if max(gi, gj) / min(gi, gj) <= ratio_thresh:
        return 0
    return 1 if gi < gj else -1


# ---------------------------------------------------------------------------
# location-bias statistics

@dataclass
class BiasReport:
    """Agreement of coordinate-only rules with the labeled relations.

    Tied pairs (a rule that cannot decide) are credited 0.5, the expected
    agreement of a fair coin. Pairs labeled equal are skipped entirely.
    """
    lower_point: float
    center_proximity: float
    left_point: float
    n_pairs: int
    n_skipped_equal: int
    ties: dict = field(default_factory=dict)


def _rule_agreement(preds: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    ties = int((preds == 0).sum())
    agree = float((preds == labels).sum()) + 0.5 * ties
    return agree / len(labels), ties


def bias_statistics(records, image_shape: tuple[int, int]) -> BiasReport:
    """Score the lower-point, center-proximity, and left-point rules.

    `records` is an iterable of PairQuery with relation labels; rules
    predict which point is closer from coordinates alone.
    """
    records = list(records)
    if not records:
        raise ValueError("bias_statistics needs a nonempty dataset")
    h, w = image_shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    labeled = [q for q in records if q.r != 0]
    n_skipped = len(records) - len(labeled)
    if not labeled:
        raise ValueError("bias_statistics needs at least one pair labeled +1/-1")
    y1 = np.array([q.i[0] for q in labeled], dtype=np.float64)
    x1 = np.array([q.i[1] for q in labeled], dtype=np.float64)
    y2 = np.array([q.j[0] for q in labeled], dtype=np.float64)
    x2 = np.array([q.j[1] for q in labeled], dtype=np.float64)
    labels = np.array([q.r for q in labeled])

    lower = np.sign(y1 - y2).astype(int)  # larger row index = lower = closer
    d1 = np.hypot(y1 - cy, x1 - cx)
    d2 = np.hypot(y2 - cy, x2 - cx)
    center = np.sign(d2 - d1).astype(int)  # nearer the center = closer
    left = np.sign(x2 - x1).astype(int)  # smaller column = closer

    lower_rate, lower_ties = _rule_agreement(lower, labels)
    center_rate, center_ties = _rule_agreement(center, labels)
    left_rate, left_ties = _rule_agreement(left, labels)
    return BiasReport(
        lower_point=lower_rate, center_proximity=center_rate, left_point=left_rate,
        n_pairs=len(labeled), n_skipped_equal=n_skipped,
        ties={"lower_point": lower_ties, "center_proximity": center_ties,
              "left_point": left_ties})


# ---------------------------------------------------------------------------
# pair file io

def write_pairs(path, records) -> None:
    """Write (image_id, PairQuery) records in the interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(PAIR_HEADER + "\n")
        for image_id, q in records:
            if "," in image_id:
                raise ValueError(f"image id may not contain commas: {image_id!r}")
            f.write(f"{image_id},{q.i[0]},{q.i[1]},{q.j[0]},{q.j[1]},{q.r}\n")


def read_pairs(path) -> list[tuple[str, PairQuery]]:
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != PAIR_HEADER:
            raise ValueError(f"bad pair file header: {header!r}")
        for ln, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
            image_id, y1, x1, y2, x2, r = parts
            out.append((image_id, PairQuery((int(y1), int(x1)), (int(y2), int(x2)), int(r))))
    return out


def group_pairs(records) -> dict[str, list[PairQuery]]:
    grouped: dict[str, list[PairQuery]] = {}
    for image_id, q in records:
        grouped.setdefault(image_id, []).append(q)
    return grouped


def queries_to_arrays(queries) -> tuple[np.ndarray, ...]:
    """Split queries into (y1, x1, y2, x2, r) int arrays for vector math."""
    y1 = np.array([q.i[0] for q in queries], dtype=np.intp)
    x1 = np.array([q.i[1] for q in queries], dtype=np.intp)
    y2 = np.array([q.j[0] for q in queries], dtype=np.intp)
    x2 = np.array([q.j[1] for q in queries], dtype=np.intp)
    r = np.array([q.r for q in queries], dtype=np.int64)
    return y1, x1, y2, x2, r
