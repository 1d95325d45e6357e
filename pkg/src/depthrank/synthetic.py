"""Procedural scenes with exact ground-truth depth.

A scene is a sloped ground plane plus spheres and boxes composited with a
z-buffer (smaller depth wins). Shading is Lambertian from depth-derived
normals with a fixed light, per-primitive albedo, and a depth attenuation
term so that image intensity carries a local depth cue. Depth values live
in [1, 10] arbitrary units.

Depth rasters are stored as a 16-byte header (8-byte magic, uint32 H,
uint32 W, little-endian) followed by float32 row-major values. Images are
stored as PNG.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .sampling import (PairQuery, SamplerConfig, relation_from_depth, sample_pair,
                       write_pairs)

DEPTH_MAGIC = b"DRNKDMAP"

AMBIENT = 0.15
LIGHT_DIR = (0.35, 0.45, 0.82)  # (x, y, z), toward the camera
ATTENUATION = 0.25  # intensity falls as 1 / (1 + ATTENUATION * (depth - 1))


@dataclass(frozen=True)
class GroundPlane:
    """Depth ramp from z_far at the top row to z_near at the bottom row.

    The ramp is exponential in the row index, so the depth ratio between
    adjacent rows is constant; vertical pair labels then do not flip along
    the ramp for a fixed equality band.
    """
    z_near: float = 1.5
    z_far: float = 9.5
    albedo: tuple[float, float, float] = (0.55, 0.65, 0.5)


@dataclass(frozen=True)
class Sphere:
    cy: float
    cx: float
    radius: float
    depth: float  # depth of the nearest (center) point
    albedo: tuple[float, float, float] = (0.8, 0.4, 0.35)


@dataclass(frozen=True)
class Box:
    y0: int
    x0: int
    y1: int  # exclusive
    x1: int
    depth: float
    albedo: tuple[float, float, float] = (0.4, 0.5, 0.85)


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    plane: GroundPlane = GroundPlane()
    objects: tuple = ()
    noise_sigma: float = 0.004
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"empty canvas {self.height}x{self.width}")


def _plane_depth(spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    t = np.linspace(1.0, 0.0, h, dtype=np.float64) if h > 1 else np.zeros(1)
    col = spec.plane.z_near * (spec.plane.z_far / spec.plane.z_near) ** t
    return np.repeat(col[:, None], w, axis=1)


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render (image 3xHxW float32 in [0,1], depth HxW float32 > 0)."""
    h, w = spec.height, spec.width
    depth = _plane_depth(spec)
    albedo = np.empty((h, w, 3), dtype=np.float64)
    albedo[:] = spec.plane.albedo
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    for obj in spec.objects:
        if isinstance(obj, Sphere):
            d2 = (yy - obj.cy) ** 2 + (xx - obj.cx) ** 2
            inside = d2 <= obj.radius ** 2
            # Bulge: nearest at the center, receding toward the rim.
            sag = 1.0 - np.sqrt(np.maximum(1.0 - d2 / max(obj.radius, 1e-9) ** 2, 0.0))
            zs = obj.depth * (1.0 + 0.25 * sag)
            closer = inside & (zs < depth)
            depth[closer] = zs[closer]
            albedo[closer] = obj.albedo
        elif isinstance(obj, Box):
            region = np.zeros((h, w), dtype=bool)
            region[obj.y0:obj.y1, obj.x0:obj.x1] = True
            closer = region & (obj.depth < depth)
            depth[closer] = obj.depth
            albedo[closer] = obj.albedo
        else:
            raise TypeError(f"unknown primitive {type(obj).__name__}")

    if (depth <= 0).any():
        raise ValueError("rendered depth must be strictly positive")

    gy, gx = np.gradient(depth)
    nz = np.ones_like(depth)
    norm = np.sqrt(gx * gx + gy * gy + nz * nz)
    lx, ly, lz = LIGHT_DIR
    lamb = np.maximum((-gx * lx - gy * ly + nz * lz) / norm, 0.0)
    shade = AMBIENT + (1.0 - AMBIENT) * lamb
    atten = 1.0 / (1.0 + ATTENUATION * (depth - 1.0))

    rng = np.random.default_rng(spec.seed)
    img = albedo.transpose(2, 0, 1) * (shade * atten)[None]
    if spec.noise_sigma:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), depth.astype(np.float32)


def random_scene(height: int, width: int, seed: int, max_objects: int = 3) -> SceneSpec:
    """A randomized scene spec whose primitives are all partly visible."""
    rng = np.random.default_rng(seed)
    # z_far/z_near capped below 9x keeps the adjacent-row depth ratio of a
    # 48-row ramp under 1.05 for every scene.
    plane = GroundPlane(
        z_near=float(rng.uniform(1.05, 1.5)),
        z_far=float(rng.uniform(8.0, 9.4)),
        albedo=tuple(rng.uniform(0.45, 0.75, size=3)),
    )
    spec = SceneSpec(height, width, plane=plane, objects=(), seed=seed)
    plane_z = _plane_depth(spec)
    objects = []
    for _ in range(int(rng.integers(1, max_objects + 1))):
        albedo = tuple(rng.uniform(0.25, 0.95, size=3))
        if rng.random() < 0.6:
            cy = float(rng.uniform(0.2 * height, 0.95 * height))
            cx = float(rng.uniform(0.0, width - 1))
            radius = float(rng.uniform(0.08, 0.22) * min(height, width))
            local = plane_z[min(int(cy), height - 1), min(int(cx), width - 1)]
            obj = Sphere(cy, cx, radius, depth=float(local * rng.uniform(0.35, 0.75)),
                         albedo=albedo)
        else:
            bh = int(rng.uniform(0.12, 0.35) * height)
            bw = int(rng.uniform(0.12, 0.35) * width)
            y0 = int(rng.integers(0, max(height - bh, 1)))
            x0 = int(rng.integers(0, max(width - bw, 1)))
            local = plane_z[min(y0 + bh, height - 1), x0]
            obj = Box(y0, x0, y0 + bh, x0 + bw, depth=float(local * rng.uniform(0.35, 0.75)),
                      albedo=albedo)
        objects.append(obj)
    spec = SceneSpec(height, width, plane=plane, objects=tuple(objects), seed=seed)
    _, depth = render_scene(spec)
    visible = [obj for obj in objects if _owns_pixels(spec, depth, obj)]
    if len(visible) != len(objects):
        spec = SceneSpec(height, width, plane=plane, objects=tuple(visible), seed=seed)
    return spec


def _owns_pixels(spec: SceneSpec, depth: np.ndarray, obj) -> bool:
    if isinstance(obj, Sphere):
        yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
        inside = (yy - obj.cy) ** 2 + (xx - obj.cx) ** 2 <= obj.radius ** 2
        target = obj.depth * (1.0 + 0.25)  # anywhere at or in front of the rim
        return bool((inside & (depth <= target + 1e-9)).any())
    region = depth[obj.y0:obj.y1, obj.x0:obj.x1]
    return bool((region <= obj.depth + 1e-9).any())


# ---------------------------------------------------------------------------
# file io

def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError(f"depth raster must be HxW, got shape {depth.shape}")
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", depth.shape[0], depth.shape[1]))
        f.write(depth.astype("<f4", copy=False).tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(DEPTH_MAGIC))
        if magic != DEPTH_MAGIC:
            raise ValueError(f"not a depth raster: bad magic {magic!r}")
        h, w = struct.unpack("<II", f.read(8))
        raw = f.read(4 * h * w)
        if len(raw) != 4 * h * w:
            raise ValueError("depth raster truncated")
        return np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()


def write_image(path, img: np.ndarray) -> None:
    """img is 3xHxW float in [0, 1]; stored as 8-bit PNG."""
    arr = (np.clip(np.asarray(img), 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# dataset driver

@dataclass
class DatasetManifest:
    image_ids: list[str]
    pair_file: str
    n_pairs: int
    sampler: dict = field(default_factory=dict)


def make_dataset(out_dir, n_images: int, sampler_cfg: SamplerConfig,
                 pairs_per_image: int | None = None, seed: int = 0,
                 max_objects: int = 3) -> DatasetManifest:
    """Render scenes, sample labeled queries, and write the pair file.

    Layout under out_dir: `img_<id>.png`, `dep_<id>.dmp`, `pairs.csv`.
    """
    if n_images < 1:
        raise ValueError(f"need at least one image, got {n_images}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = pairs_per_image if pairs_per_image is not None else sampler_cfg.pairs_per_image
    rng = np.random.default_rng(sampler_cfg.seed)
    records: list[tuple[str, PairQuery]] = []
    image_ids = []
    for n in range(n_images):
        image_id = f"{n:05d}"
        spec = random_scene(sampler_cfg.height, sampler_cfg.width,
                            seed=seed + n, max_objects=max_objects)
        img, depth = render_scene(spec)
        write_image(out / f"img_{image_id}.png", img)
        write_depth(out / f"dep_{image_id}.dmp", depth)
        image_ids.append(image_id)
        for _ in range(k):
            q = sample_pair(sampler_cfg, rng)
            r = relation_from_depth(depth, q.i, q.j, sampler_cfg.ratio_threshold)
            records.append((image_id, PairQuery(q.i, q.j, r)))
    pair_file = out / "pairs.csv"
    write_pairs(pair_file, records)
    return DatasetManifest(
        image_ids=image_ids, pair_file=str(pair_file), n_pairs=len(records),
        sampler={"strategy": sampler_cfg.strategy, "pairs_per_image": k,
                 "seed": sampler_cfg.seed, "scene_seed": seed})
