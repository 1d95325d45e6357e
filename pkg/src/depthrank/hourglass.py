"""Multi-scale encoder-decoder ("hourglass") built from inception blocks.

Each inception block concatenates four branches: a 1x1 convolution and
three k x k convolutions (k2, k3, k4) that first reduce channels through a
1x1 bottleneck. The hourglass pairs an average-pooling encoder with a
nearest-upsampling decoder and adds a per-scale skip branch into the
decoder path. A final 3x3 convolution maps to a single-channel score map
at the input resolution.

The block wiring is data (HourglassConfig), not code, so alternative
layouts are a config edit. The default tables reconstruct a symmetric
net whose per-block channel counts follow the standard A-G catalog below.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor


@dataclass(frozen=True)
class InceptionParams:
    in_ch: int
    out_ch: int
    inter_dim: int
    k2: int
    k3: int
    k4: int

    def __post_init__(self):
        if self.out_ch % 4:
            raise ValueError(f"out_ch must be divisible by 4, got {self.out_ch}")
        for k in (self.k2, self.k3, self.k4):
            if k % 2 == 0 or k < 1:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")
        if min(self.in_ch, self.out_ch, self.inter_dim) < 1:
            raise ValueError("channel counts must be positive")

    def scaled(self, factor: Fraction) -> "InceptionParams":
        return replace(self, in_ch=_scale_ch(self.in_ch, factor),
                       out_ch=_scale_ch(self.out_ch, factor),
                       inter_dim=max(1, int(self.inter_dim * factor)))


# Catalog of block types: in/out channels, 1x1 bottleneck width, and the
# three square kernel sizes of the non-1x1 branches.
BLOCK_CATALOG: dict[str, InceptionParams] = {
    "A": InceptionParams(128, 64, 64, 3, 7, 11),
    "B": InceptionParams(128, 128, 32, 3, 5, 7),
    "C": InceptionParams(128, 128, 64, 3, 7, 11),
    "D": InceptionParams(128, 256, 32, 3, 5, 7),
    "E": InceptionParams(256, 256, 32, 3, 5, 7),
    "F": InceptionParams(256, 256, 64, 3, 7, 11),
    "G": InceptionParams(256, 128, 32, 3, 5, 7),
}


def _scale_ch(ch: int, factor: Fraction) -> int:
    scaled = Fraction(ch) * factor
    if scaled.denominator != 1:
        raise ValueError(f"scale factor {factor} does not keep {ch} channels integral")
    val = int(scaled)
    if val <= 0 or val % 4:
        raise ValueError(f"scaled channel width {val} must be positive and divisible by 4")
    return val


@dataclass(frozen=True)
class HourglassConfig:
    """Block layout of the network, indexed by scale (0 = full resolution)."""
    n_scales: int = 4
    scale_factor: Fraction = Fraction(1)
    enc: tuple[str, ...] = ("B", "D", "E", "E")
    bottom: tuple[str, ...] = ("E", "F")
    skip: tuple[str, ...] = ("C", "E", "E", "E")
    dec: tuple[str, ...] = ("A", "G", "F", "F")
    stem_out: int = 128
    stem_kernel: int = 7
    head_kernel: int = 3

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        for name, table in (("enc", self.enc), ("skip", self.skip), ("dec", self.dec)):
            if len(table) != self.n_scales:
                raise ValueError(f"{name} table has {len(table)} entries, need {self.n_scales}")
        for bid in self.enc + self.bottom + self.skip + self.dec:
            if bid not in BLOCK_CATALOG:
                raise ValueError(f"unknown block id {bid!r}")

    def block(self, bid: str) -> InceptionParams:
        return BLOCK_CATALOG[bid].scaled(self.scale_factor)

    @property
    def stem_channels(self) -> int:
        return _scale_ch(self.stem_out, self.scale_factor)

    def validate_channels(self) -> None:
        """Walk the wiring and check every block's input width matches."""
        ch = self.stem_channels
        for i, bid in enumerate(self.enc):
            p = self.block(bid)
            if p.in_ch != ch:
                raise ValueError(f"enc[{i}]={bid} expects {p.in_ch} channels, gets {ch}")
            ch = p.out_ch
        enc_out = [self.block(b).out_ch for b in self.enc]
        for i, bid in enumerate(self.bottom):
            p = self.block(bid)
            if p.in_ch != ch:
                raise ValueError(f"bottom[{i}]={bid} expects {p.in_ch} channels, gets {ch}")
            ch = p.out_ch
        for i in reversed(range(self.n_scales)):
            sp = self.block(self.skip[i])
            if sp.in_ch != enc_out[i]:
                raise ValueError(
                    f"skip[{i}]={self.skip[i]} expects {sp.in_ch} channels, gets {enc_out[i]}")
            if sp.out_ch != ch:
                raise ValueError(
                    f"skip[{i}]={self.skip[i]} yields {sp.out_ch} channels, decoder carries {ch}")
            dp = self.block(self.dec[i])
            if dp.in_ch != ch:
                raise ValueError(f"dec[{i}]={self.dec[i]} expects {dp.in_ch} channels, gets {ch}")
            ch = dp.out_ch

    def head_in_channels(self) -> int:
        return self.block(self.dec[0]).out_ch


def config_to_text(config: HourglassConfig, extras: dict | None = None) -> str:
    """Serialize a config as `key = value` lines."""
    lines = [
        f"n_scales = {config.n_scales}",
        f"scale_factor = {config.scale_factor}",
        f"enc = {','.join(config.enc)}",
        f"bottom = {','.join(config.bottom)}",
        f"skip = {','.join(config.skip)}",
        f"dec = {','.join(config.dec)}",
        f"stem_out = {config.stem_out}",
        f"stem_kernel = {config.stem_kernel}",
        f"head_kernel = {config.head_kernel}",
    ]
    for key, value in (extras or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> tuple[HourglassConfig, dict]:
    """Parse `key = value` lines ('#' comments allowed).

    Keys the network does not own (e.g. train.epochs) are returned in the
    extras dict as strings.
    """
    values: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()

    def take(key, default):
        return values.pop(key, default)

    base = HourglassConfig()
    blocks = {name: tuple(take(name, ",".join(getattr(base, name))).split(","))
              for name in ("enc", "bottom", "skip", "dec")}
    config = HourglassConfig(
        n_scales=int(take("n_scales", base.n_scales)),
        scale_factor=Fraction(take("scale_factor", base.scale_factor)),
        stem_out=int(take("stem_out", base.stem_out)),
        stem_kernel=int(take("stem_kernel", base.stem_kernel)),
        head_kernel=int(take("head_kernel", base.head_kernel)),
        **blocks,
    )
    return config, values


def desk_config(n_scales: int = 3, scale_factor: Fraction = Fraction(1, 8)) -> HourglassConfig:
    """Small configuration that trains in minutes on a CPU."""
    full = HourglassConfig()
    return HourglassConfig(
        n_scales=n_scales,
        scale_factor=scale_factor,
        enc=full.enc[:n_scales],
        bottom=full.bottom,
        skip=full.skip[:n_scales],
        dec=full.dec[:n_scales],
    )


# ---------------------------------------------------------------------------
# parameter construction

def _he_conv(rng: np.random.Generator, out_ch: int, in_ch: int, k: int, dtype) -> np.ndarray:
    fan_in = in_ch * k * k
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((out_ch, in_ch, k, k)) * std).astype(dtype)


class InceptionBlock:
    """Four parallel convolution branches concatenated on the channel axis."""

    def __init__(self, params: InceptionParams, rng: np.random.Generator,
                 registry: "OrderedDict[str, Tensor]", prefix: str, dtype=np.float32):
        self.params = params
        self._convs: list[list[tuple[Tensor, Tensor, int]]] = []
        quarter = params.out_ch // 4

        def make(name: str, out_c: int, in_c: int, k: int) -> tuple[Tensor, Tensor, int]:
            w = Tensor(_he_conv(rng, out_c, in_c, k, dtype), name=f"{prefix}.{name}.w")
            b = Tensor(np.zeros(out_c, dtype=dtype), name=f"{prefix}.{name}.b")
            registry[w.name] = w
            registry[b.name] = b
            return w, b, k

        self._convs.append([make("b1", quarter, params.in_ch, 1)])
        for bi, k in enumerate((params.k2, params.k3, params.k4), start=2):
            reduce = make(f"b{bi}r", params.inter_dim, params.in_ch, 1)
            spatial = make(f"b{bi}", quarter, params.inter_dim, k)
            self._convs.append([reduce, spatial])

    def __call__(self, x: Tensor) -> Tensor:
        outs = []
        for branch in self._convs:
            h = x
            for w, b, k in branch:
                h = T.relu(T.conv2d(h, w, b, stride=1, padding=(k - 1) // 2))
            outs.append(h)
        return T.concat_channels(outs)


class Model:
    """Hourglass network: named parameters plus the config that shaped them."""

    def __init__(self, config: HourglassConfig, seed: int = 0, dtype=np.float32):
        config.validate_channels()
        self.config = config
        self.dtype = dtype
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        rng = np.random.default_rng(seed)

        def conv_param(name: str, out_c: int, in_c: int, k: int) -> tuple[Tensor, Tensor]:
            w = Tensor(_he_conv(rng, out_c, in_c, k, dtype), name=f"{name}.w")
            b = Tensor(np.zeros(out_c, dtype=dtype), name=f"{name}.b")
            self.params[w.name] = w
            self.params[b.name] = b
            return w, b

        self.stem = conv_param("stem", config.stem_channels, 3, config.stem_kernel)
        self.enc_blocks = [InceptionBlock(config.block(b), rng, self.params, f"enc{i}", dtype)
                           for i, b in enumerate(config.enc)]
        self.bottom_blocks = [InceptionBlock(config.block(b), rng, self.params, f"bottom{i}", dtype)
                              for i, b in enumerate(config.bottom)]
        self.skip_blocks = [InceptionBlock(config.block(b), rng, self.params, f"skip{i}", dtype)
                            for i, b in enumerate(config.skip)]
        self.dec_blocks = [InceptionBlock(config.block(b), rng, self.params, f"dec{i}", dtype)
                           for i, b in enumerate(config.dec)]
        self.head = conv_param("head", 1, config.head_in_channels(), config.head_kernel)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, image: Tensor) -> Tensor:
        """Map (N, 3, H, W) to a (N, 1, H, W) score map."""
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {image.data.shape}")
        n_scales = self.config.n_scales
        h, w = image.data.shape[2:]
        div = 1 << n_scales
        if h % div or w % div:
            raise ValueError(
                f"input {h}x{w} not divisible by 2^{n_scales}; pad to "
                f"{-(-h // div) * div}x{-(-w // div) * div}")

        sw, sb = self.stem
        x = T.relu(T.conv2d(image, sw, sb, padding=(self.config.stem_kernel - 1) // 2))
        enc_feats = []
        for block in self.enc_blocks:
            x = block(x)
            enc_feats.append(x)
            x = T.avgpool2x(x)
        for block in self.bottom_blocks:
            x = block(x)
        for i in reversed(range(n_scales)):
            x = T.upsample2x_nearest(x)
            x = T.add(x, self.skip_blocks[i](enc_feats[i]))
            x = self.dec_blocks[i](x)
        hw, hb = self.head
        # No activation on the head: the score map must be signed.
        return T.conv2d(x, hw, hb, padding=(self.config.head_kernel - 1) // 2)

    __call__ = forward

    def predict(self, image: np.ndarray) -> np.ndarray:
        """Forward a single 3xHxW image array to an HxW score map."""
        out = self.forward(Tensor(np.asarray(image, dtype=self.dtype)[None]))
        return out.data[0, 0]

    def save(self, path) -> None:
        save_checkpoint(path, OrderedDict((k, v.data) for k, v in self.params.items()))

    def load(self, path) -> None:
        stored = load_checkpoint(path)
        if list(stored) != list(self.params):
            raise ValueError("checkpoint parameter names do not match this config")
        for name, arr in stored.items():
            if arr.shape != self.params[name].data.shape:
                raise ValueError(
                    f"checkpoint shape {arr.shape} != model shape "
                    f"{self.params[name].data.shape} for {name!r}")
            self.params[name].data = arr.astype(self.dtype)


def parameter_count(config: HourglassConfig) -> int:
    """Closed-form parameter total for a config (weights + biases)."""

    def conv(out_c, in_c, k):
        return out_c * in_c * k * k + out_c

    def block(p: InceptionParams):
        quarter = p.out_ch // 4
        total = conv(quarter, p.in_ch, 1)
        for k in (p.k2, p.k3, p.k4):
            total += conv(p.inter_dim, p.in_ch, 1) + conv(quarter, p.inter_dim, k)
        return total

    total = conv(config.stem_channels, 3, config.stem_kernel)
    for bid in config.enc + config.bottom + config.skip + config.dec:
        total += block(config.block(bid))
    total += conv(1, config.head_in_channels(), config.head_kernel)
    return total


def trace_output_shape(config: HourglassConfig, h: int, w: int) -> tuple[int, int, int]:
    """Symbolic shape walk through the block tables; no tensor math.

    Returns (channels, height, width) of the network output for an HxW
    input, raising on any wiring inconsistency.
    """
    config.validate_channels()  # checks every block's channel widths
    div = 1 << config.n_scales
    if h % div or w % div:
        raise ValueError(f"input {h}x{w} not divisible by 2^{config.n_scales}")
    hh, ww = h, w  # stem and inception blocks preserve spatial size
    sizes = []
    for _ in config.enc:
        sizes.append((hh, ww))
        hh, ww = hh // 2, ww // 2
    for i in reversed(range(config.n_scales)):
        hh, ww = hh * 2, ww * 2
        if (hh, ww) != sizes[i]:
            raise ValueError(f"decoder scale {i} size {hh}x{ww} != encoder {sizes[i]}")
    return 1, hh, ww  # head maps to one channel, same resolution
