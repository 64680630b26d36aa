"""Per-parameter encoders and decoders.

Four independent encoders map an image to one embedding per scene
parameter; four decoders map each embedding back to that parameter, squashed
into its declared range.
"""

import logging
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from .ad import ops
from .ad.tensor import ShapeError, Tensor, as_tensor
from .config import ArchConfig
from .layers import Conv2d, ConvTranspose2d, Linear, Module
from .scene import MAX_ROTATION, MAX_TRANSLATION, STANDOFF, SceneParams
from .util.seeding import rng_from_seed

logger = logging.getLogger(__name__)

BLOCKS = ("geom", "alb", "cam", "light")
DEFAULT_BLOCKS = ("geom", "alb")

# Keeps squashed outputs strictly inside their ranges, also in float32
SQUASH_MARGIN = 0.999


@dataclass
class FeatureSet:
    """One (B, F) embedding per scene parameter."""

    z_geom: Tensor
    z_alb: Tensor
    z_cam: Tensor
    z_light: Tensor

    def block(self, name: str) -> Tensor:
        if name not in BLOCKS:
            raise ValueError(f"unknown feature block '{name}' (choose from {', '.join(BLOCKS)})")
        return getattr(self, f"z_{name}")

    def blocks(self) -> dict[str, Tensor]:
        return {name: self.block(name) for name in BLOCKS}

    def numpy(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.blocks().items()}

    def detach(self) -> "FeatureSet":
        return FeatureSet(*(t.detach() for t in self.blocks().values()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.blocks().values())


def parse_blocks(spec: str | Iterable[str]) -> tuple[str, ...]:
    """'geom,alb' -> ('geom', 'alb'), validated and put in canonical order."""
    names = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else list(spec)
    names = [n for n in names if n]
    if not names:
        raise ValueError("at least one feature block is required")
    unknown = [n for n in names if n not in BLOCKS]
    if unknown:
        raise ValueError(f"unknown feature block(s) {unknown} (choose from {', '.join(BLOCKS)})")
    return tuple(b for b in BLOCKS if b in names)


def extract_representation(z: FeatureSet, blocks: Iterable[str] = DEFAULT_BLOCKS) -> Tensor:
    """Stack the selected blocks in the fixed order geom, alb, cam, light."""
    chosen = parse_blocks(blocks)
    return ops.concatenate([z.block(b) for b in chosen], axis=-1)


def _squash(x: Tensor, center: Any, half_width: Any) -> Tensor:
    return ops.tanh(x) * (np.asarray(half_width) * SQUASH_MARGIN) + np.asarray(center)


class Encoder(Module):
    """Stride-2 conv blocks with relu, global average pool, linear to F."""

    def __init__(self, channels: tuple[int, ...], feature_dim: int, rng: np.random.Generator):
        widths = (3,) + tuple(channels)
        self.convs = [
            Conv2d(widths[i], widths[i + 1], 4, rng, stride=2, padding=1)
            for i in range(len(channels))
        ]
        self.head = Linear(widths[-1], feature_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        # (B, H, W, 3) in [0, 1] -> NCHW in [-1, 1]
        h = ops.transpose(x * 2.0 - 1.0, (0, 3, 1, 2))
        for conv in self.convs:
            h = ops.relu(conv(h))
        return self.head(ops.mean(h, axis=(2, 3)))


class MapDecoder(Module):
    """Linear to a coarse grid, then stride-2 transposed convs up to full size."""

    def __init__(
        self,
        feature_dim: int,
        out_channels: int,
        size: int,
        channels: tuple[int, ...],
        rng: np.random.Generator,
    ):
        self.base = size // 2 ** len(channels)
        self.c0 = channels[0]
        self.trunk = Linear(feature_dim, self.c0 * self.base * self.base, rng)
        widths = tuple(channels) + (out_channels,)
        self.deconvs = [
            ConvTranspose2d(widths[i], widths[i + 1], 4, rng, stride=2, padding=1)
            for i in range(len(channels))
        ]

    def forward(self, z: Tensor) -> Tensor:
        b = z.shape[0]
        h = ops.relu(ops.reshape(self.trunk(z), (b, self.c0, self.base, self.base)))
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            if i < len(self.deconvs) - 1:
                h = ops.relu(h)
        return ops.transpose(h, (0, 2, 3, 1))


class VectorDecoder(Module):
    """Two-layer perceptron."""

    def __init__(self, feature_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.hidden = Linear(feature_dim, hidden, rng)
        self.out = Linear(hidden, out_dim, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.out(ops.relu(self.hidden(z)))


_LIGHT_CENTER = np.array([0.5, 0.5, 0.0, 0.0])
_LIGHT_HALF = np.array([0.5, 0.5, 90.0, 90.0])
_CAMERA_HALF = np.array([MAX_ROTATION] * 3 + [MAX_TRANSLATION] * 3)


class InverseRenderer(Module):
    """Encoders E and decoders D for geometry, albedo, camera and light."""

    def __init__(
        self,
        image_size: int = 64,
        feature_dim: int = 256,
        arch: ArchConfig | None = None,
        seed: int = 0,
    ):
        arch = arch or ArchConfig()
        n_blocks = len(arch.enc_channels)
        if image_size % 2 ** n_blocks or image_size < 2 ** n_blocks:
            raise ValueError(f"image_size {image_size} is not divisible by {2 ** n_blocks}")
        self.image_size = image_size
        self.feature_dim = feature_dim
        self.arch_config = arch
        rng = rng_from_seed(seed)

        enc = tuple(arch.enc_channels)
        dec = tuple(arch.dec_channels)
        self.enc_geom = Encoder(enc, feature_dim, rng)
        self.enc_alb = Encoder(enc, feature_dim, rng)
        self.enc_cam = Encoder(enc, feature_dim, rng)
        self.enc_light = Encoder(enc, feature_dim, rng)
        self.dec_geom = MapDecoder(feature_dim, 1, image_size, dec, rng)
        self.dec_alb = MapDecoder(feature_dim, 3, image_size, dec, rng)
        self.dec_cam = VectorDecoder(feature_dim, arch.mlp_hidden, 6, rng)
        self.dec_light = VectorDecoder(feature_dim, arch.mlp_hidden, 4, rng)
        logger.debug(f"InverseRenderer: {self.num_parameters()} parameters")

    @property
    def arch(self) -> dict[str, Any]:
        return {
            "image_size": self.image_size,
            "feature_dim": self.feature_dim,
            "enc_channels": list(self.arch_config.enc_channels),
            "dec_channels": list(self.arch_config.dec_channels),
            "mlp_hidden": self.arch_config.mlp_hidden,
            "kernel": 4,
            "stride": 2,
            "num_parameters": self.num_parameters(),
        }

    def encoder(self, block: str) -> Encoder:
        return getattr(self, f"enc_{block}")

    def encoder_parameters(self) -> list[Tensor]:
        return [p for b in BLOCKS for p in self.encoder(b).parameters()]

    def encode(self, x: Any) -> FeatureSet:
        """Images (B, H, W, 3) or (H, W, 3) in [0, 1] -> FeatureSet of (B, F) blocks."""
        x = as_tensor(x)
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1:] != (self.image_size, self.image_size, 3):
            raise ShapeError("encode", x.shape, (self.image_size, self.image_size, 3))
        return FeatureSet(*(self.encoder(b)(x) for b in BLOCKS))

    def decode(self, z: FeatureSet) -> SceneParams:
        s = self.image_size
        b = z.z_geom.shape[0]
        geom = ops.reshape(self.dec_geom(z.z_geom), (b, s, s))
        depth = _squash(geom, STANDOFF, 0.1 * STANDOFF)
        albedo = ops.sigmoid(self.dec_alb(z.z_alb)) * SQUASH_MARGIN + 0.5 * (1.0 - SQUASH_MARGIN)
        camera = _squash(self.dec_cam(z.z_cam), 0.0, _CAMERA_HALF)
        light = _squash(self.dec_light(z.z_light), _LIGHT_CENTER, _LIGHT_HALF)
        return SceneParams(depth=depth, albedo=albedo, light=light, camera=camera)

    def forward(self, x: Any) -> tuple[FeatureSet, SceneParams]:
        z = self.encode(x)
        return z, self.decode(z)
