"""Differentiable depth-map renderer.

Geometry and albedo live in a canonical frontal frame. Rendering shades the
canonical albedo with a Lambertian model, lifts every canonical pixel to 3-D
using its depth, moves it by the camera transform and splats its colour onto
the four nearest target pixels. Everything is built from ad ops, so images
are differentiable w.r.t. depth, albedo, light and camera.

All functions accept single scenes (depth H x W) or batches (B x H x W).
"""

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .ad import ops
from .ad.tensor import ShapeError, Tensor, as_tensor
from .config import RenderConfig
from .scene import SceneParams

logger = logging.getLogger(__name__)

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics shared by the canonical and target views."""

    size: int
    focal: float
    cx: float
    cy: float

    @classmethod
    def from_fov(cls, size: int, fov_deg: float = 30.0) -> "CameraIntrinsics":
        focal = 0.5 * size / math.tan(0.5 * fov_deg * _DEG)
        center = 0.5 * (size - 1)
        return cls(size=size, focal=focal, cx=center, cy=center)

    def rays(self) -> np.ndarray:
        """K^-1 (u, v, 1) per pixel, shape (size, size, 3); u is the column."""
        uu, vv = np.meshgrid(np.arange(self.size, dtype=np.float64), np.arange(self.size, dtype=np.float64))
        return np.stack(
            [(uu - self.cx) / self.focal, (vv - self.cy) / self.focal, np.ones_like(uu)],
            axis=-1,
        )


def _batch(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    """Add a leading batch axis when ``x`` has only ``ndim`` dims."""
    if x.ndim == ndim:
        return ops.reshape(x, (1,) + x.shape), True
    return x, False


def _unbatch(x: Tensor, single: bool) -> Tensor:
    return ops.reshape(x, x.shape[1:]) if single else x


def normals_from_depth(depth: Any, scale: float = 1.0) -> Tensor:
    """Unit normals normalize((-s dd/du, -s dd/dv, 1)) of a depth map.

    Central differences inside, one-sided at the borders.
    """
    depth, single = _batch(as_tensor(depth), 2)
    if depth.ndim != 3 or depth.shape[1] < 2 or depth.shape[2] < 2:
        raise ShapeError("normals_from_depth", depth.shape)
    du = ops.concatenate([
        depth[:, :, 1:2] - depth[:, :, 0:1],
        (depth[:, :, 2:] - depth[:, :, :-2]) * 0.5,
        depth[:, :, -1:] - depth[:, :, -2:-1],
    ], axis=2)
    dv = ops.concatenate([
        depth[:, 1:2, :] - depth[:, 0:1, :],
        (depth[:, 2:, :] - depth[:, :-2, :]) * 0.5,
        depth[:, -1:, :] - depth[:, -2:-1, :],
    ], axis=1)
    ones = Tensor(np.ones(depth.shape))
    normals = ops.l2_normalize(ops.stack([du * -scale, dv * -scale, ones], axis=-1), axis=-1)
    return _unbatch(normals, single)


def light_direction(pitch: Any, yaw: Any) -> Tensor:
    """l = (cos p sin y, sin p, cos p cos y) for angles in degrees."""
    p = as_tensor(pitch) * _DEG
    y = as_tensor(yaw) * _DEG
    cp = ops.cos(p)
    return ops.stack([cp * ops.sin(y), ops.sin(p), cp * ops.cos(y)], axis=-1)


def shade(albedo: Any, normals: Any, light: Any) -> Tensor:
    """Lambertian shading: albedo * clamp(k_amb + k_diff * max(0, n.l), 0, 1)."""
    albedo, single = _batch(as_tensor(albedo), 3)
    normals, _ = _batch(as_tensor(normals), 3)
    light, _ = _batch(as_tensor(light), 1)
    if albedo.shape != normals.shape or albedo.shape[-1] != 3 or light.shape != (albedo.shape[0], 4):
        raise ShapeError("shade", albedo.shape, normals.shape, light.shape)
    b = albedo.shape[0]
    direction = ops.reshape(light_direction(light[:, 2], light[:, 3]), (b, 1, 1, 3))
    cosine = ops.relu(ops.sum(normals * direction, axis=-1))
    k_amb = ops.reshape(light[:, 0], (b, 1, 1))
    k_diff = ops.reshape(light[:, 1], (b, 1, 1))
    intensity = ops.clamp(k_amb + k_diff * cosine, 0.0, 1.0)
    return _unbatch(albedo * ops.reshape(intensity, intensity.shape + (1,)), single)


def _matrix(rows: list[list[Tensor]]) -> Tensor:
    return ops.stack([ops.stack(row, axis=-1) for row in rows], axis=-2)


def rotation_matrix(angles: Any) -> Tensor:
    """R = Rz(rz) Ry(ry) Rx(rx) for (B, 3) angles in degrees; returns (B, 3, 3)."""
    angles = as_tensor(angles) * _DEG
    n = angles.shape[0]
    one, zero = Tensor(np.ones(n)), Tensor(np.zeros(n))
    cx, sx = ops.cos(angles[:, 0]), ops.sin(angles[:, 0])
    cy, sy = ops.cos(angles[:, 1]), ops.sin(angles[:, 1])
    cz, sz = ops.cos(angles[:, 2]), ops.sin(angles[:, 2])
    rx = _matrix([[one, zero, zero], [zero, cx, -sx], [zero, sx, cx]])
    ry = _matrix([[cy, zero, sy], [zero, one, zero], [-sy, zero, cy]])
    rz = _matrix([[cz, -sz, zero], [sz, cz, zero], [zero, zero, one]])
    return ops.matmul(rz, ops.matmul(ry, rx))


def reproject(
    canonical: Any,
    depth: Any,
    camera: Any,
    intr: CameraIntrinsics,
    cfg: RenderConfig,
) -> Tensor:
    """Warp a shaded canonical image into the camera's view by soft splatting.

    Each canonical pixel is lifted to p = d K^-1 (u, v, 1), rotated about the
    pivot (0, 0, pivot_depth), translated and projected. Its colour lands on
    the four surrounding target pixels with bilinear weights times a
    visibility weight exp(-(z' - z_near)/sigma_z), z_near being the nearest
    contribution at that target. Coverage (sum of bilinear weights) sets the
    opacity 1 - exp(-coverage/eps_w) over the background.
    """
    canonical, single = _batch(as_tensor(canonical), 3)
    depth, _ = _batch(as_tensor(depth), 2)
    camera, _ = _batch(as_tensor(camera), 1)
    b, h, w = depth.shape
    if (
        canonical.shape != (b, h, w, 3)
        or camera.shape != (b, 6)
        or h != intr.size
        or w != intr.size
    ):
        raise ShapeError("reproject", canonical.shape, depth.shape, camera.shape)
    hw = h * w
    n_pix = b * hw

    rays = intr.rays().reshape(1, hw, 3)
    points = ops.reshape(depth, (b, hw, 1)) * rays
    pivot = np.array([0.0, 0.0, cfg.pivot_depth])
    rot = rotation_matrix(camera[:, :3])
    moved = (
        ops.matmul(points - pivot, ops.transpose(rot, (0, 2, 1)))
        + pivot
        + ops.reshape(camera[:, 3:], (b, 1, 3))
    )
    x, y, z = moved[:, :, 0], moved[:, :, 1], moved[:, :, 2]

    valid = z.data > cfg.near
    z_safe = ops.where(valid, z, 1.0)
    u = x / z_safe * intr.focal + intr.cx
    v = y / z_safe * intr.focal + intr.cy
    u0 = np.floor(np.where(valid, u.data, -2.0))
    v0 = np.floor(np.where(valid, v.data, -2.0))
    fu = u - u0
    fv = v - v0
    base = (np.arange(b) * hw)[:, None]

    targets, masks, weights = [], [], []
    for dv in (0, 1):
        for du in (0, 1):
            col, row = u0 + du, v0 + dv
            inside = valid & (col >= 0) & (col <= w - 1) & (row >= 0) & (row <= h - 1)
            wu = fu if du else 1.0 - fu
            wv = fv if dv else 1.0 - fv
            weights.append(ops.reshape(ops.where(inside, wu * wv, 0.0), (n_pix,)))
            targets.append(np.where(inside, base + row * w + col, 0).astype(np.intp).reshape(-1))
            masks.append(inside.reshape(-1))
    index = np.concatenate(targets)
    mask = np.concatenate(masks)
    bilinear = ops.concatenate(weights)

    # Depth of the nearest contribution per target; constant within a target, so it cancels in the blend
    z_flat = ops.concatenate([ops.reshape(z, (n_pix,))] * 4)
    z_near = np.full(n_pix, np.inf)
    np.minimum.at(z_near, index[mask], z_flat.data[mask])
    reference = np.where(mask, z_near[index], z_flat.data)
    visibility = ops.exp((z_flat - reference) * (-1.0 / cfg.sigma_z))
    splat = bilinear * visibility

    colors = ops.concatenate([ops.reshape(canonical, (n_pix, 3))] * 4)
    numerator = ops.scatter_add(colors * ops.reshape(splat, (4 * n_pix, 1)), index, n_pix)
    denominator = ops.scatter_add(splat, index, n_pix)
    coverage = ops.scatter_add(bilinear, index, n_pix)

    color = numerator / (ops.reshape(denominator, (n_pix, 1)) + 1e-12)
    alpha = ops.reshape(1.0 - ops.exp(coverage * (-1.0 / cfg.eps_w)), (n_pix, 1))
    out = alpha * color + (1.0 - alpha) * cfg.background
    return _unbatch(ops.reshape(out, (b, h, w, 3)), single)


def render(params: SceneParams, intr: CameraIntrinsics, cfg: RenderConfig) -> Tensor:
    """reproject(shade(albedo, normals_from_depth(depth), light), depth, camera)."""
    normals = normals_from_depth(params.depth, cfg.normal_scale)
    canonical = shade(params.albedo, normals, params.light)
    return reproject(canonical, params.depth, params.camera, intr, cfg)


class Renderer:
    """Renderer bound to fixed intrinsics and settings."""

    def __init__(self, size: int, cfg: RenderConfig | None = None):
        self.cfg = cfg or RenderConfig()
        self.intr = CameraIntrinsics.from_fov(size, self.cfg.fov_deg)

    @property
    def size(self) -> int:
        return self.intr.size

    def __call__(self, params: SceneParams) -> Tensor:
        return render(params, self.intr, self.cfg)

    def canonical(self, params: SceneParams) -> Tensor:
        """The shaded image before the camera transform."""
        normals = normals_from_depth(params.depth, self.cfg.normal_scale)
        return shade(params.albedo, normals, params.light)
