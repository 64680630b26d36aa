"""Leave-one-out cycle contrastive objective.

One predicted scene parameter (light or camera) is perturbed, the scene is
re-rendered and re-encoded, and the feature blocks of the parameters that
were left unchanged are contrasted between the two encodings.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .ad import ops
from .ad.tensor import ShapeError, Tensor, as_tensor, no_grad
from .config import LooccConfig, LooccMode, PerturbRanges
from .nets import BLOCKS, FeatureSet, InverseRenderer
from .renderer import Renderer
from .scene import CAMERA_HIGH, CAMERA_LOW, LIGHT_HIGH, LIGHT_LOW, SceneParams

logger = logging.getLogger(__name__)

PERTURBABLE = ("light", "camera")

# Feature block that describes each perturbable parameter
_BLOCK_OF = {"light": "light", "camera": "cam"}


def choose_perturbed(mode: LooccMode, rng: np.random.Generator) -> str:
    """Light in mode L; uniform over light and camera in mode LV."""
    if mode == LooccMode.L:
        return "light"
    if mode == LooccMode.LV:
        return "camera" if rng.random() < 0.5 else "light"
    raise ValueError(f"perturbation needs a contrastive mode (got: {mode.value})")


def perturb(
    params: SceneParams,
    mode: LooccMode,
    rng: np.random.Generator,
    ranges: PerturbRanges | None = None,
    perturbed: str | None = None,
) -> tuple[SceneParams, str]:
    """Add uniform deltas to either light or camera of a (batched) scene.

    The choice is made once for the whole batch; deltas are drawn per
    sample. Camera deltas touch only rx (pitch) and ry (yaw). Perturbed
    values are clamped to their ranges; all other fields are returned as the
    same objects.
    """
    ranges = ranges or PerturbRanges()
    which = perturbed or choose_perturbed(mode, rng)
    if which not in PERTURBABLE:
        raise ValueError(f"perturbed must be one of {PERTURBABLE} (got: {which})")

    if which == "light":
        light = as_tensor(params.light)
        half = np.array([ranges.ambient, ranges.diffuse, ranges.light_pitch, ranges.light_yaw])
        delta = rng.uniform(-half, half, size=light.shape)
        return params.replace(light=ops.clamp(light + delta, LIGHT_LOW, LIGHT_HIGH)), which

    camera = as_tensor(params.camera)
    delta = np.zeros(camera.shape)
    delta[..., 0] = rng.uniform(-ranges.camera_pitch, ranges.camera_pitch, size=camera.shape[:-1])
    delta[..., 1] = rng.uniform(-ranges.camera_yaw, ranges.camera_yaw, size=camera.shape[:-1])
    return params.replace(camera=ops.clamp(camera + delta, CAMERA_LOW, CAMERA_HIGH)), which


@dataclass
class Cycle:
    """Intermediate results of one cyclic encoding."""

    z_x: FeatureSet
    z_aug: FeatureSet
    perturbed: str
    params: SceneParams
    params_aug: SceneParams
    x_recon: Tensor
    x_aug: Tensor


def cyclic_encode(
    x: Tensor,
    model: InverseRenderer,
    renderer: Renderer,
    cfg: LooccConfig,
    rng: np.random.Generator,
) -> Cycle:
    """Z_x = E(x); S = D(Z_x); S_aug = perturb(S); x_aug = R(S_aug); Z_aug = E(x_aug).

    With ``cfg.detach_aug`` the augmented image enters the second encoding
    as a constant.
    """
    z_x, params = model(x)
    x_recon = renderer(params)
    params_aug, which = perturb(params, cfg.mode, rng, cfg.perturb)
    x_aug = renderer(params_aug)
    if cfg.detach_aug:
        x_aug = x_aug.detach()
    z_aug = model.encode(x_aug)
    return Cycle(z_x, z_aug, which, params, params_aug, x_recon, x_aug)


def leave_one_out(z: FeatureSet, perturbed: str) -> Tensor:
    """L2-normalized stack of the three blocks not describing ``perturbed``."""
    if perturbed not in PERTURBABLE:
        raise ValueError(f"perturbed must be one of {PERTURBABLE} (got: {perturbed})")
    dropped = _BLOCK_OF[perturbed]
    kept = [z.block(b) for b in BLOCKS if b != dropped]
    return ops.l2_normalize(ops.concatenate(kept, axis=-1), axis=-1)


def nt_xent(u: Tensor, u_aug: Tensor, tau: float = 0.5) -> Tensor:
    """Normalized temperature-scaled cross entropy over the 2N views.

    Row i of ``u`` and row i of ``u_aug`` form a positive pair; every other
    view in the batch is a negative.
    """
    u, u_aug = as_tensor(u), as_tensor(u_aug)
    if u.ndim != 2 or u.shape != u_aug.shape:
        raise ShapeError("nt_xent", u.shape, u_aug.shape)
    n = u.shape[0]
    if n < 2:
        raise ValueError(f"nt_xent needs at least 2 pairs for negatives (got: {n})")
    if tau <= 0:
        raise ValueError(f"tau must be positive (got: {tau})")

    views = ops.l2_normalize(ops.concatenate([u, u_aug], axis=0), axis=-1)
    partners = ops.concatenate([views[n:], views[:n]], axis=0)
    logits = ops.matmul(views, ops.transpose(views, (1, 0))) * (1.0 / tau)
    # exclude self-similarity from the denominator
    logits = ops.where(np.eye(2 * n, dtype=bool), -1e9, logits)
    positive = ops.sum(views * partners, axis=-1) * (1.0 / tau)
    return ops.mean(ops.logsumexp(logits, axis=-1) - positive)


def reconstruction_loss(x: Tensor, x_recon: Tensor) -> Tensor:
    """Mean absolute error over all pixels and channels."""
    x, x_recon = as_tensor(x), as_tensor(x_recon)
    if x.shape != x_recon.shape:
        raise ShapeError("reconstruction_loss", x.shape, x_recon.shape)
    return ops.mean(ops.absolute(x - x_recon))


@dataclass
class LossTerms:
    recon: float
    cont: float
    total: float
    perturbed: str | None = None


def total_loss(
    x: Tensor,
    model: InverseRenderer,
    renderer: Renderer,
    cfg: LooccConfig,
    rng: np.random.Generator,
) -> tuple[Tensor, LossTerms]:
    """beta * L_recon + alpha * L_cont; the contrastive term is absent in mode NONE."""
    x = as_tensor(x)
    if cfg.mode == LooccMode.NONE:
        _, params = model(x)
        recon = reconstruction_loss(x, renderer(params))
        total = recon * cfg.beta
        return total, LossTerms(recon=recon.item(), cont=0.0, total=total.item())

    cycle = cyclic_encode(x, model, renderer, cfg, rng)
    recon = reconstruction_loss(x, cycle.x_recon)
    cont = nt_xent(
        leave_one_out(cycle.z_x, cycle.perturbed),
        leave_one_out(cycle.z_aug, cycle.perturbed),
        cfg.tau,
    )
    total = recon * cfg.beta + cont * cfg.alpha
    return total, LossTerms(
        recon=recon.item(), cont=cont.item(), total=total.item(), perturbed=cycle.perturbed
    )


def loo_invariance(
    model: InverseRenderer,
    renderer: Renderer,
    images: np.ndarray,
    rng: np.random.Generator,
    ranges: PerturbRanges | None = None,
    mode: LooccMode = LooccMode.LV,
    batch_size: int = 32,
) -> float:
    """Mean cosine similarity of leave-one-out stacks of x and its re-rendered augmentation."""
    cfg = LooccConfig(mode=mode, perturb=ranges or PerturbRanges(), detach_aug=True)
    sims = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            cycle = cyclic_encode(as_tensor(images[start:start + batch_size]), model, renderer, cfg, rng)
            a = leave_one_out(cycle.z_x, cycle.perturbed).data
            b = leave_one_out(cycle.z_aug, cycle.perturbed).data
            sims.append(np.sum(a * b, axis=-1))
    return float(np.mean(np.concatenate(sims))) if sims else float("nan")
