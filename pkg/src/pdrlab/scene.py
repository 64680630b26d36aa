"""Scene description types shared by the generator, renderer and networks."""

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

# Camera standoff d0; canonical depth lives in [0.9 d0, 1.1 d0]
STANDOFF = 1.0
DEPTH_MIN = 0.9 * STANDOFF
DEPTH_MAX = 1.1 * STANDOFF

# light = (k_ambient, k_diffuse, pitch deg, yaw deg)
LIGHT_LOW = np.array([0.0, 0.0, -90.0, -90.0])
LIGHT_HIGH = np.array([1.0, 1.0, 90.0, 90.0])

# camera = (rx, ry, rz deg, tx, ty, tz scene units)
MAX_ROTATION = 60.0
MAX_TRANSLATION = 0.3
CAMERA_LOW = np.array([-MAX_ROTATION] * 3 + [-MAX_TRANSLATION] * 3)
CAMERA_HIGH = np.array([MAX_ROTATION] * 3 + [MAX_TRANSLATION] * 3)

CANONICAL_LIGHT = np.array([0.5, 0.5, 0.0, 0.0])
CANONICAL_CAMERA = np.zeros(6)


@dataclass
class SceneParams:
    """Explicit renderer inputs.

    Fields are numpy arrays or ad Tensors, either single scenes
    (depth H x W, albedo H x W x 3, light 4, camera 6) or batches with a
    leading batch dimension.
    """

    depth: Any
    albedo: Any
    light: Any
    camera: Any

    def replace(self, **changes: Any) -> "SceneParams":
        return replace(self, **changes)

    def numpy(self) -> "SceneParams":
        return SceneParams(*(np.asarray(getattr(v, "data", v)) for v in self.fields()))

    def fields(self) -> tuple[Any, Any, Any, Any]:
        return self.depth, self.albedo, self.light, self.camera

    def range_errors(self, atol: float = 0.0) -> list[str]:
        """Describe every field outside its declared range (empty if valid)."""
        depth, albedo, light, camera = self.numpy().fields()
        errors = []
        if depth.size and (depth.min() < DEPTH_MIN - atol or depth.max() > DEPTH_MAX + atol):
            errors.append(f"depth outside [{DEPTH_MIN}, {DEPTH_MAX}]: [{depth.min()}, {depth.max()}]")
        if np.any(depth <= 0):
            errors.append("depth must be strictly positive")
        if albedo.size and (albedo.min() < -atol or albedo.max() > 1 + atol):
            errors.append(f"albedo outside [0, 1]: [{albedo.min()}, {albedo.max()}]")
        if light.shape[-1:] != (4,):
            errors.append(f"light must have 4 components (got shape {light.shape})")
        elif np.any(light < LIGHT_LOW - atol) or np.any(light > LIGHT_HIGH + atol):
            errors.append(f"light outside its range: {light.tolist()}")
        if camera.shape[-1:] != (6,):
            errors.append(f"camera must have 6 components (got shape {camera.shape})")
        elif np.any(camera < CAMERA_LOW - atol) or np.any(camera > CAMERA_HIGH + atol):
            errors.append(f"camera outside its range: {camera.tolist()}")
        return errors


@dataclass
class LabeledScene:
    image: np.ndarray
    params: SceneParams
    shape_class: int
    albedo_class: int
    seed: int
