import numpy as np
import pytest

from pdrlab.ad import Tensor, gradcheck, ops, parameter
from pdrlab.config import RenderConfig
from pdrlab.renderer import CameraIntrinsics, Renderer, light_direction, normals_from_depth, render, reproject, shade
from pdrlab.scene import SceneParams
from pdrlab.scenegen import generate_scene

SIZE = 8


def _scene(rng, camera=None, light=(1.0, 0.0, 0.0, 0.0)):
    depth = 1.0 + 0.05 * rng.uniform(-1, 1, size=(SIZE, SIZE))
    albedo = rng.uniform(0.1, 0.9, size=(SIZE, SIZE, 3))
    return SceneParams(depth, albedo, np.array(light, dtype=float), np.zeros(6) if camera is None else np.asarray(camera))


def test_intrinsics_from_fov():
    intr = CameraIntrinsics.from_fov(64, 30.0)
    assert intr.focal == pytest.approx(32.0 / np.tan(np.radians(15.0)))
    assert intr.cx == intr.cy == pytest.approx(31.5)


def test_flat_depth_normals(f64):
    n = normals_from_depth(np.full((5, 6), 1.0)).data
    np.testing.assert_allclose(n, np.broadcast_to([0.0, 0.0, 1.0], (5, 6, 3)), atol=1e-12)


def test_plane_normals(f64):
    u = np.arange(6.0)
    depth = 1.0 + np.broadcast_to(u, (5, 6))
    n = normals_from_depth(depth).data
    np.testing.assert_allclose(n, np.broadcast_to([-np.sqrt(0.5), 0.0, np.sqrt(0.5)], (5, 6, 3)), atol=1e-12)


def test_normals_are_unit(f64):
    depth = np.random.default_rng(0).uniform(0.9, 1.1, size=(2, 7, 7))
    n = normals_from_depth(depth, scale=16.0).data
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize(
    "pitch, yaw, expected",
    [(0.0, 0.0, (0, 0, 1)), (90.0, 37.0, (0, 1, 0)), (0.0, 90.0, (1, 0, 0))],
)
def test_light_direction(pitch, yaw, expected, f64):
    np.testing.assert_allclose(light_direction(pitch, yaw).data, expected, atol=1e-12)


def test_shade_cases(f64):
    rng = np.random.default_rng(1)
    albedo = rng.uniform(size=(4, 4, 3))
    flat = normals_from_depth(np.ones((4, 4)))
    np.testing.assert_allclose(shade(albedo, flat, [1.0, 0.0, 30.0, 10.0]).data, albedo)
    np.testing.assert_array_equal(shade(np.zeros((4, 4, 3)), flat, [0.4, 0.6, 0.0, 0.0]).data, 0.0)
    np.testing.assert_allclose(shade(albedo, flat, [0.0, 1.0, 0.0, 0.0]).data, albedo, atol=1e-12)


def test_identity_camera_reproduces_canonical(f64):
    rng = np.random.default_rng(2)
    params = _scene(rng)
    renderer = Renderer(SIZE, RenderConfig())
    canonical = renderer.canonical(params).data
    out = renderer(params).data
    np.testing.assert_allclose(out[1:-1, 1:-1], canonical[1:-1, 1:-1], atol=1e-3)


def test_ambient_render_passes_albedo_through(f64):
    params = _scene(np.random.default_rng(3))
    out = Renderer(SIZE)(params).data
    np.testing.assert_allclose(out[1:-1, 1:-1], params.albedo[1:-1, 1:-1], atol=1e-3)


def test_translation_shifts_image(f64):
    size = 32
    intr = CameraIntrinsics.from_fov(size)
    cfg = RenderConfig()
    stripe = np.zeros((size, size, 3))
    stripe[:, 12:14] = 1.0
    depth = np.ones((size, size))
    tx = 4.0 / intr.focal
    out = reproject(stripe, depth, np.array([0, 0, 0, tx, 0, 0.0]), intr, cfg).data[..., 0]
    profile = out[size // 2]
    source = stripe[size // 2, :, 0]
    corr = [np.dot(np.roll(source, s), profile) for s in range(-8, 9)]
    assert int(np.argmax(corr)) - 8 == 4
    assert out[size // 2, 16:18].mean() > 0.9


def test_small_yaw_moves_centroid_monotonically(f64):
    albedo = np.zeros((SIZE, SIZE, 3))
    albedo[2:6, 3:5] = 1.0
    params = SceneParams(np.ones((SIZE, SIZE)), albedo, np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(6))
    # pivot behind the surface so yaw sweeps the patch sideways
    renderer = Renderer(SIZE, RenderConfig(background=0.0, pivot_depth=2.0))
    centroids = []
    for yaw in (-6.0, -3.0, 0.0, 3.0, 6.0):
        img = renderer(params.replace(camera=np.array([0, yaw, 0, 0, 0, 0.0]))).data.sum(axis=-1)
        centroids.append((img.sum(axis=0) * np.arange(SIZE)).sum() / img.sum())
    diffs = np.diff(centroids)
    assert np.all(diffs > 0) or np.all(diffs < 0)


def test_render_is_deterministic_and_bounded():
    scene = generate_scene(7, 3, 2, size=16)
    renderer = Renderer(16)
    a = renderer(scene.params).data
    b = renderer(scene.params).data
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_batched_render_matches_single(f64):
    rng = np.random.default_rng(5)
    scenes = [_scene(rng, camera=[4.0 * k, -3.0, 1.0, 0.01, 0.0, 0.0], light=(0.3, 0.6, 10.0, 5.0)) for k in range(3)]
    batch = SceneParams(*(np.stack(f) for f in zip(*(s.fields() for s in scenes))))
    renderer = Renderer(SIZE)
    out = renderer(batch).data
    for k, s in enumerate(scenes):
        np.testing.assert_allclose(out[k], renderer(s).data, atol=1e-12)


def test_shape_errors():
    with pytest.raises(ValueError):
        reproject(np.zeros((8, 8, 3)), np.ones((8, 8)), np.zeros(5), CameraIntrinsics.from_fov(8), RenderConfig())


def test_render_gradients_wrt_every_scene_component(f64):
    rng = np.random.default_rng(6)
    depth = parameter(1.0 + 0.03 * rng.uniform(-1, 1, size=(SIZE, SIZE)))
    albedo = parameter(rng.uniform(0.2, 0.8, size=(SIZE, SIZE, 3)))
    light = parameter(np.array([0.3, 0.5, 12.0, -20.0]))
    camera = parameter(np.array([5.0, -7.0, 3.0, 0.02, -0.01, 0.03]))
    intr = CameraIntrinsics.from_fov(SIZE)
    cfg = RenderConfig(normal_scale=4.0)
    weights = Tensor(rng.uniform(size=(SIZE, SIZE, 3)))

    def fn():
        return ops.mean(render(SceneParams(depth, albedo, light, camera), intr, cfg) * weights)

    assert gradcheck(fn, [depth, albedo, light, camera], eps=1e-6, floor=1e-9) < 1e-3


def test_reproject_gradients_of_mean(f64):
    rng = np.random.default_rng(7)
    canonical = Tensor(rng.uniform(size=(SIZE, SIZE, 3)))
    depth = parameter(1.0 + 0.05 * rng.uniform(-1, 1, size=(SIZE, SIZE)))
    camera = parameter(np.array([-4.0, 6.0, -2.0, -0.02, 0.01, 0.0]))
    intr = CameraIntrinsics.from_fov(SIZE)

    def fn():
        return ops.mean(reproject(canonical, depth, camera, intr, RenderConfig()))

    assert gradcheck(fn, [depth, camera], eps=1e-6, floor=1e-9) < 1e-3
