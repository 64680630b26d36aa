"""Procedural labeled scenes and persisted datasets."""

import colorsys
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from pydantic import TypeAdapter

from .ad.tensor import get_default_dtype
from .config import GeneratorConfig, RenderConfig
from .renderer import Renderer
from .scene import (
    CAMERA_HIGH,
    CAMERA_LOW,
    CANONICAL_CAMERA,
    CANONICAL_LIGHT,
    DEPTH_MAX,
    DEPTH_MIN,
    LIGHT_HIGH,
    LIGHT_LOW,
    STANDOFF,
    LabeledScene,
    SceneParams,
)
from .util.tensorio import DatasetError, read_json, read_tensor, write_json, write_tensor
from .util.seeding import rng_from_seed

logger = logging.getLogger(__name__)

SHAPE_CLASSES = ("dome", "ridge", "pyramid", "saddle", "twin-bump")
ALBEDO_CLASSES = ("flat", "stripes", "checker", "radial")
SPLITS = ("train", "val", "test")
ARRAYS = ("image", "depth", "albedo", "light", "camera")
MANIFEST_VERSION = 1

# Base hue per albedo class; scenes jitter around it
_BASE_HUES = (0.0, 0.33, 0.6, 0.13)

ProgressFn = Callable[[int, int, str], None]


# --- geometry ---

def _gaussian(x: np.ndarray, y: np.ndarray, cx: float, cy: float, sigma: float) -> np.ndarray:
    return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma * sigma))


def _height_template(shape_class: int, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    name = SHAPE_CLASSES[shape_class]
    if name == "dome":
        return _gaussian(x, y, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.35, 0.5))
    if name == "ridge":
        theta = rng.uniform(-0.25, 0.25)
        across = x * math.cos(theta) + y * math.sin(theta) - rng.uniform(-0.1, 0.1)
        return np.exp(-across ** 2 / (2.0 * rng.uniform(0.2, 0.3) ** 2))
    if name == "pyramid":
        p = 6.0
        radius = (np.abs(x) ** p + np.abs(y) ** p) ** (1.0 / p)
        return np.clip(1.0 - radius / rng.uniform(0.7, 0.9), 0.0, None)
    if name == "saddle":
        theta = rng.uniform(-0.3, 0.3)
        xr = x * math.cos(theta) - y * math.sin(theta)
        yr = x * math.sin(theta) + y * math.cos(theta)
        return xr * xr - yr * yr
    # twin-bump
    offset = rng.uniform(0.35, 0.5)
    sigma = rng.uniform(0.18, 0.25)
    shift = rng.uniform(-0.1, 0.1)
    return _gaussian(x, y, -offset, shift, sigma) + _gaussian(x, y, offset, -shift, sigma)


def make_depth(shape_class: int, size: int, rng: np.random.Generator, max_bumps: int = 4) -> np.ndarray:
    """Template plus up to ``max_bumps`` jitter bumps, mapped into [DEPTH_MIN, DEPTH_MAX].

    Higher relief sits closer to the camera.
    """
    coords = np.linspace(-1.0, 1.0, size)
    x, y = np.meshgrid(coords, coords)
    h = _height_template(shape_class, x, y, rng)
    for _ in range(int(rng.integers(0, max_bumps + 1))):
        h = h + rng.uniform(-0.15, 0.15) * _gaussian(
            x, y, rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(0.1, 0.25)
        )
    h = (h - h.min()) / (h.max() - h.min() + 1e-12)
    depth = STANDOFF * (1.0 + 0.1 * (1.0 - 2.0 * h))
    return np.clip(depth, DEPTH_MIN, DEPTH_MAX)


# --- albedo ---

def _color(hue: float, rng: np.random.Generator, jitter: float, value: tuple[float, float]) -> np.ndarray:
    h = (hue + rng.uniform(-jitter, jitter)) % 1.0
    return np.array(colorsys.hsv_to_rgb(h, rng.uniform(0.55, 0.85), rng.uniform(*value)))


def make_albedo(albedo_class: int, size: int, rng: np.random.Generator, hue_jitter: float = 0.08) -> np.ndarray:
    coords = np.linspace(-1.0, 1.0, size)
    x, y = np.meshgrid(coords, coords)
    hue = _BASE_HUES[albedo_class]
    primary = _color(hue, rng, hue_jitter, (0.75, 0.95))
    secondary = _color(hue + 0.5, rng, hue_jitter, (0.3, 0.5))
    name = ALBEDO_CLASSES[albedo_class]
    if name == "flat":
        mix = np.zeros_like(x)
    elif name == "stripes":
        freq = rng.uniform(2.0, 3.5)
        mix = 0.5 + 0.5 * np.tanh(4.0 * np.sin(math.pi * freq * y + rng.uniform(0, 2 * math.pi)))
    elif name == "checker":
        freq = rng.uniform(1.5, 2.5)
        phase = rng.uniform(0, 2 * math.pi, size=2)
        mix = 0.5 + 0.5 * np.tanh(
            4.0 * np.sin(math.pi * freq * x + phase[0]) * np.sin(math.pi * freq * y + phase[1])
        )
    else:
        cx, cy = rng.uniform(-0.2, 0.2, size=2)
        mix = np.clip(np.sqrt((x - cx) ** 2 + (y - cy) ** 2) / 1.2, 0.0, 1.0)
    albedo = (1.0 - mix)[..., None] * primary + mix[..., None] * secondary
    return np.clip(albedo, 0.0, 1.0)


# --- light and camera ---

def sample_light(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    r = cfg.ranges
    half = np.array([r.ambient, r.diffuse, r.light_pitch, r.light_yaw]) * cfg.range_scale
    return np.clip(CANONICAL_LIGHT + rng.uniform(-half, half), LIGHT_LOW, LIGHT_HIGH)


def sample_camera(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    r = cfg.ranges
    camera = CANONICAL_CAMERA.copy()
    camera[0] = rng.uniform(-r.camera_pitch, r.camera_pitch) * cfg.range_scale
    camera[1] = rng.uniform(-r.camera_yaw, r.camera_yaw) * cfg.range_scale
    return np.clip(camera, CAMERA_LOW, CAMERA_HIGH)


def generate_scene(
    seed: int,
    shape_class: int,
    albedo_class: int,
    cfg: GeneratorConfig | None = None,
    size: int = 64,
    render_cfg: RenderConfig | None = None,
) -> LabeledScene:
    """Deterministic function of (seed, classes, configs)."""
    cfg = cfg or GeneratorConfig()
    if not 0 <= shape_class < cfg.n_shape_classes:
        raise ValueError(f"shape_class must be in [0, {cfg.n_shape_classes}) (got: {shape_class})")
    if not 0 <= albedo_class < cfg.n_albedo_classes:
        raise ValueError(f"albedo_class must be in [0, {cfg.n_albedo_classes}) (got: {albedo_class})")

    rng = rng_from_seed(seed)
    dtype = get_default_dtype()
    params = SceneParams(
        depth=make_depth(shape_class, size, rng, cfg.max_bumps).astype(dtype),
        albedo=make_albedo(albedo_class, size, rng, cfg.hue_jitter).astype(dtype),
        light=sample_light(rng, cfg).astype(dtype),
        camera=sample_camera(rng, cfg).astype(dtype),
    )
    image = Renderer(size, render_cfg)(params).data
    return LabeledScene(
        image=image,
        params=params,
        shape_class=shape_class,
        albedo_class=albedo_class,
        seed=int(seed),
    )


# --- datasets ---

@dataclass
class DatasetSplit:
    """Stacked arrays for one split."""

    name: str
    indices: np.ndarray
    seeds: np.ndarray
    shape_labels: np.ndarray
    albedo_labels: np.ndarray
    images: np.ndarray
    params: SceneParams

    def __len__(self) -> int:
        return len(self.indices)

    def labels(self, kind: str) -> np.ndarray:
        if kind == "shape":
            return self.shape_labels
        if kind == "albedo":
            return self.albedo_labels
        raise ValueError(f"label kind must be 'shape' or 'albedo' (got: {kind})")


@dataclass
class Dataset:
    """A generated dataset held in memory."""

    manifest: dict[str, Any]
    images: np.ndarray
    depth: np.ndarray
    albedo: np.ndarray
    light: np.ndarray
    camera: np.ndarray
    path: Path | None = None
    _entries: list[dict[str, Any]] = field(init=False, repr=False)

    def __post_init__(self):
        self._entries = self.manifest["examples"]

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def image_size(self) -> int:
        return int(self.manifest["config"]["image_size"])

    def array(self, name: str) -> np.ndarray:
        return {"image": self.images, "depth": self.depth, "albedo": self.albedo,
                "light": self.light, "camera": self.camera}[name]

    def split(self, name: str) -> DatasetSplit:
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS} (got: {name})")
        idx = np.array([e["index"] for e in self._entries if e["split"] == name], dtype=np.intp)
        seeds = np.array([self._entries[i]["seed"] for i in idx], dtype=np.uint64)
        return DatasetSplit(
            name=name,
            indices=idx,
            seeds=seeds,
            shape_labels=np.array([self._entries[i]["shape_class"] for i in idx], dtype=np.intp),
            albedo_labels=np.array([self._entries[i]["albedo_class"] for i in idx], dtype=np.intp),
            images=self.images[idx],
            params=SceneParams(self.depth[idx], self.albedo[idx], self.light[idx], self.camera[idx]),
        )


def split_sizes(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Floor of n * f, remainder to the largest fractional parts (earlier split on ties)."""
    raw = [n * f for f in fractions]
    sizes = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda s: (-(raw[s] - sizes[s]), s))
    for s in order[: n - sum(sizes)]:
        sizes[s] += 1
    return sizes


def stratified_split(
    labels: np.ndarray,
    fractions: tuple[float, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """Assign each item a split index so every split keeps the class mix.

    Each class first fills floor(n_c * f_s) per split; its leftovers go to
    distinct splits, the one with the largest outstanding need first. Split
    totals equal ``split_sizes``.
    """
    n = len(labels)
    sizes = split_sizes(n, fractions)
    assignment = np.full(n, -1, dtype=np.intp)
    classes = np.unique(labels)
    quotas = {c: [int(math.floor(np.sum(labels == c) * f + 1e-9)) for f in fractions] for c in classes}
    need = [sizes[s] - sum(quotas[c][s] for c in classes) for s in range(len(fractions))]

    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        n_c = len(members)
        counts = list(quotas[c])
        leftover = n_c - sum(counts)
        used: set[int] = set()
        for _ in range(leftover):
            frac = [n_c * f - math.floor(n_c * f + 1e-9) for f in fractions]
            candidates = [s for s in range(len(fractions)) if s not in used] or list(range(len(fractions)))
            s = max(candidates, key=lambda s: (need[s], frac[s], -s))
            counts[s] += 1
            need[s] -= 1
            used.add(s)
        start = 0
        for s, count in enumerate(counts):
            assignment[members[start:start + count]] = s
            start += count
    return assignment


def _tensor_files(index: int) -> dict[str, str]:
    return {name: f"tensors/{index:06d}_{name}.pdrt" for name in ARRAYS}


def build_dataset(
    n: int,
    out_dir: Path,
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    cfg: GeneratorConfig | None = None,
    size: int = 64,
    render_cfg: RenderConfig | None = None,
    threads: int = 1,
    on_progress: ProgressFn | None = None,
) -> Dataset:
    """Generate ``n`` scenes, split them stratified by shape class and persist them.

    Args:
        n: Number of scenes (at least 10)
        out_dir: Dataset directory; created if missing
        seed: Seeds class sampling, per-scene seeds and the split
        threads: Worker threads for scene generation
        on_progress: Optional callback(current, total, message)
    """
    cfg = cfg or GeneratorConfig()
    render_cfg = render_cfg or RenderConfig()
    if n < 10:
        raise ValueError(f"a dataset needs at least 10 scenes (got: {n})")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1 (got: {list(fractions)})")

    rng = rng_from_seed(seed)
    shape_classes = rng.integers(0, cfg.n_shape_classes, size=n)
    albedo_classes = rng.integers(0, cfg.n_albedo_classes, size=n)
    seeds = rng.integers(0, 2 ** 63 - 1, size=n, dtype=np.int64)
    while len(np.unique(seeds)) < n:
        _, first = np.unique(seeds, return_index=True)
        dup = np.setdiff1d(np.arange(n), first)
        seeds[dup] = rng.integers(0, 2 ** 63 - 1, size=len(dup), dtype=np.int64)
    assignment = stratified_split(shape_classes, fractions, rng)

    def work(i: int) -> LabeledScene:
        return generate_scene(int(seeds[i]), int(shape_classes[i]), int(albedo_classes[i]), cfg, size, render_cfg)

    scenes: list[LabeledScene] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for i, scene in enumerate(pool.map(work, range(n))):
            scenes.append(scene)
            if on_progress:
                on_progress(i + 1, n, f"generated scene {i + 1}/{n}")

    dtype = get_default_dtype()
    manifest = {
        "version": MANIFEST_VERSION,
        "config": {
            "image_size": size,
            "precision": np.dtype(dtype).name,
            "seed": int(seed),
            "fractions": list(fractions),
            "generator": _as_dict(cfg),
            "render": _as_dict(render_cfg),
        },
        "examples": [
            {
                "index": i,
                "seed": int(seeds[i]),
                "shape_class": int(shape_classes[i]),
                "albedo_class": int(albedo_classes[i]),
                "split": SPLITS[assignment[i]],
                "files": _tensor_files(i),
            }
            for i in range(n)
        ],
    }
    dataset = Dataset(
        manifest=manifest,
        images=np.stack([s.image for s in scenes]),
        depth=np.stack([s.params.depth for s in scenes]),
        albedo=np.stack([s.params.albedo for s in scenes]),
        light=np.stack([s.params.light for s in scenes]),
        camera=np.stack([s.params.camera for s in scenes]),
        path=Path(out_dir),
    )
    save_dataset(dataset, Path(out_dir))
    return dataset


def _as_dict(cfg: Any) -> dict[str, Any]:
    return TypeAdapter(type(cfg)).dump_python(cfg, mode="json")


def save_dataset(dataset: Dataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(out_dir, e.strerror or e) from e
    for entry in dataset.manifest["examples"]:
        i = entry["index"]
        for name, rel in entry["files"].items():
            write_tensor(out_dir / rel, dataset.array(name)[i])
    write_json(out_dir / "manifest.json", dataset.manifest)
    logger.info(f"Wrote {len(dataset)} scenes to {out_dir}")


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(path, f"unsupported manifest version {manifest.get('version')}")
    entries = manifest["examples"]
    if not entries:
        raise DatasetError(path, "manifest lists no examples")
    arrays = {name: [] for name in ARRAYS}
    for entry in entries:
        for name in ARRAYS:
            arrays[name].append(read_tensor(path / entry["files"][name]))
    return Dataset(
        manifest=manifest,
        images=np.stack(arrays["image"]),
        depth=np.stack(arrays["depth"]),
        albedo=np.stack(arrays["albedo"]),
        light=np.stack(arrays["light"]),
        camera=np.stack(arrays["camera"]),
        path=path,
    )


def generator_config_of(dataset: Dataset) -> tuple[GeneratorConfig, RenderConfig]:
    cfg = dataset.manifest["config"]
    return GeneratorConfig(**cfg["generator"]), RenderConfig(**cfg["render"])


def regenerate_check(dataset: Dataset, indices: list[int] | None = None) -> list[int]:
    """Indices whose stored image differs bit-wise from a fresh generate_scene."""
    gen_cfg, render_cfg = generator_config_of(dataset)
    entries = dataset.manifest["examples"]
    mismatched = []
    for i in indices if indices is not None else range(len(entries)):
        e = entries[i]
        scene = generate_scene(e["seed"], e["shape_class"], e["albedo_class"], gen_cfg, dataset.image_size, render_cfg)
        if scene.image.dtype != dataset.images.dtype or not np.array_equal(scene.image, dataset.images[i]):
            mismatched.append(i)
    return mismatched


def regenerate_split(
    split: DatasetSplit,
    dataset: Dataset,
    range_scale: float,
    threads: int = 1,
) -> DatasetSplit:
    """Re-render a split's scenes with light/camera sampling widened by ``range_scale``.

    Geometry and albedo are regenerated from the same seeds, so only the
    light and camera distribution changes.
    """
    gen_cfg, render_cfg = generator_config_of(dataset)
    wide = GeneratorConfig(**{**_as_dict(gen_cfg), "range_scale": range_scale})

    def work(k: int) -> LabeledScene:
        return generate_scene(
            int(split.seeds[k]), int(split.shape_labels[k]), int(split.albedo_labels[k]),
            wide, dataset.image_size, render_cfg,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        scenes = list(pool.map(work, range(len(split))))
    return DatasetSplit(
        name=f"{split.name}@x{range_scale:g}",
        indices=split.indices,
        seeds=split.seeds,
        shape_labels=split.shape_labels,
        albedo_labels=split.albedo_labels,
        images=np.stack([s.image for s in scenes]),
        params=SceneParams(
            np.stack([s.params.depth for s in scenes]),
            np.stack([s.params.albedo for s in scenes]),
            np.stack([s.params.light for s in scenes]),
            np.stack([s.params.camera for s in scenes]),
        ),
    )
