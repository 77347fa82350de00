"""Procedural scene synthesis and the task transforms that build triplets.

A scene is a stack of colored circles and rectangles over a flat background.
Because the scene is the ground truth, every dense target (edge map, depth
map, normal map, category masks) is exact, and every triplet comes with its
byte-identical inverse twin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .colors import resolve_color
from .seeding import mix_seed
from .tasks import CATEGORY_REGISTRY, RESTORATION_TASKS, Direction, TaskKind

Image = np.ndarray  # (H, W, 3) uint8

DEPTH_RANGE_M = 10.0
DEFAULT_EDGE_THRESHOLD = 96.0
DETECTION_THICKNESS = 1


class DimensionError(ValueError):
    pass


class NonGrayscaleError(ValueError):
    pass


class UnknownCategoryError(KeyError):
    pass


@dataclass
class SceneObject:
    shape: str  # "circle" | "rect"
    category: str
    color: tuple[int, int, int]
    depth_m: float
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), half-open


@dataclass
class Scene:
    width: int
    height: int
    objects: list[SceneObject]
    background: tuple[int, int, int]
    seed: int

    def categories(self) -> list[str]:
        return sorted({obj.category for obj in self.objects})


@dataclass(eq=False)  # holds arrays; compare by identity
class Triplet:
    source: Image
    instruction: str
    target: Image
    task: TaskKind
    direction: Direction
    scene_seed: int
    meta: dict = field(default_factory=dict, repr=False)


def synth_scene(width: int, height: int, n_objects: int, seed: int) -> Scene:
    """Sample a random scene; deterministic under seed."""
    if width < 8 or height < 8:
        raise DimensionError(f"canvas must be at least 8x8, got {width}x{height}")
    if not 1 <= n_objects <= 16:
        raise ValueError(f"n_objects must be in [1, 16], got {n_objects}")
    rng = np.random.default_rng(seed)
    background = tuple(int(v) for v in rng.integers(0, 96, size=3))
    objects = []
    for _ in range(n_objects):
        shape = "circle" if rng.random() < 0.5 else "rect"
        category = CATEGORY_REGISTRY[int(rng.integers(0, len(CATEGORY_REGISTRY)))]
        # Colors kept away from the dark background band so shapes stay visible.
        color = tuple(int(v) for v in rng.integers(112, 256, size=3))
        depth_m = float(rng.uniform(0.0, DEPTH_RANGE_M))
        w = int(rng.integers(2, max(3, width // 2) + 1))
        h = int(rng.integers(2, max(3, height // 2) + 1))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        objects.append(SceneObject(shape, category, color, depth_m, (x0, y0, x0 + w, y0 + h)))
    return Scene(width, height, objects, background, seed)


def _object_mask(obj: SceneObject, height: int, width: int) -> np.ndarray:
    x0, y0, x1, y1 = obj.bbox
    mask = np.zeros((height, width), dtype=bool)
    if obj.shape == "rect":
        mask[y0:y1, x0:x1] = True
        return mask
    cx = (x0 + x1 - 1) / 2.0
    cy = (y0 + y1 - 1) / 2.0
    rx = max((x1 - x0) / 2.0, 0.5)
    ry = max((y1 - y0) / 2.0, 0.5)
    ys, xs = np.mgrid[0:height, 0:width]
    u = (xs - cx) / rx
    v = (ys - cy) / ry
    mask = u * u + v * v <= 1.0
    mask[:y0, :] = False
    mask[y1:, :] = False
    mask[:, :x0] = False
    mask[:, x1:] = False
    return mask


def owner_map(scene: Scene) -> np.ndarray:
    """Index of the visible (last-painted) object per pixel, -1 for background."""
    owners = np.full((scene.height, scene.width), -1, dtype=np.int64)
    for idx, obj in enumerate(scene.objects):
        owners[_object_mask(obj, scene.height, scene.width)] = idx
    return owners


def render(scene: Scene) -> Image:
    """Rasterize opaquely, later objects painted over earlier ones."""
    img = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    img[:, :] = scene.background
    for obj in scene.objects:
        img[_object_mask(obj, scene.height, scene.width)] = obj.color
    return img


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _to_u8(x: np.ndarray) -> Image:
    return np.clip(_round_half_up(x), 0, 255).astype(np.uint8)


def luminance(img: Image) -> np.ndarray:
    f = img.astype(np.float64)
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


def edge_map(img: Image, threshold: float = DEFAULT_EDGE_THRESHOLD) -> Image:
    """Binary boundary map: white where the Sobel gradient magnitude of the
    luminance exceeds `threshold`, replicate padding at the borders."""
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise DimensionError("edge_map needs an image of at least 3x3")
    lum = luminance(img)
    padded = np.pad(lum, 1, mode="edge")
    gx = (
        padded[:-2, 2:] + 2 * padded[1:-1, 2:] + padded[2:, 2:]
        - padded[:-2, :-2] - 2 * padded[1:-1, :-2] - padded[2:, :-2]
    )
    gy = (
        padded[2:, :-2] + 2 * padded[2:, 1:-1] + padded[2:, 2:]
        - padded[:-2, :-2] - 2 * padded[:-2, 1:-1] - padded[:-2, 2:]
    )
    mag = np.sqrt(gx * gx + gy * gy)
    out = np.zeros_like(img)
    out[mag > threshold] = 255
    return out


def depth_map(scene: Scene) -> Image:
    """Grayscale depth with nearer surfaces brighter: v = round(255*(1 - d/10)),
    background at the far plane (d = 10 m -> 0)."""
    owners = owner_map(scene)
    depth = np.full(owners.shape, DEPTH_RANGE_M, dtype=np.float64)
    for idx, obj in enumerate(scene.objects):
        depth[owners == idx] = obj.depth_m
    v = _to_u8(255.0 * (1.0 - depth / DEPTH_RANGE_M))
    return np.stack([v, v, v], axis=-1)


def decode_depth(img: Image) -> np.ndarray:
    """Invert depth_map's pixel convention; returns meters, shape (H, W)."""
    if not (np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 0], img[..., 2])):
        raise NonGrayscaleError("depth images must have R == G == B")
    return DEPTH_RANGE_M * (1.0 - img[..., 0].astype(np.float64) / 255.0)


def encode_normals(n: np.ndarray) -> Image:
    """Unit normals (H, W, 3) -> RGB via round(127.5*(n + 1))."""
    return _to_u8(127.5 * (n + 1.0))


def normal_map(scene: Scene) -> Image:
    """Circles shaded as hemispheres, rectangles and background as flat
    camera-facing planes; normals encoded per channel."""
    h, w = scene.height, scene.width
    normals = np.zeros((h, w, 3), dtype=np.float64)
    normals[..., 2] = 1.0
    owners = owner_map(scene)
    ys, xs = np.mgrid[0:h, 0:w]
    for idx, obj in enumerate(scene.objects):
        vis = owners == idx
        if obj.shape != "circle" or not vis.any():
            continue
        x0, y0, x1, y1 = obj.bbox
        cx = (x0 + x1 - 1) / 2.0
        cy = (y0 + y1 - 1) / 2.0
        rx = max((x1 - x0) / 2.0, 0.5)
        ry = max((y1 - y0) / 2.0, 0.5)
        u = (xs - cx) / rx
        v = (ys - cy) / ry
        nz = np.sqrt(np.clip(1.0 - u * u - v * v, 0.0, None))
        normals[vis, 0] = u[vis]
        normals[vis, 1] = v[vis]
        normals[vis, 2] = nz[vis]
    return encode_normals(normals)


def segmentation_overlay(img: Image, scene: Scene, color_by_category: dict) -> Image:
    """Paint the visible pixels of mapped categories with a flat color;
    everything else stays byte-identical."""
    out = img.copy()
    if not color_by_category:
        return out
    resolved = {cat: resolve_color(col) for cat, col in color_by_category.items()}
    owners = owner_map(scene)
    for idx, obj in enumerate(scene.objects):
        if obj.category in resolved:
            out[owners == idx] = resolved[obj.category]
    return out


def detection_overlay(img: Image, scene: Scene, color_by_category: dict,
                      thickness: int = DETECTION_THICKNESS) -> Image:
    """Draw bbox borders for mapped categories; interiors untouched, borders
    clipped at the canvas."""
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    out = img.copy()
    if not color_by_category:
        return out
    resolved = {cat: resolve_color(col) for cat, col in color_by_category.items()}
    h, w = img.shape[:2]
    for obj in scene.objects:
        if obj.category not in resolved:
            continue
        color = resolved[obj.category]
        x0, y0, x1, y1 = obj.bbox
        ring = np.zeros((h, w), dtype=bool)
        ring[max(y0, 0):min(y1, h), max(x0, 0):min(x1, w)] = True
        ix0, iy0 = x0 + thickness, y0 + thickness
        ix1, iy1 = x1 - thickness, y1 - thickness
        if ix1 > ix0 and iy1 > iy0:
            ring[max(iy0, 0):min(iy1, h), max(ix0, 0):min(ix1, w)] = False
        out[ring] = color
    return out


DEGRADE_KINDS = RESTORATION_TASKS


def degrade(img: Image, kind: TaskKind, intensity: float, seed: int) -> Image:
    """Apply the named degradation at the given strength, deterministically."""
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity must be in [0, 1], got {intensity}")
    if kind not in DEGRADE_KINDS:
        raise ValueError(f"not a degradation kind: {kind}")
    if kind is TaskKind.DEHAZE:
        a = 0.6 * intensity
        return _to_u8((1.0 - a) * img.astype(np.float64) + a * 255.0)
    if kind is TaskKind.LOWLIGHT:
        return _to_u8(img.astype(np.float64) * (1.0 - 0.8 * intensity))
    if kind is TaskKind.BLUR:
        radius = int(np.ceil(3.0 * intensity))
        if radius == 0:
            return img.copy()
        return _box_blur(img, radius)
    h, w = img.shape[:2]
    rng = np.random.default_rng(seed)
    out = img.copy()
    if kind is TaskKind.DERAIN:
        n_streaks = int(round(intensity * h * w / 24.0))
        length = max(2, h // 3)
        for _ in range(n_streaks):
            x = int(rng.integers(0, w))
            y = int(rng.integers(0, h))
            for step in range(length):
                py, px = y + step, x + step // 3
                if py >= h or px >= w:
                    break
                out[py, px] = (235, 235, 245)
    else:  # DESNOW
        n_flakes = int(round(intensity * h * w * 0.10))
        if n_flakes > 0:
            idx = rng.integers(0, h * w, size=n_flakes)
            out.reshape(-1, 3)[idx] = (250, 250, 250)
    return out


def _box_blur(img: Image, radius: int) -> Image:
    k = 2 * radius + 1
    padded = np.pad(img.astype(np.float64), ((radius, radius), (radius, radius), (0, 0)),
                    mode="edge")
    # Separable: running-sum along each axis.
    csum = np.cumsum(padded, axis=0)
    csum = np.concatenate([np.zeros_like(csum[:1]), csum], axis=0)
    vert = (csum[k:] - csum[:-k]) / k
    csum = np.cumsum(vert, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    horiz = (csum[:, k:] - csum[:, :-k]) / k
    return _to_u8(horiz)


# --- compositional edits ---------------------------------------------------

_WEATHER_KINDS = {"rain": TaskKind.DERAIN, "haze": TaskKind.DEHAZE, "snow": TaskKind.DESNOW}


def validate_edit_ops(scene: Scene, ops: list[tuple]) -> None:
    if not ops:
        raise ValueError("ops must be non-empty")
    if len(ops) > 3:
        raise ValueError("at most 3 edit ops")
    present = set(scene.categories())
    for op in ops:
        name = op[0]
        if name == "recolor":
            _, category, color = op
            if category not in present:
                raise UnknownCategoryError(f"scene has no {category!r} objects")
            resolve_color(color)
        elif name == "weather":
            _, kind, intensity = op
            if kind not in _WEATHER_KINDS:
                raise ValueError(f"unknown weather kind: {kind!r}")
            if not 0.0 <= intensity <= 1.0:
                raise ValueError("weather intensity out of [0, 1]")
        elif name == "relight":
            _, intensity = op
            if not 0.0 <= intensity <= 1.0:
                raise ValueError("relight intensity out of [0, 1]")
        else:
            raise ValueError(f"unknown edit op: {name!r}")


def compositional_edit(scene: Scene, ops: list[tuple], seed: int) -> tuple[Image, Image, list[tuple]]:
    """Apply up to three edit ops in listed order; returns (source, target,
    description tokens) where the tokens are the validated op list."""
    validate_edit_ops(scene, ops)
    source = render(scene)
    target = source
    for i, op in enumerate(ops):
        if op[0] == "recolor":
            _, category, color = op
            target = segmentation_overlay(target, scene, {category: color})
        elif op[0] == "weather":
            _, kind, intensity = op
            target = degrade(target, _WEATHER_KINDS[kind], intensity, mix_seed(seed, "weather", i))
        else:
            _, intensity = op
            target = degrade(target, TaskKind.LOWLIGHT, intensity, mix_seed(seed, "relight", i))
    return source, target, list(ops)


# --- triplet assembly -------------------------------------------------------

def _sample_edit_ops(scene: Scene, rng: np.random.Generator, palette: list[str]) -> list[tuple]:
    n_ops = int(rng.integers(1, 4))
    cats = scene.categories()
    ops: list[tuple] = []
    used_recolor = set()
    for _ in range(n_ops):
        kind = rng.choice(["recolor", "weather", "relight"])
        if kind == "recolor":
            free = [c for c in cats if c not in used_recolor]
            if not free:
                kind = "relight"
            else:
                cat = str(rng.choice(free))
                used_recolor.add(cat)
                ops.append(("recolor", cat, str(rng.choice(palette))))
                continue
        if kind == "weather":
            ops.append(("weather", str(rng.choice(sorted(_WEATHER_KINDS))),
                        float(np.round(rng.uniform(0.3, 0.9), 2))))
        else:
            ops.append(("relight", float(np.round(rng.uniform(0.3, 0.8), 2))))
    return ops


def make_bidirectional_triplets(scene: Scene, task: TaskKind, grammars, seed: int) -> tuple[Triplet, Triplet]:
    """Build the forward triplet (A -> B) and its swapped inverse twin.

    `grammars` is a grammar.GrammarLibrary; transform randomness and
    instruction randomness draw from separate derived seeds so that swapping
    grammar families re-phrases without changing pixels.
    """
    rng = np.random.default_rng(mix_seed(seed, "transform", task.value))
    rendered = render(scene)
    bindings: dict[str, str] = {}
    meta: dict = {}

    if task is TaskKind.EDGE:
        a, b = rendered, edge_map(rendered)
    elif task is TaskKind.DEPTH:
        a, b = rendered, depth_map(scene)
    elif task is TaskKind.SURFACE_NORMAL:
        a, b = rendered, normal_map(scene)
    elif task is TaskKind.SEGMENTATION or task is TaskKind.DETECTION:
        category = str(rng.choice(scene.categories()))
        color = str(rng.choice(grammars.palette))
        bindings = {"category": category, "color": color}
        meta["color_by_category"] = {category: color}
        if task is TaskKind.SEGMENTATION:
            b = segmentation_overlay(rendered, scene, {category: color})
        else:
            b = detection_overlay(rendered, scene, {category: color})
        a = rendered
    elif task in RESTORATION_TASKS:
        intensity = float(rng.uniform(0.4, 0.9))
        meta["intensity"] = intensity
        # Forward direction is restoration: degraded source, clean target.
        a = degrade(rendered, task, intensity, mix_seed(seed, "degrade", task.value))
        b = rendered
    elif task is TaskKind.COMPOSITIONAL_EDIT:
        ops = _sample_edit_ops(scene, rng, grammars.palette)
        a, b, tokens = compositional_edit(scene, ops, mix_seed(seed, "edit"))
        meta["ops"] = tokens
        fwd_text, inv_text = grammars.instructions_for_edits(tokens, mix_seed(seed, "instruction"))
        fwd = Triplet(a, fwd_text, b, task, Direction.FORWARD, scene.seed, meta)
        inv = Triplet(b, inv_text, a, task, Direction.INVERSE, scene.seed, meta)
        return fwd, inv
    else:  # pragma: no cover - closed enum
        raise ValueError(f"unhandled task: {task}")

    pair = grammars.sample_pair(task, mix_seed(seed, "instruction"), bindings=bindings)
    fwd = Triplet(a, pair.forward_text, b, task, Direction.FORWARD, scene.seed, meta)
    inv = Triplet(b, pair.inverse_text, a, task, Direction.INVERSE, scene.seed, meta)
    return fwd, inv
