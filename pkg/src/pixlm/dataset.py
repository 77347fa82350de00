"""Dataset shards, manifests, and deterministic triplet generation.

A dataset directory holds `data.jsonl` (one triplet per line: src, dst,
instruction, task, direction, scene_seed), an `images/` folder of PNGs, and a
`manifest.json` recording the generation config. Each forward/inverse pair
shares its two PNGs with the roles swapped, so the swap law is structural.
Regenerating from the manifest reproduces every byte.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .grammar import GrammarLibrary, builtin_library
from .seeding import mix_seed
from .synth import Image, Triplet, make_bidirectional_triplets, synth_scene
from .tasks import Direction, TaskKind


class DataError(ValueError):
    pass


def save_png(img: Image, path) -> None:
    PILImage.fromarray(img, mode="RGB").save(path, format="PNG")


def load_png(path) -> Image:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_manifest(out_dir, command: str, config: dict, seed: int,
                   inputs: list[str], outputs: list[str],
                   extra: dict | None = None) -> str:
    """Atomic manifest write next to the command's outputs."""
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "wall_clock_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        payload.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, path)
    return path


def read_manifest(dir_or_path) -> dict:
    path = dir_or_path
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest at {path}")
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@dataclass(frozen=True)
class GenConfig:
    scenes: int
    tasks: tuple[TaskKind, ...]
    width: int = 16
    height: int = 16
    objects_per_scene: int = 3
    seed: int = 0
    grammar_family: str = "a"

    def to_json_dict(self) -> dict:
        return {"scenes": self.scenes, "tasks": [t.value for t in self.tasks],
                "width": self.width, "height": self.height,
                "objects_per_scene": self.objects_per_scene, "seed": self.seed,
                "grammar_family": self.grammar_family}

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenConfig":
        return cls(scenes=d["scenes"], tasks=tuple(TaskKind.from_name(t) for t in d["tasks"]),
                   width=d.get("width", 16), height=d.get("height", 16),
                   objects_per_scene=d.get("objects_per_scene", 3),
                   seed=d.get("seed", 0), grammar_family=d.get("grammar_family", "a"))


def generate_triplets(cfg: GenConfig, family: str | None = None,
                      library: GrammarLibrary | None = None) -> list[tuple[Triplet, Triplet]]:
    """Deterministic (fwd, inv) pairs in canonical (scene_seed, task) order.

    Passing a different family re-phrases the instructions while leaving
    every pixel unchanged (the transform seeds do not involve the family).
    """
    lib = library or builtin_library(family or cfg.grammar_family)
    pairs: list[tuple[Triplet, Triplet]] = []
    tasks = sorted(cfg.tasks, key=lambda t: t.value)
    for i in range(cfg.scenes):
        scene_seed = cfg.seed + i
        scene = synth_scene(cfg.width, cfg.height, cfg.objects_per_scene, scene_seed)
        for task in tasks:
            trip_seed = mix_seed(cfg.seed, scene_seed, task.value)
            pairs.append(make_bidirectional_triplets(scene, task, lib, trip_seed))
    return pairs


def write_dataset(out_dir, pairs: list[tuple[Triplet, Triplet]], cfg: GenConfig) -> None:
    """Write PNG shards + JSONL, verifying the swap law before each write."""
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    lines: list[str] = []
    for fwd, inv in pairs:
        if not (np.array_equal(inv.source, fwd.target)
                and np.array_equal(inv.target, fwd.source)):
            raise DataError("swap law violated for "
                            f"scene {fwd.scene_seed}, task {fwd.task}")
        stem = f"{fwd.scene_seed:08d}_{fwd.task.value}"
        src_rel = f"images/{stem}_src.png"
        dst_rel = f"images/{stem}_dst.png"
        save_png(fwd.source, os.path.join(out_dir, src_rel))
        save_png(fwd.target, os.path.join(out_dir, dst_rel))
        for t, s_rel, d_rel in ((fwd, src_rel, dst_rel), (inv, dst_rel, src_rel)):
            lines.append(json.dumps({
                "src": s_rel, "dst": d_rel, "instruction": t.instruction,
                "task": t.task.value, "direction": t.direction.value,
                "scene_seed": t.scene_seed,
            }, sort_keys=True))
    with open(os.path.join(out_dir, "data.jsonl"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))
    write_manifest(out_dir, "gen-data", cfg.to_json_dict(), cfg.seed,
                   inputs=[], outputs=["data.jsonl", "images/"])


def load_dataset(dataset_dir) -> list[Triplet]:
    """Read triplets back from a dataset directory, shard order preserved."""
    jsonl = os.path.join(dataset_dir, "data.jsonl")
    if not os.path.exists(jsonl):
        raise DataError(f"no data.jsonl under {dataset_dir}")
    triplets: list[Triplet] = []
    cache: dict[str, Image] = {}

    def fetch(rel: str) -> Image:
        if rel not in cache:
            cache[rel] = load_png(os.path.join(dataset_dir, rel))
        return cache[rel]

    with open(jsonl, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triplets.append(Triplet(
                source=fetch(obj["src"]), instruction=obj["instruction"],
                target=fetch(obj["dst"]), task=TaskKind.from_name(obj["task"]),
                direction=Direction.from_name(obj["direction"]),
                scene_seed=obj["scene_seed"]))
    return triplets
