"""Autoregressive inference with top-k sampling.

Image decoding is structure-constrained by default: BOI/RES/EOL/EOI are
emitted deterministically at their layout positions and pixel slots sample
only from the image-token range, so the output always parses at exactly the
requested resolution. `free_structure=True` disables the constraints and lets
layout errors propagate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LengthError, ModelConfig, ModelParams, forward_logits
from .synth import Image, Triplet
from .tasks import TaskKind
from .tokenizer import (MalformedSequenceError, Vocab, assemble_sequence,
                        dequantize_image, parse_sequence)


@dataclass(frozen=True)
class SampleConfig:
    top_k_text: int = 5
    top_k_image: int = 2048
    temperature: float = 1.0
    seed: int = 0
    free_structure: bool = False

    def __post_init__(self):
        if self.top_k_text < 1 or self.top_k_image < 1:
            raise ValueError("top_k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def _draw(logits: np.ndarray, k: int, temperature: float, rng: np.random.Generator) -> int:
    if not 1 <= k <= logits.shape[0]:
        raise ValueError(f"k={k} outside [1, {logits.shape[0]}]")
    order = np.argsort(-logits, kind="stable")[:k]
    kept = logits[order] / temperature
    kept -= kept.max()
    probs = np.exp(kept)
    probs /= probs.sum()
    return int(order[rng.choice(k, p=probs)])


def top_k_sample(logits, k: int, temperature: float = 1.0, seed: int = 0) -> int:
    """Sample among the k largest logits with probability prop. to
    exp(logit/temperature); deterministic under seed."""
    logits = np.asarray(logits, dtype=np.float64)
    return _draw(logits, k, temperature, np.random.default_rng(seed))


def generate(params: ModelParams, cfg: ModelConfig, vocab: Vocab, input_img: Image,
             instruction: str, target_resolution: tuple[int, int],
             sample_cfg: SampleConfig) -> Image:
    """Decode the output-image block after the assembled inference prefix;
    returns an image of exactly the target resolution."""
    h, w = target_resolution
    prefix = assemble_sequence(vocab, input_img, instruction, None)
    ids = list(int(i) for i in prefix.ids)
    block_len = 3 + h * (w + 1) + 1
    if len(ids) + block_len > cfg.max_seq_len:
        raise LengthError("sequence with output block would exceed max_seq_len")
    rng = np.random.default_rng(sample_cfg.seed)
    k_image = min(sample_cfg.top_k_image, vocab.levels_per_channel ** 3)

    if sample_cfg.free_structure:
        budget = cfg.max_seq_len - len(ids)
        for _ in range(budget):
            logits = forward_logits(params, cfg, np.array(ids))[-1]
            ids.append(_draw(logits, k_image, sample_cfg.temperature, rng))
            if ids[-1] == vocab.eoi and len(ids) > len(prefix) + 1:
                break
        _, _, out = parse_sequence(vocab, np.array(ids))
        if out is None:
            raise MalformedSequenceError("free-structure decode produced no output image",
                                         len(ids))
        return out

    plan: list[int | None] = [vocab.boi, vocab.res_h(h), vocab.res_w(w)]
    for _ in range(h):
        plan.extend([None] * w)
        plan.append(vocab.eol)
    plan.append(vocab.eoi)

    grid = np.empty((h, w), dtype=np.int64)
    r = c = 0
    for forced in plan:
        if forced is not None:
            ids.append(forced)
            continue
        logits = forward_logits(params, cfg, np.array(ids))[-1].copy()
        mask = np.full(logits.shape, -np.inf)
        mask[vocab.image_base:vocab.total_size] = 0.0
        token = _draw(logits + mask, k_image, sample_cfg.temperature, rng)
        ids.append(token)
        grid[r, c] = token
        c += 1
        if c == w:
            c = 0
            r += 1
    return dequantize_image(vocab, grid)


def batch_infer(params: ModelParams, cfg: ModelConfig, vocab: Vocab,
                triplets: list[Triplet], sample_cfg: SampleConfig
                ) -> list[tuple[Image, Image, TaskKind]]:
    """Element-wise generate over triplet sources; per-item seed = seed + index."""
    out = []
    for i, t in enumerate(triplets):
        item_cfg = SampleConfig(sample_cfg.top_k_text, sample_cfg.top_k_image,
                                sample_cfg.temperature, sample_cfg.seed + i,
                                sample_cfg.free_structure)
        gen = generate(params, cfg, vocab, t.source, t.instruction,
                       t.target.shape[:2], item_cfg)
        out.append((gen, t.target, t.task))
    return out
