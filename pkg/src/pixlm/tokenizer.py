"""Unified discrete token space for text and pixels.

Text uses a frequency word vocabulary with byte fallback, so every UTF-8
string round-trips exactly. Pixels use a fixed uniform per-channel quantizer
with L levels (one token per pixel, L^3 image tokens). Structural markers
(BOS/SEP/BOI/EOI/EOL plus per-value resolution tokens) make the flat id
sequence parseable at any resolution up to `max_dim`.

Id space layout (all ranges disjoint):

    0                PAD
    1..6             BOS EOS SEP BOI EOI EOL
    7..              RES_H(1..max_dim), then RES_W(1..max_dim)
    then             256 byte tokens
    then             word tokens (frequency order)
    then             L^3 image tokens
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .synth import Image, Triplet
from .tasks import TaskKind

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3
BOI_ID = 4
EOI_ID = 5
EOL_ID = 6
_FIRST_RES = 7

INPUT, OUTPUT = 0, 1


class EmptyCorpusError(ValueError):
    pass


class UnknownTokenIdError(ValueError):
    pass


class OutOfRangeIdError(ValueError):
    pass


class OversizeError(ValueError):
    pass


class MalformedSequenceError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


class ChainMismatchError(ValueError):
    pass


@dataclass
class Vocab:
    words: tuple[str, ...]
    levels_per_channel: int = 8
    max_dim: int = 64
    text_tokens: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        L = self.levels_per_channel
        if L < 2:
            raise ValueError("levels_per_channel must be >= 2")
        self.res_h_base = _FIRST_RES
        self.res_w_base = self.res_h_base + self.max_dim
        self.byte_base = self.res_w_base + self.max_dim
        self.word_base = self.byte_base + 256
        self.image_base = self.word_base + len(self.words)
        self.total_size = self.image_base + L ** 3
        self.text_tokens = {w: self.word_base + i for i, w in enumerate(self.words)}
        assert len(self.text_tokens) == len(self.words), "duplicate words in vocab"

    # structural accessors
    pad = property(lambda self: PAD_ID)
    bos = property(lambda self: BOS_ID)
    eos = property(lambda self: EOS_ID)
    sep = property(lambda self: SEP_ID)
    boi = property(lambda self: BOI_ID)
    eoi = property(lambda self: EOI_ID)
    eol = property(lambda self: EOL_ID)

    def res_h(self, h: int) -> int:
        if not 1 <= h <= self.max_dim:
            raise OversizeError(f"height {h} outside [1, {self.max_dim}]")
        return self.res_h_base + h - 1

    def res_w(self, w: int) -> int:
        if not 1 <= w <= self.max_dim:
            raise OversizeError(f"width {w} outside [1, {self.max_dim}]")
        return self.res_w_base + w - 1

    def is_image_id(self, i: int) -> bool:
        return self.image_base <= i < self.total_size

    def to_json_dict(self) -> dict:
        return {
            "format": 1,
            "levels_per_channel": self.levels_per_channel,
            "max_dim": self.max_dim,
            "words": list(self.words),
            "text_tokens": dict(self.text_tokens),
            "structural": {
                "pad": PAD_ID, "bos": BOS_ID, "eos": EOS_ID, "sep": SEP_ID,
                "boi": BOI_ID, "eoi": EOI_ID, "eol": EOL_ID,
                "res_h_base": self.res_h_base, "res_w_base": self.res_w_base,
            },
            "byte_base": self.byte_base,
            "image_base": self.image_base,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["words"]), d["levels_per_channel"], d["max_dim"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


@dataclass
class TokenSequence:
    ids: np.ndarray        # (T,) int64
    role_mask: np.ndarray  # (T,) int64, INPUT or OUTPUT per token

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.role_mask = np.asarray(self.role_mask, dtype=np.int64)
        if self.ids.shape != self.role_mask.shape:
            raise ValueError("ids and role_mask must have the same length")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def build_text_vocab(corpus: list[str], max_size: int,
                     levels_per_channel: int = 8, max_dim: int = 64) -> Vocab:
    """Word vocabulary by descending frequency (ties: first occurrence),
    capped at `max_size` word slots; byte fallback covers the rest."""
    if not corpus:
        raise EmptyCorpusError("corpus must be non-empty")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    pos = 0
    for text in corpus:
        for word in text.split():
            counts[word] = counts.get(word, 0) + 1
            if word not in first_seen:
                first_seen[word] = pos
            pos += 1
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    return Vocab(tuple(ranked[:max_size]), levels_per_channel, max_dim)


_RUN_RE = re.compile(r"\S+|\s+")


def encode_text(v: Vocab, s: str) -> list[int]:
    ids: list[int] = []
    for run in _RUN_RE.findall(s):
        word_id = v.text_tokens.get(run)
        if word_id is not None and not run[0].isspace():
            ids.append(word_id)
        else:
            ids.extend(v.byte_base + b for b in run.encode("utf-8"))
    return ids


def decode_text(v: Vocab, ids) -> str:
    parts: list[str] = []
    pending = bytearray()
    for i in ids:
        i = int(i)
        if v.byte_base <= i < v.byte_base + 256:
            pending.append(i - v.byte_base)
            continue
        if pending:
            parts.append(pending.decode("utf-8"))
            pending = bytearray()
        if v.word_base <= i < v.image_base:
            parts.append(v.words[i - v.word_base])
        else:
            raise UnknownTokenIdError(f"id {i} is not a text token")
    if pending:
        parts.append(pending.decode("utf-8"))
    return "".join(parts)


def quantize_image(v: Vocab, img: Image) -> np.ndarray:
    """Per-pixel uniform quantization into a (H, W) grid of image-token ids."""
    L = v.levels_per_channel
    bins = (img.astype(np.int64) * L) // 256
    return v.image_base + bins[..., 0] * L * L + bins[..., 1] * L + bins[..., 2]


def dequantize_image(v: Vocab, grid: np.ndarray) -> Image:
    """Bin centers: channel value floor((bin + 0.5) * 256 / L)."""
    L = v.levels_per_channel
    grid = np.asarray(grid, dtype=np.int64)
    if grid.size and (grid.min() < v.image_base or grid.max() >= v.total_size):
        raise OutOfRangeIdError("grid contains non-image token ids")
    code = grid - v.image_base
    bins = np.stack([code // (L * L), (code // L) % L, code % L], axis=-1)
    return ((bins * 256 + 128) // L).astype(np.uint8)


def _image_block(v: Vocab, img: Image) -> list[int]:
    h, w = img.shape[:2]
    ids = [v.boi, v.res_h(h), v.res_w(w)]
    grid = quantize_image(v, img)
    for row in grid:
        ids.extend(int(x) for x in row)
        ids.append(v.eol)
    ids.append(v.eoi)
    return ids


def assemble_sequence(v: Vocab, input_img: Image, instruction: str,
                      output_img: Image | None = None) -> TokenSequence:
    """BOS, input image block, SEP, instruction ids, SEP, then (when present)
    the output image block, which is the only Output-flagged span."""
    ids = [v.bos] + _image_block(v, input_img) + [v.sep]
    ids += encode_text(v, instruction)
    ids.append(v.sep)
    n_input = len(ids)
    if output_img is not None:
        ids += _image_block(v, output_img)
    mask = np.full(len(ids), INPUT, dtype=np.int64)
    mask[n_input:] = OUTPUT
    return TokenSequence(np.array(ids, dtype=np.int64), mask)


def _parse_image_block(v: Vocab, ids: np.ndarray, pos: int) -> tuple[Image, int]:
    n = len(ids)

    def expect(cond: bool, message: str, at: int):
        if not cond:
            raise MalformedSequenceError(message, at)

    expect(pos < n and ids[pos] == v.boi, "expected BOI", pos)
    pos += 1
    expect(pos < n and v.res_h_base <= ids[pos] < v.res_h_base + v.max_dim,
           "expected height token", pos)
    h = int(ids[pos]) - v.res_h_base + 1
    pos += 1
    expect(pos < n and v.res_w_base <= ids[pos] < v.res_w_base + v.max_dim,
           "expected width token", pos)
    w = int(ids[pos]) - v.res_w_base + 1
    pos += 1
    grid = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            expect(pos < n and v.is_image_id(int(ids[pos])), "expected pixel token", pos)
            grid[r, c] = ids[pos]
            pos += 1
        expect(pos < n and ids[pos] == v.eol, "expected EOL", pos)
        pos += 1
    expect(pos < n and ids[pos] == v.eoi, "expected EOI", pos)
    return dequantize_image(v, grid), pos + 1


def parse_sequence(v: Vocab, ids) -> tuple[Image, str, Image | None]:
    """Inverse of assemble_sequence; raises MalformedSequenceError naming the
    first offending position."""
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    if n == 0 or ids[0] != v.bos:
        raise MalformedSequenceError("expected BOS", 0)
    input_img, pos = _parse_image_block(v, ids, 1)
    if pos >= n or ids[pos] != v.sep:
        raise MalformedSequenceError("expected SEP after input image", pos)
    pos += 1
    text_ids = []
    while pos < n and ids[pos] != v.sep:
        i = int(ids[pos])
        if not (v.byte_base <= i < v.image_base):
            raise MalformedSequenceError("expected text token or SEP", pos)
        text_ids.append(i)
        pos += 1
    if pos >= n:
        raise MalformedSequenceError("expected SEP after instruction", pos)
    instruction = decode_text(v, text_ids)
    pos += 1
    if pos == n:
        return input_img, instruction, None
    output_img, pos = _parse_image_block(v, ids, pos)
    if pos != n:
        raise MalformedSequenceError("trailing tokens after output image", pos)
    return input_img, instruction, output_img


def bucket_by_length(seqs: list[TokenSequence], bucket_width: int) -> dict[int, list[TokenSequence]]:
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    buckets: dict[int, list[TokenSequence]] = {}
    for seq in seqs:
        buckets.setdefault(len(seq) // bucket_width, []).append(seq)
    return buckets


def collapse_multiturn(t1: Triplet, t2: Triplet) -> Triplet:
    """Fold a two-turn chain (A -> B, B -> C) into one (A -> C) example with
    the concatenated instruction."""
    if t1.target.shape != t2.source.shape or not np.array_equal(t1.target, t2.source):
        raise ChainMismatchError("first target does not match second source")
    instruction = f"{t1.instruction} {t2.instruction}".strip()
    task = t1.task if t1.task is t2.task else TaskKind.COMPOSITIONAL_EDIT
    return Triplet(t1.source, instruction, t2.target, task, t1.direction, t1.scene_seed)


def pack_ids(ids) -> bytes:
    """Length-prefixed little-endian u32 array."""
    arr = np.asarray(ids, dtype=np.uint32)
    return struct.pack("<I", arr.size) + arr.astype("<u4").tobytes()


def unpack_ids(data: bytes) -> np.ndarray:
    (n,) = struct.unpack_from("<I", data, 0)
    arr = np.frombuffer(data, dtype="<u4", count=n, offset=4)
    return arr.astype(np.int64)
