"""Supervised fine-tuning loop and checkpointing.

Triplets are pre-tokenized once, clustered into length buckets, and shuffled
within buckets each epoch under a seeded generator; batch gradients are the
output-token-weighted mean of per-sequence gradients, so results match a
padded batch with PAD excluded from loss and attention. Constant learning
rate (no schedule); clipping off by default.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .model import LossBreakdown, ModelConfig, ModelParams, loss_and_grads
from .seeding import mix_seed
from .synth import Triplet
from .tasks import Direction, TaskKind
from .tokenizer import TokenSequence, Vocab, assemble_sequence, bucket_by_length


class EmptyDatasetError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class NonFiniteGradientError(ValueError):
    pass


class CorruptCheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 4e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 1
    bucket_width: int = 64
    seed: int = 0
    excluded_tasks: frozenset[tuple[TaskKind, Direction]] = frozenset()
    grad_clip: float | None = None

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        # lr = 0 is tolerated so the no-op update law stays testable.
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls({k: np.zeros_like(t) for k, t in params.tensors.items()},
                   {k: np.zeros_like(t) for k, t in params.tensors.items()}, 0)


@dataclass(frozen=True)
class StepRecord:
    step: int
    ce: float
    z: float
    total: float
    tokens: int


def exclusion_filter(triplets: list[Triplet],
                     excluded: set[tuple[TaskKind, Direction]]) -> list[Triplet]:
    """Drop triplets whose (task, direction) is excluded; order preserved."""
    return [t for t in triplets if (t.task, t.direction) not in excluded]


def adamw_step(params: ModelParams, grads: dict[str, np.ndarray],
               state: OptimizerState, cfg: TrainConfig) -> tuple[ModelParams, OptimizerState]:
    """Bias-corrected moment update with decoupled weight decay."""
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for name in sorted(params.tensors):
        theta = params[name]
        g = grads.get(name)
        if g is None or g.shape != theta.shape:
            raise ShapeMismatchError(f"gradient missing or wrong shape for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps) \
            - cfg.lr * cfg.weight_decay * theta
        new_m[name] = m
        new_v[name] = v
    return ModelParams(new_params), OptimizerState(new_m, new_v, step)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def pretokenize(triplets: list[Triplet], vocab: Vocab) -> list[TokenSequence]:
    return [assemble_sequence(vocab, t.source, t.instruction, t.target) for t in triplets]


def train(params: ModelParams, model_cfg: ModelConfig, train_cfg: TrainConfig,
          triplets: list[Triplet], vocab: Vocab,
          state: OptimizerState | None = None, start_epoch: int = 0,
          callbacks: tuple = ()) -> tuple[ModelParams, OptimizerState, list[StepRecord]]:
    """Run the SFT loop; returns updated params, optimizer state, and the
    per-step metrics log. Callbacks receive (step, LossBreakdown, params) and
    may return True to stop early."""
    kept = exclusion_filter(triplets, set(train_cfg.excluded_tasks))
    if not kept:
        raise EmptyDatasetError("no triplets left after exclusion filtering")
    seqs = pretokenize(kept, vocab)
    buckets = bucket_by_length(seqs, train_cfg.bucket_width)
    if state is None:
        state = OptimizerState.zeros_like(params)
    records: list[StepRecord] = []
    stop = False
    for epoch in range(start_epoch, train_cfg.epochs):
        rng = np.random.default_rng(mix_seed(train_cfg.seed, "epoch", epoch))
        for key in sorted(buckets):
            bucket = buckets[key]
            order = rng.permutation(len(bucket))
            for lo in range(0, len(bucket), train_cfg.batch_size):
                batch = [bucket[i] for i in order[lo:lo + train_cfg.batch_size]]
                agg: dict[str, np.ndarray] | None = None
                ce_sum = z_sum = 0.0
                tokens = 0
                for seq in batch:
                    breakdown, grads = loss_and_grads(params, model_cfg, seq)
                    n = breakdown.n_output_tokens
                    ce_sum += breakdown.ce * n
                    z_sum += breakdown.z * n
                    tokens += n
                    if agg is None:
                        agg = {k: g * n for k, g in grads.items()}
                    else:
                        for k, g in grads.items():
                            agg[k] += g * n
                agg = {k: g / tokens for k, g in agg.items()}
                if train_cfg.grad_clip is not None:
                    agg = _clip_grads(agg, train_cfg.grad_clip)
                params, state = adamw_step(params, agg, state, train_cfg)
                ce = ce_sum / tokens
                z = z_sum / tokens
                record = StepRecord(state.step, ce, z,
                                    ce + model_cfg.z_loss_weight * z, tokens)
                records.append(record)
                breakdown = LossBreakdown(record.ce, record.z, record.total, record.tokens)
                for cb in callbacks:
                    if cb(record.step, breakdown, params):
                        stop = True
                if stop:
                    break
            if stop:
                break
        if stop:
            break
    return params, state, records


def write_metrics_csv(records: list[StepRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,ce,z,total,tokens\n")
        for r in records:
            f.write(f"{r.step},{r.ce!r},{r.z!r},{r.total!r},{r.tokens}\n")


# --- checkpoint container -----------------------------------------------------

_MAGIC = b"PXLMCKPT"


def save_checkpoint(params: ModelParams, state: OptimizerState, cfg: ModelConfig,
                    path, epochs_done: int = 0, extra: dict | None = None) -> None:
    """JSON header (config + tensor directory) followed by raw little-endian
    float64 data; bit-exact round trip."""
    entries: list[tuple[str, np.ndarray]] = []
    for name in sorted(params.tensors):
        entries.append((name, params[name]))
    for name in sorted(state.m):
        entries.append((f"opt.m.{name}", state.m[name]))
    for name in sorted(state.v):
        entries.append((f"opt.v.{name}", state.v[name]))
    directory = []
    offset = 0
    for name, arr in entries:
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps({
        "config": cfg.to_json_dict(),
        "step": state.step,
        "epochs_done": epochs_done,
        "extra": extra or {},
        "tensors": directory,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expected_config: ModelConfig | None = None
                    ) -> tuple[ModelParams, OptimizerState, ModelConfig, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _MAGIC:
        raise CorruptCheckpointError("bad magic")
    try:
        (hlen,) = struct.unpack_from("<I", blob, 8)
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"unreadable header: {e}") from None
    cfg = ModelConfig.from_json_dict(header["config"])
    if expected_config is not None and cfg != expected_config:
        raise ShapeMismatchError("checkpoint config does not match the expected ModelConfig")
    data = blob[12 + hlen:]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(data):
            raise CorruptCheckpointError(f"truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(data[start:end], dtype="<f8").reshape(shape).copy()
    params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("opt.m."):
            m[name[6:]] = arr
        elif name.startswith("opt.v."):
            v[name[6:]] = arr
        else:
            params[name] = arr
    state = OptimizerState(m, v, header["step"])
    extra = dict(header.get("extra", {}))
    extra["epochs_done"] = header.get("epochs_done", 0)
    return ModelParams(params), state, cfg, extra
