"""Decoder-only autoregressive transformer over the unified vocabulary.

Pre-norm residual blocks: RMSNorm -> attention (RoPE + QK-Norm) -> residual,
RMSNorm -> SwiGLU FFN -> residual, with a final RMSNorm before the output
projection. Everything runs in float64 with hand-written analytic gradients;
`backward` is checked against central finite differences in the test suite.

The training objective is next-token cross-entropy restricted to positions
whose target token is Output-flagged, plus a z-loss penalty (squared
log-partition) averaged over the same positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tokenizer import OUTPUT, TokenSequence


class LengthError(ValueError):
    pass


class VocabRangeError(ValueError):
    pass


class OddDimensionError(ValueError):
    pass


class NoOutputTokensError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_seq_len: int
    rope_base: float = 10000.0
    rmsnorm_eps: float = 1e-5
    z_loss_weight: float = 1e-5

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise OddDimensionError("head dimension must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model,
            "n_layers": self.n_layers, "n_heads": self.n_heads, "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len, "rope_base": self.rope_base,
            "rmsnorm_eps": self.rmsnorm_eps, "z_loss_weight": self.z_loss_weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __setitem__(self, key: str, value: np.ndarray) -> None:
        self.tensors[key] = value


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    z: float
    total: float
    n_output_tokens: int


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Seeded normal(0, 0.02) projections, unit gains."""
    rng = np.random.default_rng(seed)

    def normal(*shape):
        return rng.normal(0.0, 0.02, size=shape)

    t: dict[str, np.ndarray] = {"embed": normal(cfg.vocab_size, cfg.d_model)}
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        t[p + "attn_norm"] = np.ones(cfg.d_model)
        t[p + "wq"] = normal(cfg.d_model, cfg.d_model)
        t[p + "wk"] = normal(cfg.d_model, cfg.d_model)
        t[p + "wv"] = normal(cfg.d_model, cfg.d_model)
        t[p + "wo"] = normal(cfg.d_model, cfg.d_model)
        t[p + "q_gain"] = np.ones(cfg.head_dim)
        t[p + "k_gain"] = np.ones(cfg.head_dim)
        t[p + "ffn_norm"] = np.ones(cfg.d_model)
        t[p + "w1"] = normal(cfg.d_model, cfg.d_ff)
        t[p + "w3"] = normal(cfg.d_model, cfg.d_ff)
        t[p + "w2"] = normal(cfg.d_ff, cfg.d_model)
    t["final_norm"] = np.ones(cfg.d_model)
    t["w_out"] = normal(cfg.d_model, cfg.vocab_size)
    return ModelParams(t)


# --- primitive ops -----------------------------------------------------------

def rmsnorm(x, gain, eps: float = 1e-5):
    """y_i = gain_i * x_i / sqrt(mean(x^2) + eps), over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if x.shape[-1] != gain.shape[-1]:
        raise ValueError("x and gain length mismatch")
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return gain * x / r


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def swish(z):
    return z * _sigmoid(z)


def swiglu(x, w1, w3, w2):
    """W2^T( swish(W1^T x) * (W3^T x) ); accepts scalars, vectors, or rows."""
    x = np.asarray(x, dtype=np.float64)
    u1 = np.dot(x, w1)
    u3 = np.dot(x, w3)
    return np.dot(swish(u1) * u3, w2)


def _rope_angles(positions, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(head_dim // 2, dtype=np.float64)
    freq = base ** (-2.0 * j / head_dim)
    theta = np.asarray(positions, dtype=np.float64)[..., None] * freq
    return np.cos(theta), np.sin(theta)


def rope_apply(x, position, base: float = 10000.0):
    """Rotate consecutive pairs (x_{2j}, x_{2j+1}) by position * base^(-2j/d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2 != 0:
        raise OddDimensionError("rotary embedding needs an even head dimension")
    cos, sin = _rope_angles(position, x.shape[-1], base)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _rope_apply_inverse(x, cos, sin):
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos + odd * sin
    out[..., 1::2] = -even * sin + odd * cos
    return out


def qk_norm(q, k, gains, eps: float = 1e-5):
    """RMS-normalize q and k independently, each scaled by its learned gain."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    q_gain, k_gain = gains
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("q and k head dimension mismatch")
    return rmsnorm(q, q_gain, eps), rmsnorm(k, k_gain, eps)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# --- forward / loss / backward ------------------------------------------------

def _check_ids(cfg: ModelConfig, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("ids must be one-dimensional")
    if len(ids) > cfg.max_seq_len:
        raise LengthError(f"sequence length {len(ids)} exceeds max {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise VocabRangeError("token id outside the vocabulary")
    return ids


def _forward(params: ModelParams, cfg: ModelConfig, ids: np.ndarray, keep_cache: bool):
    T = len(ids)
    H, hd = cfg.n_heads, cfg.head_dim
    eps = cfg.rmsnorm_eps
    scale = 1.0 / math.sqrt(hd)
    cos, sin = _rope_angles(np.arange(T), hd, cfg.rope_base)
    cos = cos[:, None, :]  # (T, 1, hd/2) broadcasting over heads
    sin = sin[:, None, :]
    causal = np.tril(np.ones((T, T), dtype=bool))

    x = params["embed"][ids]
    cache: dict = {"ids": ids, "cos": cos, "sin": sin, "layers": []}

    def norm_fwd(v, gain):
        r = np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + eps)
        return gain * v / r, r

    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a, ra = norm_fwd(x, params[p + "attn_norm"])
        q = (a @ params[p + "wq"]).reshape(T, H, hd)
        k = (a @ params[p + "wk"]).reshape(T, H, hd)
        v = (a @ params[p + "wv"]).reshape(T, H, hd)
        rq = np.sqrt(np.mean(q * q, axis=-1, keepdims=True) + eps)
        rk = np.sqrt(np.mean(k * k, axis=-1, keepdims=True) + eps)
        qh, kh = q / rq, k / rk
        qn = qh * params[p + "q_gain"]
        kn = kh * params[p + "k_gain"]
        qr = np.empty_like(qn)
        qr[..., 0::2] = qn[..., 0::2] * cos - qn[..., 1::2] * sin
        qr[..., 1::2] = qn[..., 0::2] * sin + qn[..., 1::2] * cos
        kr = np.empty_like(kn)
        kr[..., 0::2] = kn[..., 0::2] * cos - kn[..., 1::2] * sin
        kr[..., 1::2] = kn[..., 0::2] * sin + kn[..., 1::2] * cos
        scores = np.einsum("ihd,jhd->hij", qr, kr) * scale
        scores = np.where(causal[None, :, :], scores, -np.inf)
        probs = _softmax_rows(scores)
        ctx = np.einsum("hij,jhd->ihd", probs, v).reshape(T, cfg.d_model)
        attn_out = ctx @ params[p + "wo"]
        x_attn = x + attn_out
        b, rb = norm_fwd(x_attn, params[p + "ffn_norm"])
        u1 = b @ params[p + "w1"]
        u3 = b @ params[p + "w3"]
        sig = _sigmoid(u1)
        s = u1 * sig
        f = s * u3
        x_new = x_attn + f @ params[p + "w2"]
        if keep_cache:
            cache["layers"].append({
                "x": x, "a": a, "ra": ra, "q": q, "k": k, "v": v, "rq": rq, "rk": rk,
                "qh": qh, "kh": kh, "qr": qr, "kr": kr, "probs": probs, "ctx": ctx,
                "x_attn": x_attn, "b": b, "rb": rb, "u1": u1, "u3": u3,
                "sig": sig, "s": s, "f": f,
            })
        x = x_new

    hfin, rfin = norm_fwd(x, params["final_norm"])
    logits = hfin @ params["w_out"]
    if keep_cache:
        cache["x_final"] = x
        cache["hfin"] = hfin
        cache["rfin"] = rfin
    return logits, cache


def forward_logits(params: ModelParams, cfg: ModelConfig, ids) -> np.ndarray:
    """Logits grid (seq_len x vocab_size) under causal self-attention."""
    ids = _check_ids(cfg, ids)
    logits, _ = _forward(params, cfg, ids, keep_cache=False)
    return logits


def _loss_positions(seq: TokenSequence) -> np.ndarray:
    """Positions t whose *target* token t+1 is Output-flagged."""
    mask = seq.role_mask[1:] == OUTPUT
    positions = np.nonzero(mask)[0]
    if positions.size == 0:
        raise NoOutputTokensError("sequence has no Output-flagged target tokens")
    return positions


def logits_loss_terms(logits: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy and mean squared log-partition over the given rows."""
    lse = np.log(np.sum(np.exp(logits - logits.max(axis=-1, keepdims=True)), axis=-1))
    lse = lse + logits.max(axis=-1)
    ce = lse - logits[np.arange(len(targets)), targets]
    return float(ce.mean()), float((lse ** 2).mean())


def loss(params: ModelParams, cfg: ModelConfig, seq: TokenSequence) -> LossBreakdown:
    ids = _check_ids(cfg, seq.ids)
    positions = _loss_positions(seq)
    logits, _ = _forward(params, cfg, ids, keep_cache=False)
    ce, z = logits_loss_terms(logits[positions], ids[positions + 1])
    return LossBreakdown(ce, z, ce + cfg.z_loss_weight * z, int(positions.size))


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def loss_and_grads(params: ModelParams, cfg: ModelConfig,
                   seq: TokenSequence) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """One forward pass plus analytic gradients of the total loss."""
    ids = _check_ids(cfg, seq.ids)
    positions = _loss_positions(seq)
    logits, cache = _forward(params, cfg, ids, keep_cache=True)
    T = len(ids)
    n = positions.size
    w = cfg.z_loss_weight
    eps = cfg.rmsnorm_eps
    H, hd = cfg.n_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    cos, sin = cache["cos"], cache["sin"]

    rows = logits[positions]
    row_max = rows.max(axis=-1, keepdims=True)
    e = np.exp(rows - row_max)
    p = e / e.sum(axis=-1, keepdims=True)
    lse = np.log(e.sum(axis=-1)) + row_max[:, 0]
    targets = ids[positions + 1]
    ce = float((lse - rows[np.arange(n), targets]).mean())
    z = float((lse ** 2).mean())
    breakdown = LossBreakdown(ce, z, ce + w * z, int(n))

    dlogits = np.zeros_like(logits)
    drows = p.copy()
    drows[np.arange(n), targets] -= 1.0
    drows += 2.0 * w * lse[:, None] * p
    dlogits[positions] = drows / n

    grads = _zero_grads(params)

    def norm_bwd(dy, v, r, gain):
        dgain = np.sum(dy * v / r, axis=0)
        g_dy = dy * gain
        c = np.sum(g_dy * v, axis=-1, keepdims=True)
        dv = g_dy / r - v * c / (v.shape[-1] * r ** 3)
        return dv, dgain

    grads["w_out"] = cache["hfin"].T @ dlogits
    dhfin = dlogits @ params["w_out"].T
    dx, dgain = norm_bwd(dhfin, cache["x_final"], cache["rfin"], params["final_norm"])
    grads["final_norm"] = dgain

    for i in reversed(range(cfg.n_layers)):
        p_ = f"layer{i}."
        c = cache["layers"][i]
        # FFN block
        df = dx @ params[p_ + "w2"].T
        grads[p_ + "w2"] = c["f"].T @ dx
        ds = df * c["u3"]
        du3 = df * c["s"]
        du1 = ds * (c["sig"] + c["u1"] * c["sig"] * (1.0 - c["sig"]))
        db = du1 @ params[p_ + "w1"].T + du3 @ params[p_ + "w3"].T
        grads[p_ + "w1"] = c["b"].T @ du1
        grads[p_ + "w3"] = c["b"].T @ du3
        dx_attn, dgain = norm_bwd(db, c["x_attn"], c["rb"], params[p_ + "ffn_norm"])
        grads[p_ + "ffn_norm"] = dgain
        dx_attn = dx_attn + dx  # residual
        # attention block
        dctx = (dx_attn @ params[p_ + "wo"].T).reshape(T, H, hd)
        grads[p_ + "wo"] = c["ctx"].T @ dx_attn
        dprobs = np.einsum("ihd,jhd->hij", dctx, c["v"])
        dv = np.einsum("hij,ihd->jhd", c["probs"], dctx)
        inner = np.sum(dprobs * c["probs"], axis=-1, keepdims=True)
        dscores = c["probs"] * (dprobs - inner)
        dqr = np.einsum("hij,jhd->ihd", dscores, c["kr"]) * scale
        dkr = np.einsum("hij,ihd->jhd", dscores, c["qr"]) * scale
        dqn = _rope_apply_inverse(dqr, cos, sin)
        dkn = _rope_apply_inverse(dkr, cos, sin)
        grads[p_ + "q_gain"] = np.sum(dqn * c["qh"], axis=(0, 1))
        grads[p_ + "k_gain"] = np.sum(dkn * c["kh"], axis=(0, 1))
        dqh = dqn * params[p_ + "q_gain"]
        dkh = dkn * params[p_ + "k_gain"]
        cq = np.sum(dqh * c["q"], axis=-1, keepdims=True)
        dq = dqh / c["rq"] - c["q"] * cq / (hd * c["rq"] ** 3)
        ck = np.sum(dkh * c["k"], axis=-1, keepdims=True)
        dk = dkh / c["rk"] - c["k"] * ck / (hd * c["rk"] ** 3)
        da = (dq.reshape(T, -1) @ params[p_ + "wq"].T
              + dk.reshape(T, -1) @ params[p_ + "wk"].T
              + dv.reshape(T, -1) @ params[p_ + "wv"].T)
        grads[p_ + "wq"] = c["a"].T @ dq.reshape(T, -1)
        grads[p_ + "wk"] = c["a"].T @ dk.reshape(T, -1)
        grads[p_ + "wv"] = c["a"].T @ dv.reshape(T, -1)
        dx_pre, dgain = norm_bwd(da, c["x"], c["ra"], params[p_ + "attn_norm"])
        grads[p_ + "attn_norm"] = dgain
        dx = dx_pre + dx_attn  # residual

    np.add.at(grads["embed"], ids, dx)
    return breakdown, grads


def backward(params: ModelParams, cfg: ModelConfig, seq: TokenSequence) -> dict[str, np.ndarray]:
    """Analytic gradients of LossBreakdown.total for every parameter tensor."""
    return loss_and_grads(params, cfg, seq)[1]
