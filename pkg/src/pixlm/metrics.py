"""Image-quality metrics and the instruction-embedding PCA diagnostic.

Conventions: depth images decode to the 0-10 m range before RMSE; mIoU uses
exact color matching with one category tested per pass (reported as
reference-only); SSIM runs on luminance over non-overlapping 8x8 windows with
the standard constants; PSNR of identical images is the +inf sentinel.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .colors import resolve_color
from .synth import Image, decode_depth, luminance

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
PSNR_IDENTICAL = math.inf

EMBED_DIM = 256
POWER_TOL = 1e-9
POWER_MAX_ITERS = 10_000


def _check_same_shape(a: Image, b: Image) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _binary_mask(img: Image) -> np.ndarray:
    values = np.unique(img)
    if not np.isin(values, (0, 255)).all():
        raise ValueError("edge maps must contain only 0 and 255")
    return img.reshape(img.shape[0], img.shape[1], -1)[..., 0] == 255


def edge_f1(pred: Image, ref: Image) -> float:
    """Pixelwise F1 over white pixels; 1 if both maps empty, 0 if only one is."""
    _check_same_shape(pred, ref)
    p = _binary_mask(pred)
    r = _binary_mask(ref)
    tp = float(np.logical_and(p, r).sum())
    n_pred = float(p.sum())
    n_ref = float(r.sum())
    if n_pred == 0 and n_ref == 0:
        return 1.0
    if n_pred == 0 or n_ref == 0 or tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_ref
    return 2 * precision * recall / (precision + recall)


def ssim(a: Image, b: Image, window: int = SSIM_WINDOW,
         c1: float = SSIM_C1, c2: float = SSIM_C2) -> float:
    """Mean per-window SSIM of the luminance, non-overlapping windows."""
    _check_same_shape(a, b)
    h, w = a.shape[:2]
    if h < window or w < window:
        raise ValueError(f"images must be at least {window}x{window}")
    la = luminance(a)
    lb = luminance(b)
    values = []
    for y in range(0, h - window + 1, window):
        for x in range(0, w - window + 1, window):
            wa = la[y:y + window, x:x + window]
            wb = lb[y:y + window, x:x + window]
            mu_a = wa.mean()
            mu_b = wb.mean()
            var_a = ((wa - mu_a) ** 2).mean()
            var_b = ((wb - mu_b) ** 2).mean()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def psnr(a: Image, b: Image) -> float:
    _check_same_shape(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float((diff ** 2).mean())
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(255.0 ** 2 / mse)


def rmse_depth(pred: Image, ref: Image) -> float:
    """RMSE in meters after decoding both grayscale maps to the 0-10 m range."""
    _check_same_shape(pred, ref)
    dp = decode_depth(pred)
    dr = decode_depth(ref)
    return float(np.sqrt(((dp - dr) ** 2).mean()))


def miou(pred: Image, ref: Image, category_colors: dict) -> float:
    """Mean over categories present in the reference of the IoU of exact-color
    masks, each category evaluated in its own pass."""
    _check_same_shape(pred, ref)
    ious = []
    for category in sorted(category_colors):
        color = np.array(resolve_color(category_colors[category]), dtype=np.uint8)
        ref_mask = (ref == color).all(axis=-1)
        if not ref_mask.any():
            continue
        pred_mask = (pred == color).all(axis=-1)
        inter = float(np.logical_and(pred_mask, ref_mask).sum())
        union = float(np.logical_or(pred_mask, ref_mask).sum())
        ious.append(inter / union)
    if not ious:
        raise ValueError("no mapped category present in the reference image")
    return float(np.mean(ious))


def decode_normal_vectors(img: Image) -> np.ndarray:
    """RGB -> unit vectors (re-normalized to absorb quantization)."""
    n = img.astype(np.float64) / 127.5 - 1.0
    norms = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.maximum(norms, 1e-12)


def mean_angle_error(pred: Image, ref: Image) -> float:
    """Mean per-pixel angle between decoded normals, in degrees.

    atan2(|cross|, dot) rather than arccos(dot): exact 0 for identical
    vectors and well-conditioned near 0 and 180 degrees.
    """
    _check_same_shape(pred, ref)
    np_ = decode_normal_vectors(pred)
    nr = decode_normal_vectors(ref)
    dots = np.sum(np_ * nr, axis=-1)
    crosses = np.linalg.norm(np.cross(np_, nr), axis=-1)
    return float(np.degrees(np.arctan2(crosses, dots)).mean())


# --- instruction-embedding PCA diagnostic --------------------------------------

def _fnv1a(word: str) -> int:
    h = 0x811C9DC5
    for byte in word.encode("utf-8"):
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def embed_instructions(instructions: list[str], dim: int = EMBED_DIM) -> np.ndarray:
    """Hashed bag-of-words term-frequency vectors."""
    out = np.zeros((len(instructions), dim), dtype=np.float64)
    for i, text in enumerate(instructions):
        for word in text.lower().split():
            out[i, _fnv1a(word) % dim] += 1.0
    return out


def pca_top2(points: np.ndarray, tol: float = POWER_TOL,
             max_iters: int = POWER_MAX_ITERS) -> np.ndarray:
    """Project onto the top-2 principal directions found by power iteration
    with deflation; all-identical inputs warn and project to zeros."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("need at least 2 points")
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / points.shape[0]
    if not np.any(np.abs(cov) > 0):
        warnings.warn("degenerate variance: all points identical")
        return np.zeros((points.shape[0], 2))
    rng = np.random.default_rng(0)
    components = []
    work = cov.copy()
    for _ in range(2):
        v = rng.normal(size=cov.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(max_iters):
            nxt = work @ v
            norm = np.linalg.norm(nxt)
            if norm < tol:
                break
            nxt /= norm
            if nxt @ v < 0:
                nxt = -nxt
            if np.linalg.norm(nxt - v) < tol:
                v = nxt
                break
            v = nxt
        lam = float(v @ work @ v)
        components.append(v)
        work = work - lam * np.outer(v, v)
    basis = np.stack(components, axis=1)
    return centered @ basis


def pca_project(instructions: list[str], dims: int = 2) -> np.ndarray:
    if dims != 2:
        raise ValueError("only 2-D projection is supported")
    if len(instructions) < 2:
        raise ValueError("need at least 2 instructions")
    return pca_top2(embed_instructions(instructions))


# --- report -----------------------------------------------------------------

_TABLE_COLUMNS = ("F1", "SSIM", "PSNR", "RMSE", "mIoU", "MAE(deg)",
                  "FID", "IS", "LPIPS", "CLIP-S", "DINO")
_COLUMN_KEYS = {"F1": "f1", "SSIM": "ssim", "PSNR": "psnr", "RMSE": "rmse",
                "mIoU": "miou", "MAE(deg)": "mean_angle_error"}


class MetricReport:
    """Per-task metric scalars plus evaluated-pair counts.

    Learned-feature columns (FID, IS, LPIPS, CLIP-S, DINO) always render as
    n/a; per-category mIoU is flagged reference-only.
    """

    def __init__(self, protocol: str | None = None):
        self.protocol = protocol
        self.per_task: dict[str, dict[str, float]] = {}
        self.counts: dict[str, int] = {}
        self.notes: list[str] = ["miou uses per-category passes; reference only"]

    def add(self, task_key: str, values: dict[str, float], count: int) -> None:
        bucket = self.per_task.setdefault(task_key, {})
        bucket.update(values)
        self.counts[task_key] = self.counts.get(task_key, 0) + count

    @staticmethod
    def _encode(value: float):
        return "inf" if value == math.inf else value

    def to_json_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "per_task": {k: {m: self._encode(v) for m, v in sorted(vals.items())}
                         for k, vals in sorted(self.per_task.items())},
            "counts": dict(sorted(self.counts.items())),
            "notes": self.notes,
        }

    def render_table(self) -> str:
        width = max([len(k) for k in self.per_task] + [4])
        header = "task".ljust(width) + "".join(c.rjust(10) for c in _TABLE_COLUMNS) + "   n"
        lines = [header, "-" * len(header)]
        for task_key in sorted(self.per_task):
            vals = self.per_task[task_key]
            cells = []
            for col in _TABLE_COLUMNS:
                key = _COLUMN_KEYS.get(col)
                if key is None or key not in vals:
                    cells.append("n/a".rjust(10))
                elif vals[key] == math.inf:
                    cells.append("inf".rjust(10))
                else:
                    cells.append(f"{vals[key]:.4f}".rjust(10))
            lines.append(task_key.ljust(width) + "".join(cells)
                         + f"{self.counts.get(task_key, 0):>4d}")
        if self.protocol:
            lines.append(f"protocol: {self.protocol}")
        return "\n".join(lines) + "\n"
