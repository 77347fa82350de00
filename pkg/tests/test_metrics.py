import math

import numpy as np
import pytest

from pixlm.metrics import (edge_f1, embed_instructions, mean_angle_error, miou,
                           pca_project, pca_top2, psnr, rmse_depth, ssim,
                           MetricReport, PSNR_IDENTICAL, SSIM_C1, SSIM_C2)
from pixlm.synth import encode_normals


# --- naive reference implementations (loops, no shared code paths) -----------

def naive_f1(pred, ref):
    tp = fp = fn = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            p = pred[y, x, 0] == 255
            r = ref[y, x, 0] == 255
            tp += p and r
            fp += p and not r
            fn += r and not p
    if tp + fp == 0 and tp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def naive_lum(img):
    out = np.zeros(img.shape[:2])
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            r, g, b = (float(v) for v in img[y, x])
            out[y, x] = 0.299 * r + 0.587 * g + 0.114 * b
    return out


def naive_ssim(a, b, window=8):
    la, lb = naive_lum(a), naive_lum(b)
    vals = []
    for y in range(0, a.shape[0] - window + 1, window):
        for x in range(0, a.shape[1] - window + 1, window):
            wa = la[y:y + window, x:x + window].ravel()
            wb = lb[y:y + window, x:x + window].ravel()
            n = len(wa)
            mu_a = sum(wa) / n
            mu_b = sum(wb) / n
            var_a = sum((v - mu_a) ** 2 for v in wa) / n
            var_b = sum((v - mu_b) ** 2 for v in wb) / n
            cov = sum((p - mu_a) * (q - mu_b) for p, q in zip(wa, wb)) / n
            vals.append((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
                        / ((mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)))
    return sum(vals) / len(vals)


def naive_psnr(a, b):
    total = 0.0
    n = 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            for c in range(3):
                total += (float(a[y, x, c]) - float(b[y, x, c])) ** 2
                n += 1
    mse = total / n
    return math.inf if mse == 0 else 10 * math.log10(255 ** 2 / mse)


def naive_rmse_depth(pred, ref):
    total = 0.0
    n = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            dp = 10.0 * (1.0 - pred[y, x, 0] / 255.0)
            dr = 10.0 * (1.0 - ref[y, x, 0] / 255.0)
            total += (dp - dr) ** 2
            n += 1
    return math.sqrt(total / n)


def naive_miou(pred, ref, colors):
    ious = []
    for cat in sorted(colors):
        col = colors[cat]
        inter = union = present = 0
        for y in range(pred.shape[0]):
            for x in range(pred.shape[1]):
                p = tuple(pred[y, x]) == col
                r = tuple(ref[y, x]) == col
                present += r
                inter += p and r
                union += p or r
        if present:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def naive_angle(pred, ref):
    total = 0.0
    n = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            vp = [pred[y, x, c] / 127.5 - 1.0 for c in range(3)]
            vr = [ref[y, x, c] / 127.5 - 1.0 for c in range(3)]
            np_ = math.sqrt(sum(v * v for v in vp)) or 1e-12
            nr = math.sqrt(sum(v * v for v in vr)) or 1e-12
            dot = sum(p * r for p, r in zip(vp, vr)) / (np_ * nr)
            total += math.degrees(math.acos(max(-1.0, min(1.0, dot))))
            n += 1
    return total / n


def random_binary(rng, shape=(16, 16)):
    mask = rng.random(shape) < 0.3
    img = np.zeros(shape + (3,), dtype=np.uint8)
    img[mask] = 255
    return img


def random_gray(rng, shape=(16, 16)):
    v = rng.integers(0, 256, size=shape).astype(np.uint8)
    return np.stack([v, v, v], axis=-1)


def random_rgb(rng, shape=(16, 16)):
    return rng.integers(0, 256, size=shape + (3,)).astype(np.uint8)


class TestEdgeF1:
    def test_identical_is_one(self):
        rng = np.random.default_rng(0)
        img = random_binary(rng)
        assert edge_f1(img, img) == 1.0

    def test_disjoint_is_zero(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.zeros((4, 4, 3), dtype=np.uint8)
        a[0, 0] = 255
        b[1, 1] = 255
        assert edge_f1(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.zeros((4, 4, 3), dtype=np.uint8)
        a[0, 0] = a[0, 1] = 255
        b[0, 1] = b[0, 2] = 255
        assert abs(edge_f1(a, b) - 0.5) < 1e-12

    def test_both_empty(self):
        z = np.zeros((4, 4, 3), dtype=np.uint8)
        assert edge_f1(z, z) == 1.0

    def test_non_binary_rejected(self):
        z = np.full((4, 4, 3), 7, dtype=np.uint8)
        with pytest.raises(ValueError):
            edge_f1(z, z)


class TestSSIM:
    def test_identical_is_one(self):
        rng = np.random.default_rng(1)
        img = random_rgb(rng)
        assert abs(ssim(img, img) - 1.0) < 1e-12

    def test_constant_images_closed_form(self):
        a = np.full((8, 8, 3), 40, dtype=np.uint8)
        b = np.full((8, 8, 3), 80, dtype=np.uint8)
        expected = (2 * 40 * 80 + SSIM_C1) / (40 ** 2 + 80 ** 2 + SSIM_C1)
        assert abs(ssim(a, b) - expected) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = random_rgb(rng), random_rgb(rng)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_too_small(self):
        z = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            ssim(z, z)


class TestPSNR:
    def test_identical_sentinel(self):
        rng = np.random.default_rng(3)
        img = random_rgb(rng)
        assert psnr(img, img) == PSNR_IDENTICAL

    def test_uniform_offset_16(self):
        a = np.full((8, 8, 3), 100, dtype=np.uint8)
        b = np.full((8, 8, 3), 116, dtype=np.uint8)
        assert abs(psnr(a, b) - 20 * math.log10(255 / 16)) < 1e-12
        assert abs(psnr(a, b) - 24.0494) < 1e-3

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a, b = random_rgb(rng), random_rgb(rng)
        assert abs(psnr(a, b) - psnr(b, a)) < 1e-12


class TestRMSEDepth:
    def test_identical_zero(self):
        rng = np.random.default_rng(5)
        img = random_gray(rng)
        assert rmse_depth(img, img) == 0.0

    def test_uniform_gray_offset(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.full((4, 4, 3), 51, dtype=np.uint8)
        assert abs(rmse_depth(a, b) - 2.0) < 1e-12  # 51 gray levels = 2 m

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a, b = random_gray(rng), random_gray(rng)
        assert abs(rmse_depth(a, b) - rmse_depth(b, a)) < 1e-12


class TestMIoU:
    PALETTE = {"a": (255, 0, 0), "b": (0, 255, 0)}

    def test_identical_is_one(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        img[0, :2] = (255, 0, 0)
        img[1, :3] = (0, 255, 0)
        assert miou(img, img, self.PALETTE) == 1.0

    def test_disjoint_equal_masks(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.zeros((4, 4, 3), dtype=np.uint8)
        a[0, 0] = (255, 0, 0)
        b[1, 1] = (255, 0, 0)
        assert miou(a, b, {"a": (255, 0, 0)}) == 0.0

    def test_one_of_three(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.zeros((4, 4, 3), dtype=np.uint8)
        a[0, 0] = a[0, 1] = (255, 0, 0)
        b[0, 1] = b[0, 2] = (255, 0, 0)
        assert abs(miou(a, b, {"a": (255, 0, 0)}) - 1.0 / 3.0) < 1e-12

    def test_category_absent_from_ref_skipped(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        ref = np.zeros((4, 4, 3), dtype=np.uint8)
        ref[0, 0] = (255, 0, 0)
        value = miou(a, ref, self.PALETTE)  # "b" absent from ref
        assert value == 0.0

    def test_range(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = np.zeros((6, 6, 3), dtype=np.uint8)
            b = np.zeros((6, 6, 3), dtype=np.uint8)
            a[rng.random((6, 6)) < 0.4] = (255, 0, 0)
            b[rng.random((6, 6)) < 0.4] = (255, 0, 0)
            if not (b == (255, 0, 0)).all(axis=-1).any():
                continue
            assert 0.0 <= miou(a, b, {"a": (255, 0, 0)}) <= 1.0


class TestAngle:
    def unit_image(self, vec, shape=(4, 4)):
        n = np.tile(np.asarray(vec, dtype=np.float64), shape + (1,))
        return encode_normals(n)

    def test_identical_zero(self):
        img = self.unit_image((0, 0, 1))
        assert mean_angle_error(img, img) == 0.0

    def test_opposite_is_180(self):
        a = self.unit_image((0, 0, 1))
        b = self.unit_image((0, 0, -1))
        assert abs(mean_angle_error(a, b) - 180.0) < 1.0

    def test_orthogonal_is_90(self):
        a = self.unit_image((1, 0, 0))
        b = self.unit_image((0, 0, 1))
        assert abs(mean_angle_error(a, b) - 90.0) < 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        a, b = random_rgb(rng), random_rgb(rng)
        assert abs(mean_angle_error(a, b) - mean_angle_error(b, a)) < 1e-12


class TestOracleEquivalence:
    """Every metric matches a naive loop reimplementation on random pairs."""

    def test_all_metrics_on_20_random_pairs(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            bp, br = random_binary(rng), random_binary(rng)
            assert abs(edge_f1(bp, br) - naive_f1(bp, br)) < 1e-6
            cp, cr = random_rgb(rng), random_rgb(rng)
            assert abs(ssim(cp, cr) - naive_ssim(cp, cr)) < 1e-4
            p = psnr(cp, cr)
            q = naive_psnr(cp, cr)
            assert p == q or abs(p - q) < 1e-6
            gp, gr = random_gray(rng), random_gray(rng)
            assert abs(rmse_depth(gp, gr) - naive_rmse_depth(gp, gr)) < 1e-6
            sp = np.zeros((16, 16, 3), dtype=np.uint8)
            sr = np.zeros((16, 16, 3), dtype=np.uint8)
            sp[rng.random((16, 16)) < 0.3] = (255, 0, 0)
            sr[rng.random((16, 16)) < 0.3] = (255, 0, 0)
            sr[0, 0] = (255, 0, 0)
            colors = {"a": (255, 0, 0)}
            assert abs(miou(sp, sr, colors) - naive_miou(sp, sr, colors)) < 1e-6
            assert abs(mean_angle_error(cp, cr) - naive_angle(cp, cr)) < 1e-6


class TestPCA:
    def test_two_point_projection(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0]])
        proj = pca_top2(pts)
        xs = sorted(proj[:, 0])
        assert abs(xs[0] + 1.0) < 1e-9 and abs(xs[1] - 1.0) < 1e-9

    def test_duplicates_warn_and_collapse(self):
        with pytest.warns(UserWarning):
            proj = pca_project(["same text here"] * 5)
        assert np.allclose(proj, 0.0)

    def test_variance_order(self):
        rng = np.random.default_rng(10)
        pts = np.column_stack([rng.normal(scale=5.0, size=200),
                               rng.normal(scale=1.0, size=200),
                               rng.normal(scale=0.2, size=200)])
        proj = pca_top2(pts)
        assert proj[:, 0].var() >= proj[:, 1].var()

    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(50, 6)) @ rng.normal(size=(6, 6))
        proj = pca_top2(pts)
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / len(pts)
        w, v = np.linalg.eigh(cov)
        expected = centered @ v[:, ::-1][:, :2]
        for col in range(2):
            diff = min(np.abs(proj[:, col] - expected[:, col]).max(),
                       np.abs(proj[:, col] + expected[:, col]).max())
            assert diff < 1e-6

    def test_requires_two_instructions(self):
        with pytest.raises(ValueError):
            pca_project(["only one"])

    def test_embedding_deterministic(self):
        a = embed_instructions(["paint the disc teal"])
        b = embed_instructions(["paint the disc teal"])
        assert np.array_equal(a, b)
        assert a.shape == (1, 256)


class TestReport:
    def test_json_encodes_inf(self):
        report = MetricReport(protocol="seen")
        report.add("derain:fwd", {"psnr": math.inf, "ssim": 1.0}, 4)
        blob = report.to_json_dict()
        assert blob["per_task"]["derain:fwd"]["psnr"] == "inf"
        assert blob["protocol"] == "seen"

    def test_table_contains_na_columns(self):
        report = MetricReport(protocol="seen")
        report.add("edge:fwd", {"f1": 0.5}, 2)
        table = report.render_table()
        assert "n/a" in table and "FID" in table and "0.5000" in table
