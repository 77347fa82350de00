import hashlib
import json
import os

import numpy as np
import pytest

from pixlm.cli import main
from pixlm.dataset import (GenConfig, generate_triplets, load_dataset,
                           load_png, read_manifest)
from pixlm.tasks import TaskKind


def sha_tree(root, skip=("manifest.json",)):
    """Hash every file under root except manifests (their wall-clock differs)."""
    digest = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            if name in skip:
                continue
            rel = os.path.relpath(os.path.join(dirpath, name), root)
            digest.update(rel.encode())
            with open(os.path.join(dirpath, name), "rb") as f:
                digest.update(f.read())
    return digest.hexdigest()


def write_gen_config(path, tasks, scenes=3, seed=11, size=8):
    cfg = {"scenes": scenes, "tasks": tasks, "width": size, "height": size,
           "objects_per_scene": 2, "seed": seed, "grammar_family": "a"}
    path.write_text(json.dumps(cfg))
    return cfg


def write_train_config(path, dataset_dir, excluded=(), epochs=2, seed=5,
                       d_model=16, max_seq_len=1024):
    cfg = {
        "dataset": str(dataset_dir),
        "tokenizer": {"levels_per_channel": 8, "max_dim": 64, "max_words": 256},
        "model": {"d_model": d_model, "n_layers": 1, "n_heads": 2, "d_ff": 32,
                  "max_seq_len": max_seq_len},
        "train": {"lr": 1e-3, "batch_size": 4, "epochs": epochs,
                  "bucket_width": 64, "seed": seed},
        "excluded_tasks": list(excluded),
    }
    path.write_text(json.dumps(cfg))
    return cfg


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared gen-data + train run for the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    gen_cfg = root / "gen.json"
    data_dir = root / "data"
    write_gen_config(gen_cfg, ["edge", "depth", "lowlight"], scenes=3, seed=11)
    assert main(["gen-data", "--config", str(gen_cfg), "--out", str(data_dir)]) == 0
    train_cfg = root / "train.json"
    run_dir = root / "run"
    write_train_config(train_cfg, data_dir,
                       excluded=["edge:inv", "depth:fwd"], epochs=1)
    assert main(["train", "--config", str(train_cfg), "--out", str(run_dir)]) == 0
    return root, data_dir, run_dir


class TestGenData:
    def test_triplet_count_law(self, tmp_path):
        cfg_path = tmp_path / "gen.json"
        write_gen_config(cfg_path, ["edge", "depth", "segmentation"], scenes=4)
        out = tmp_path / "ds"
        assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
        lines = (out / "data.jsonl").read_text().strip().splitlines()
        assert len(lines) == 4 * 3 * 2  # scenes x tasks x directions

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "gen.json"
        write_gen_config(cfg_path, ["edge", "lowlight"], scenes=2)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["gen-data", "--config", str(cfg_path), "--out", str(out1)])
        main(["gen-data", "--config", str(cfg_path), "--out", str(out2)])
        assert sha_tree(out1) == sha_tree(out2)

    def test_unknown_task_name_is_config_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "gen.json"
        write_gen_config(cfg_path, ["edge", "nonsense"])
        rc = main(["gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "nonsense" in capsys.readouterr().err

    def test_swap_law_on_disk(self, tmp_path):
        cfg_path = tmp_path / "gen.json"
        write_gen_config(cfg_path, ["segmentation"], scenes=2)
        out = tmp_path / "ds"
        main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
        rows = [json.loads(l) for l in (out / "data.jsonl").read_text().splitlines()]
        by_dir = {r["direction"]: r for r in rows if r["scene_seed"] == rows[0]["scene_seed"]}
        fwd, inv = by_dir["fwd"], by_dir["inv"]
        assert fwd["src"] == inv["dst"] and fwd["dst"] == inv["src"]
        a = load_png(out / fwd["dst"])
        b = load_png(out / inv["src"])
        assert np.array_equal(a, b)

    def test_manifest_written(self, tmp_path):
        cfg_path = tmp_path / "gen.json"
        write_gen_config(cfg_path, ["edge"], scenes=1)
        out = tmp_path / "ds"
        main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
        manifest = read_manifest(out)
        assert manifest["command"] == "gen-data"
        assert manifest["config"]["tasks"] == ["edge"]


class TestTrain:
    def test_outputs_exist(self, pipeline):
        _, _, run_dir = pipeline
        for name in ("ckpt.bin", "metrics.csv", "vocab.json", "manifest.json"):
            assert (run_dir / name).exists()

    def test_exclusions_echoed_in_manifest(self, pipeline):
        _, _, run_dir = pipeline
        manifest = read_manifest(run_dir)
        assert manifest["excluded_tasks"] == ["depth:fwd", "edge:inv"]

    def test_metrics_csv_schema(self, pipeline):
        _, _, run_dir = pipeline
        lines = (run_dir / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "step,ce,z,total,tokens"
        assert len(lines) > 1

    def test_missing_dataset_is_data_error(self, tmp_path):
        cfg_path = tmp_path / "train.json"
        write_train_config(cfg_path, tmp_path / "nope")
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 3

    def test_resume_matches_uninterrupted(self, tmp_path):
        gen_cfg = tmp_path / "gen.json"
        data_dir = tmp_path / "data"
        write_gen_config(gen_cfg, ["lowlight"], scenes=2, seed=3)
        main(["gen-data", "--config", str(gen_cfg), "--out", str(data_dir)])

        full_cfg = tmp_path / "full.json"
        write_train_config(full_cfg, data_dir, epochs=2)
        full_dir = tmp_path / "full"
        main(["train", "--config", str(full_cfg), "--out", str(full_dir)])

        half_cfg = tmp_path / "half.json"
        write_train_config(half_cfg, data_dir, epochs=1)
        half_dir = tmp_path / "half"
        main(["train", "--config", str(half_cfg), "--out", str(half_dir)])
        resumed_dir = tmp_path / "resumed"
        main(["train", "--config", str(full_cfg), "--out", str(resumed_dir),
              "--resume", str(half_dir / "ckpt.bin")])
        full_bytes = (full_dir / "ckpt.bin").read_bytes()
        resumed_bytes = (resumed_dir / "ckpt.bin").read_bytes()
        assert hashlib.sha256(full_bytes).hexdigest() == \
            hashlib.sha256(resumed_bytes).hexdigest()


class TestInfer:
    def test_infer_roundtrip_and_determinism(self, pipeline, tmp_path):
        root, data_dir, run_dir = pipeline
        rows = (data_dir / "data.jsonl").read_text().splitlines()
        first = json.loads(rows[0])
        image_path = data_dir / first["src"]
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            rc = main(["infer", "--checkpoint", str(run_dir / "ckpt.bin"),
                       "--image", str(image_path),
                       "--instruction", first["instruction"],
                       "--resolution", "8x8", "--seed", "4",
                       "--out", str(out)])
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_instruction_file_equivalent(self, pipeline, tmp_path):
        root, data_dir, run_dir = pipeline
        first = json.loads((data_dir / "data.jsonl").read_text().splitlines()[0])
        instr_file = tmp_path / "instr.txt"
        instr_file.write_text(first["instruction"] + "\n")
        out_flag = tmp_path / "flag.png"
        out_file = tmp_path / "file.png"
        base = ["infer", "--checkpoint", str(run_dir / "ckpt.bin"),
                "--image", str(data_dir / first["src"]),
                "--resolution", "8x8", "--seed", "4"]
        assert main(base + ["--instruction", first["instruction"],
                            "--out", str(out_flag)]) == 0
        assert main(base + ["--instruction-file", str(instr_file),
                            "--out", str(out_file)]) == 0
        assert out_flag.read_bytes() == out_file.read_bytes()

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        rc = main(["infer", "--checkpoint", str(tmp_path / "nope.bin"),
                   "--image", "x.png", "--instruction", "y",
                   "--resolution", "8x8", "--out", str(tmp_path / "o.png")])
        assert rc == 3


class TestEval:
    def test_seen_protocol_report(self, pipeline, tmp_path):
        _, data_dir, run_dir = pipeline
        out = tmp_path / "eval-seen"
        rc = main(["eval", "--checkpoint", str(run_dir / "ckpt.bin"),
                   "--dataset", str(data_dir), "--protocol", "seen",
                   "--limit", "4", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["protocol"] == "seen"
        assert report["per_task"]

    def test_unseen_instruction_disjoint(self, pipeline, tmp_path):
        _, data_dir, run_dir = pipeline
        out = tmp_path / "eval-ui"
        rc = main(["eval", "--checkpoint", str(run_dir / "ckpt.bin"),
                   "--dataset", str(data_dir), "--protocol", "unseen-instruction",
                   "--limit", "4", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["protocol"] == "unseen-instruction"
        # regenerated family-b instructions share nothing with the stored ones
        stored = {t.instruction for t in load_dataset(data_dir)}
        manifest = read_manifest(data_dir)
        regen = generate_triplets(GenConfig.from_json_dict(manifest["config"]),
                                  family="b")
        fresh = {t.instruction for pair in regen for t in pair}
        assert not (stored & fresh)

    def test_unseen_task_runs_exactly_held_out(self, pipeline, tmp_path):
        _, data_dir, run_dir = pipeline
        out = tmp_path / "eval-ut"
        rc = main(["eval", "--checkpoint", str(run_dir / "ckpt.bin"),
                   "--dataset", str(data_dir), "--protocol", "unseen-task",
                   "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert sorted(report["per_task"]) == ["depth:fwd", "edge:inv"]

    def test_unseen_task_refuses_without_exclusions(self, pipeline, tmp_path):
        root, data_dir, _ = pipeline
        plain_cfg = root / "plain_train.json"
        plain_dir = root / "plain_run"
        if not plain_dir.exists():
            write_train_config(plain_cfg, data_dir, excluded=[], epochs=1)
            assert main(["train", "--config", str(plain_cfg),
                         "--out", str(plain_dir)]) == 0
        rc = main(["eval", "--checkpoint", str(plain_dir / "ckpt.bin"),
                   "--dataset", str(data_dir), "--protocol", "unseen-task",
                   "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_report_bytes_reproducible(self, pipeline, tmp_path):
        _, data_dir, run_dir = pipeline
        hashes = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            main(["eval", "--checkpoint", str(run_dir / "ckpt.bin"),
                  "--dataset", str(data_dir), "--protocol", "seen",
                  "--limit", "2", "--seed", "7", "--out", str(out)])
            hashes.append(sha_tree(out))
        assert hashes[0] == hashes[1]


class TestDiagPCA:
    def test_points_per_task(self, pipeline, tmp_path, capsys):
        _, data_dir, _ = pipeline
        out = tmp_path / "pca"
        rc = main(["diag-pca", "--dataset", str(data_dir), "--out", str(out),
                   "--samples-per-task", "4"])
        assert rc == 0
        lines = (out / "points.csv").read_text().strip().splitlines()
        assert lines[0] == "task,x,y"
        rows = [l.split(",")[0] for l in lines[1:]]
        assert rows.count("edge") == 4 and rows.count("depth") == 4

    def test_warns_when_short(self, pipeline, tmp_path, capsys):
        _, data_dir, _ = pipeline
        out = tmp_path / "pca2"
        rc = main(["diag-pca", "--dataset", str(data_dir), "--out", str(out),
                   "--samples-per-task", "100"])
        assert rc == 0
        assert "warning" in capsys.readouterr().err
        scatter = json.loads((out / "scatter.json").read_text())
        assert set(scatter) == {"edge", "depth", "lowlight"}

    def test_deterministic(self, pipeline, tmp_path):
        _, data_dir, _ = pipeline
        outs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            main(["diag-pca", "--dataset", str(data_dir), "--out", str(out),
                  "--samples-per-task", "3", "--seed", "2"])
            outs.append(sha_tree(out))
        assert outs[0] == outs[1]


class TestDatasetRoundTrip:
    def test_load_matches_generated(self, tmp_path):
        cfg = GenConfig(scenes=2, tasks=(TaskKind.EDGE, TaskKind.DETECTION), seed=21)
        pairs = generate_triplets(cfg)
        from pixlm.dataset import write_dataset
        write_dataset(tmp_path, pairs, cfg)
        loaded = load_dataset(tmp_path)
        flat = [t for pair in pairs for t in pair]
        assert len(loaded) == len(flat)
        for got, want in zip(loaded, flat):
            assert got.instruction == want.instruction
            assert got.task is want.task and got.direction is want.direction
            assert np.array_equal(got.source, want.source)
            assert np.array_equal(got.target, want.target)
