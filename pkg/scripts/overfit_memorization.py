"""Overfit a tiny model on 16 triplets until greedy decoding reproduces every
target token-exactly.

Usage: python scripts/overfit_memorization.py [--out runs/overfit]
"""

import argparse
import os
import time

import numpy as np

from pixlm.dataset import write_manifest
from pixlm.grammar import builtin_library
from pixlm.model import ModelConfig, forward_logits, init_params
from pixlm.sampler import SampleConfig, generate
from pixlm.synth import make_bidirectional_triplets, synth_scene
from pixlm.tasks import TaskKind
from pixlm.tokenizer import (assemble_sequence, build_text_vocab,
                             dequantize_image, quantize_image)
from pixlm.trainer import TrainConfig, save_checkpoint, train


def build_triplets(n=16, seed=100):
    lib = builtin_library("a")
    tasks = (TaskKind.EDGE, TaskKind.DEPTH, TaskKind.SEGMENTATION, TaskKind.LOWLIGHT)
    triplets = []
    i = 0
    while len(triplets) < n:
        scene = synth_scene(8, 8, 2, seed=seed + i)
        fwd, inv = make_bidirectional_triplets(scene, tasks[i % len(tasks)],
                                               lib, seed=seed + i)
        triplets.extend([fwd, inv])
        i += 1
    return triplets[:n]


def teacher_forced_exact(params, cfg, seqs):
    for seq in seqs:
        logits = forward_logits(params, cfg, seq.ids)
        pos = np.nonzero(seq.role_mask[1:] == 1)[0]
        if not np.array_equal(np.argmax(logits[pos], axis=-1), seq.ids[pos + 1]):
            return False
    return True


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--max-steps", type=int, default=5000)
    args = ap.parse_args()

    t0 = time.time()
    triplets = build_triplets()
    vocab = build_text_vocab([t.instruction for t in triplets], 256)
    cfg = ModelConfig(vocab_size=vocab.total_size, d_model=64, n_layers=2,
                      n_heads=4, d_ff=128, max_seq_len=256)
    params = init_params(cfg, seed=args.seed)
    print(f"model parameters: {params.n_params():,}")
    seqs = [assemble_sequence(vocab, t.source, t.instruction, t.target)
            for t in triplets]

    tc = TrainConfig(lr=args.lr, batch_size=4, epochs=args.max_steps,
                     bucket_width=64, seed=args.seed)
    last_check = [0]

    def stop(step, breakdown, p):
        if step >= args.max_steps:
            return True
        if breakdown.ce < 0.05 and step - last_check[0] >= 25:
            last_check[0] = step
            return teacher_forced_exact(p, cfg, seqs)
        return False

    params, state, records = train(params, cfg, tc, triplets, vocab, callbacks=(stop,))
    print(f"stopped at step {records[-1].step}, batch ce {records[-1].ce:.4f}, "
          f"{time.time() - t0:.0f}s")

    exact = 0
    greedy = SampleConfig(top_k_image=1, seed=0)
    for t in triplets:
        out = generate(params, cfg, vocab, t.source, t.instruction,
                       t.target.shape[:2], greedy)
        want = dequantize_image(vocab, quantize_image(vocab, t.target))
        exact += int(np.array_equal(out, want))
    print(f"greedy token-exact reproductions: {exact}/{len(triplets)}")

    os.makedirs(args.out, exist_ok=True)
    vocab.save(os.path.join(args.out, "vocab.json"))
    save_checkpoint(params, state, cfg, os.path.join(args.out, "ckpt.bin"),
                    epochs_done=records[-1].step)
    write_manifest(args.out, "overfit-memorization",
                   {"lr": args.lr, "steps": records[-1].step,
                    "lr_note": "lr raised from 4e-5 to 1e-3 at this scale"},
                   args.seed, inputs=[], outputs=["ckpt.bin", "vocab.json"],
                   extra={"greedy_exact": exact})


if __name__ == "__main__":
    main()
