#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Two views: microbenchmarks of each kernel at training-realistic shapes,
and an end-to-end forward+backward over one BPTT window. Run after
building the extension:

    python benchmarks/bench_kernels.py [--batch 20] [--hidden 200] [--repeat 200]
"""

import argparse
import time

import numpy as np

from wenas._kernels import ref

try:
    from wenas._kernels import fast
except ImportError:
    fast = None


def timeit(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def micro(batch, hidden, vocab, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, hidden))
    y = np.tanh(x)
    g = rng.normal(size=(batch, hidden))
    c = 1.0 / (1.0 + np.exp(-x))
    logits = rng.normal(size=(batch, vocab))
    targets = rng.integers(0, vocab, size=batch)
    _, probs = ref.softmax_xent_fwd(logits, targets)
    _, invstd = ref.bn_fwd(x, 1e-5)

    cases = [
        ("sigmoid_fwd", lambda m: m.sigmoid_fwd(x)),
        ("sigmoid_bwd", lambda m: m.sigmoid_bwd(c, g)),
        ("tanh_bwd", lambda m: m.tanh_bwd(y, g)),
        ("blend_fwd", lambda m: m.blend_fwd(x, c, y)),
        ("blend_bwd", lambda m: m.blend_bwd(x, c, y, g)),
        ("bn_fwd", lambda m: m.bn_fwd(x, 1e-5)),
        ("bn_bwd", lambda m: m.bn_bwd(y, invstd, g)),
        ("xent_fwd", lambda m: m.softmax_xent_fwd(logits, targets)),
        ("xent_bwd", lambda m: m.softmax_xent_bwd(probs, targets, 1.0)),
    ]
    print(f"\nkernels at batch={batch} hidden={hidden} vocab={vocab} ({repeat} reps)")
    print(f"{'kernel':<14}{'ref us':>10}{'fast us':>10}{'speedup':>9}")
    for name, call in cases:
        t_ref = timeit(lambda: call(ref), repeat) * 1e6
        if fast is None:
            print(f"{name:<14}{t_ref:>10.2f}{'n/a':>10}{'':>9}")
        else:
            t_fast = timeit(lambda: call(fast), repeat) * 1e6
            print(f"{name:<14}{t_ref:>10.2f}{t_fast:>10.2f}{t_ref / t_fast:>8.2f}x")


def _end_to_end_once(batch, hidden, vocab, bptt, repeat):
    from wenas.autodiff import Graph, zero_grads
    from wenas.data import BPTTWindow
    from wenas.genome import random_genome
    from wenas.model import ModelConfig, init_params, lm_forward, zero_state

    rng = np.random.default_rng(1)
    cfg = ModelConfig(
        vocab_size=vocab, emb_dim=hidden, hidden_dim=hidden, levels=8,
        batch_norm=True, mode="search",
    ).validate()
    genome = random_genome(8, rng)
    lmp = init_params(genome, cfg, rng)
    window = BPTTWindow(
        rng.integers(0, vocab, size=(batch, bptt)), rng.integers(0, vocab, size=(batch, bptt))
    )
    params = lmp.tensors()

    def step():
        graph = Graph()
        loss, _ = lm_forward(graph, genome, lmp, window, zero_state(cfg, batch), cfg)
        zero_grads(params)
        graph.backward(loss, params=params)

    return timeit(step, max(3, repeat // 20)) * 1e3


def end_to_end(batch, hidden, vocab, bptt, repeat):
    """Time a full forward+backward window under each backend (subprocesses,
    because the backend is fixed at import time)."""
    import json
    import os
    import subprocess
    import sys

    print(f"\nend-to-end window (batch={batch}, hidden={hidden}, vocab={vocab}, bptt={bptt})")
    for name in ("ref", "fast"):
        if name == "fast" and fast is None:
            print("  fast: extension not built")
            continue
        env = dict(os.environ, WENAS_KERNELS=name)
        code = (
            "import json, benchmarks.bench_kernels as b;"
            f"print(json.dumps(b._end_to_end_once({batch},{hidden},{vocab},{bptt},{repeat})))"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True,
        )
        print(f"  {name}: {json.loads(out.stdout.splitlines()[-1]):.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=200)
    ap.add_argument("--vocab", type=int, default=10000)
    ap.add_argument("--bptt", type=int, default=35)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if fast is None:
        print("compiled backend unavailable; showing reference timings only")
    micro(args.batch, args.hidden, args.vocab, args.repeat)
    end_to_end(args.batch, args.hidden, args.vocab, args.bptt, args.repeat)


if __name__ == "__main__":
    main()
