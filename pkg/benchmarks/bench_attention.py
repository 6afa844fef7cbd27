#!/usr/bin/env python3
"""Benchmark the compiled attention kernels against the numpy fallback.

Times the three kernels at training-realistic sizes, then a full
fine-tuning step with each backend driving the encoder. Run from the repo
root:

    python3 benchmarks/bench_attention.py
"""

import time

import numpy as np

from neuroalign.model import backend_np
from neuroalign.model import encoder
from neuroalign.model import GuidanceSpec, ModelConfig

try:
    from neuroalign import _kernels as compiled
except ImportError:
    compiled = None


def timeit(fn, repeat=200):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    print(f"{'kernel':<14} {'H':>2} {'P':>4} {'dk':>3} "
          f"{'numpy':>10} {'cython':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for H, P, dk in [(2, 12, 16), (2, 24, 16), (4, 32, 16), (8, 64, 32)]:
        q = rng.normal(size=(H, P, dk))
        k = rng.normal(size=(H, P, dk))
        v = rng.normal(size=(H, P, dk))
        km = np.ones(P, dtype=np.uint8)
        probs, ctx = backend_np.mha_forward(q, k, v, km)
        probs = np.ascontiguousarray(probs)
        d_ctx = rng.normal(size=(H, P, dk))
        adj = np.triu((rng.random((P, P)) < 0.3).astype(np.float64), 1)
        adj = adj + adj.T
        pm = km.copy()
        pm[0] = pm[-1] = 0

        cases = [
            ("mha_forward", lambda impl: impl.mha_forward(q, k, v, km)),
            ("mha_backward", lambda impl: impl.mha_backward(
                q, k, v, probs, d_ctx, None, km)),
            ("guidance_bce", lambda impl: impl.guidance_bce(probs, adj, pm)),
        ]
        for name, call in cases:
            t_np = timeit(lambda: call(backend_np))
            if compiled is None:
                print(f"{name:<14} {H:>2} {P:>4} {dk:>3} {t_np*1e6:>9.1f}u "
                      f"{'n/a':>10} {'n/a':>8}")
                continue
            t_cy = timeit(lambda: call(compiled))
            print(f"{name:<14} {H:>2} {P:>4} {dk:>3} {t_np*1e6:>9.1f}u "
                  f"{t_cy*1e6:>9.1f}u {t_np/t_cy:>7.1f}x")


def bench_train_step():
    from neuroalign.synth import GrammarSpec, gen_corpus
    from neuroalign.train import TrainConfig, train_mlm
    from neuroalign.wordpieces import build_vocab

    items = gen_corpus(GrammarSpec(seed=0), 100)
    graphs = [g for g, _ in items]
    vocab = build_vocab([" ".join(g.forms()) for g in graphs], 96)
    config = ModelConfig(n_layers=2, n_heads=2, d_model=32, d_ff=64,
                         vocab_size=len(vocab), max_len=24)
    spec = GuidanceSpec(n_layers=2, head_indices=(0, 1), alpha=0.1)
    tcfg = TrainConfig(steps=100, batch_size=8, learning_rate=1e-3, seed=0,
                       guidance=spec)

    backends = [("numpy", backend_np)]
    if compiled is not None:
        backends.append(("cython", compiled))
    print(f"\n{'full train step (guided, batch 8)':<40} {'per step':>10}")
    original = encoder.backend
    times = {}
    try:
        for name, impl in backends:
            encoder.backend = impl
            t0 = time.perf_counter()
            train_mlm(graphs, vocab, config, tcfg)
            per_step = (time.perf_counter() - t0) / tcfg.steps
            times[name] = per_step
            print(f"{name:<40} {per_step*1e3:>9.2f}ms")
    finally:
        encoder.backend = original
    if len(times) == 2:
        print(f"{'speedup':<40} {times['numpy']/times['cython']:>9.1f}x")


def main():
    which = "cython + numpy" if compiled is not None else "numpy only"
    print(f"available backends: {which}\n")
    bench_kernels()
    bench_train_step()


if __name__ == "__main__":
    main()
