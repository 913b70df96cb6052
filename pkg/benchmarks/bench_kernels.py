"""Compare the compiled and numpy kernel paths.

    python benchmarks/bench_kernels.py [--repeat N]

Each workload is timed on every available backend; outputs are checked to be
bit-identical before timing.
"""
import argparse
import time

import numpy as np

from smartloop import dpo, kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(seed=0):
    gen = np.random.default_rng(seed)
    V = 64
    logp = dpo.log_softmax_rows(gen.normal(size=(V, V)))
    out = {}
    for n_seq, max_len in [(16, 10), (256, 40), (4096, 40)]:
        seqs = [gen.integers(0, V, size=int(gen.integers(1, max_len + 1))) for _ in range(n_seq)]
        tokens, offsets = kernels.pack(seqs)
        context = gen.integers(0, V, size=n_seq).astype(np.int64)
        weights = gen.normal(size=n_seq)
        out[f"logprob {n_seq}x{max_len}"] = ("logprob", (logp, context, tokens, offsets))
        out[f"scatter {n_seq}x{max_len}"] = ("scatter", (weights, context, tokens, offsets, V))
    for length in (50, 500, 5000):
        ids = gen.integers(0, 8, size=length).astype(np.int64)
        out[f"ngram3 len={length}"] = ("ngram", (ids, 3))
    return out


def run(backend, kind, args):
    if kind == "logprob":
        return backend.sequence_logprobs(*args)
    if kind == "scatter":
        weights, context, tokens, offsets, V = args
        grad = np.zeros((V, V))
        rowmass = np.zeros(V)
        backend.scatter_bigram(weights, context, tokens, offsets, grad, rowmass)
        return grad, rowmass
    return backend.max_ngram_count(*args)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    names = kernels.available_backends()
    print(f"backends: {', '.join(names)}")
    print(f"{'workload':<24}" + "".join(f"{n:>14}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for label, (kind, wargs) in workloads().items():
        results = [run(kernels.get_backend(n), kind, wargs) for n in names]
        for r in results[1:]:
            np.testing.assert_array_equal(np.asarray(r[0] if isinstance(r, tuple) else r),
                                          np.asarray(results[0][0] if isinstance(results[0], tuple) else results[0]))
        times = [_time(lambda b=kernels.get_backend(n): run(b, kind, wargs), args.repeat) for n in names]
        line = f"{label:<24}" + "".join(f"{t * 1e6:>12.1f}us" for t in times)
        if len(times) > 1:
            line += f"  {times[1] / times[0]:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
