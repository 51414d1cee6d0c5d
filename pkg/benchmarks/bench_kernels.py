"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow one training batch: 10 sessions of 24 turns, 50 hidden units,
and an optimizer step over a 3M-element weight (the three-modality fusion
head at 24 live turns touches 10% of it).
"""

import argparse
import time

import numpy as np

from questmf.kernels import get_backend


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def lstm_case(impl, B=10, T=24, H=50, seed=0):
    rng = np.random.default_rng(seed)
    gx = rng.normal(size=(B, T, 4 * H))
    w_h = rng.normal(size=(H, 4 * H)) * 0.1
    mask = np.arange(T)[None, :] < rng.integers(8, T + 1, size=B)[:, None]
    dout = rng.normal(size=(B, T, H))
    out, acts, cells = impl.lstm_forward(gx, w_h, mask, False)
    return {
        "lstm forward": lambda: impl.lstm_forward(gx, w_h, mask, False),
        "lstm backward": lambda: impl.lstm_backward(dout, acts, cells, out, w_h, mask, False),
    }


def adamw_case(impl, n=3_000_000, touched=0.1, seed=1):
    rng = np.random.default_rng(seed)
    p, m, v = rng.normal(size=n), np.zeros(n), np.zeros(n)
    dense = rng.normal(size=n)
    k = int(n * touched)
    partial = dense[:k]
    step = [0]

    def run(g, extent):
        step[0] += 1
        impl.adamw_update(p, g, m, v, 5e-4, 0.9, 0.999, 1e-8, 0.01, step[0], extent)

    return {
        "adamw dense": lambda: run(dense, n),
        "adamw leading 10%": lambda: run(partial, k),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = {"python": get_backend("python")}
    try:
        backends["compiled"] = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
    results = {}
    for name, impl in backends.items():
        # fresh buffers per backend so the dense and partial runs start alike
        cases = {**lstm_case(impl), **adamw_case(impl)}
        for case, fn in cases.items():
            results.setdefault(case, {})[name] = _best(fn, args.repeat)
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for case, row in results.items():
        cells = "".join(f"{row[b] * 1e3:>10.2f}ms" for b in backends)
        extra = f"{row['python'] / row['compiled']:>11.1f}x" if "compiled" in row else ""
        print(f"{case:<20}{cells}{extra}")


if __name__ == "__main__":
    main()
