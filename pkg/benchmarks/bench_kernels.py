"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the four hot kernels on training-shaped arrays, then a full training
run through each backend. Usage: python benchmarks/bench_kernels.py
"""
import time

import numpy as np

from fabmatch import kernels
from fabmatch.assocnet import CROSS_MODAL, build_model
from fabmatch.dataplane import SynthWorld, build_dataset, generate_fabrics
from fabmatch.trainer import TrainConfig, train

BATCH, FEAT, HID = 128, 256, 64
REPEAT = 300


def bench_kernels(backends, rounds=5):
    """Interleaved rounds per backend; keeps the minimum (noise-robust)."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(BATCH, FEAT))
    w = rng.normal(size=(HID, FEAT))
    b = rng.normal(size=HID)
    gz = rng.normal(size=(BATCH, HID))
    z = x @ w.T + b
    m, v = np.zeros_like(w), np.zeros_like(w)
    g = rng.normal(size=w.shape)
    cases = [
        ("affine_forward", lambda: kernels.affine_forward(x, w, b)),
        ("relu_forward", lambda: kernels.relu_forward(z)),
        ("relu_backward", lambda: kernels.relu_backward(gz, z)),
        ("affine_backward", lambda: kernels.affine_backward(gz, x, w)),
        ("adam_update", lambda: kernels.adam_update(w, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8)),
    ]
    results = {name: {case: float("inf") for case, _ in cases} for name in backends}
    for _ in range(rounds):
        for name in backends:
            kernels.use_backend(name)
            for case, fn in cases:
                fn()  # warm up
                t0 = time.perf_counter()
                for _ in range(REPEAT):
                    fn()
                per_call = (time.perf_counter() - t0) / REPEAT * 1e6
                results[name][case] = min(results[name][case], per_call)
    return results


def bench_training(backends, iterations=200, rounds=3):
    """Interleaved repeated runs; report the best round per backend."""
    fabrics = generate_fabrics(20, 0)
    world = SynthWorld(0)
    dataset = build_dataset(world, fabrics)
    best = {name: float("inf") for name in backends}
    for _ in range(rounds):
        for name in backends:
            kernels.use_backend(name)
            model = build_model(CROSS_MODAL, dataset.feature_dim, embedding_dim=32, seed=0)
            t0 = time.perf_counter()
            train(model, dataset, TrainConfig(iterations=iterations, master_seed=0))
            best[name] = min(best[name], (time.perf_counter() - t0) / iterations * 1e3)
    return best


def main():
    backends = ["python"]
    try:
        from fabmatch.kernels import cy_backend  # noqa: F401

        backends.append("cython")
    except ImportError:
        print("compiled backend not available; timing the fallback only")

    per_kernel = bench_kernels(backends)
    print(f"\nper-kernel best time, microseconds (batch {BATCH}, {FEAT}->{HID}):")
    names = list(next(iter(per_kernel.values())))
    header = f"{'kernel':18s}" + "".join(f"{b:>12s}" for b in backends)
    print(header)
    for name in names:
        row = f"{name:18s}" + "".join(f"{per_kernel[b][name]:12.1f}" for b in backends)
        if len(backends) == 2:
            ratio = per_kernel['python'][name] / per_kernel['cython'][name]
            row += f"   python/cython = {ratio:.2f}x"
        print(row)

    print("\nfull training step (3-branch cross-modal, batch 32), milliseconds:")
    for name, ms in bench_training(backends).items():
        print(f"  {name:8s} {ms:8.2f} ms/iteration")


if __name__ == "__main__":
    main()
