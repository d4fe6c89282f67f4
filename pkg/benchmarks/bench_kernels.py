#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure numpy fallback.

Times the three hot per-frame kernels in isolation and a full 10k-frame
ingest through each backend. Run after an editable install:

    python3 benchmarks/bench_kernels.py [--frames 10000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from streammem._kernels import available_backends


def bench(fn, *args, repeat: int, inner: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def bench_kernels(repeat: int) -> list[tuple[str, dict[str, float]]]:
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, 3 * 640 * 480, dtype=np.uint8)
    px = rng.integers(0, 256, 64 * 64, dtype=np.uint8)
    h1 = rng.random(64)
    h1 /= h1.sum()
    h2 = rng.random(64)
    h2 /= h2.sum()

    rows = []
    for name, impl in available_backends().items():
        rows.append(
            (
                name,
                {
                    "grayscale 640x480": bench(impl.grayscale_from_rgb, rgb, repeat=repeat, inner=5),
                    "histogram 64x64/64": bench(impl.histogram_u8, px, 64, repeat=repeat, inner=200),
                    "pearson 64 bins": bench(impl.pearson, h1, h2, repeat=repeat, inner=2000),
                },
            )
        )
    return rows


def bench_ingest(n_frames: int) -> dict[str, float]:
    """Full admit loop per backend; subprocesses so the import-time backend
    selection takes effect."""
    import os
    import subprocess
    import sys

    snippet = f"""
import time
import numpy as np
from streammem.frames import sample_stream
from streammem.stm import ShortTermMemory
from streammem.synthetic import SceneSpec, StreamSpec, iter_source_frames
from streammem import kernel_backend

scenes = tuple(
    SceneSpec(duration_s={n_frames} / 20, base_intensity=(17 * i + 10) % 256, noise_amplitude=2)
    for i in range(20)
)
spec = StreamSpec(scenes=scenes, width=64, height=64, seed=1)
frames = list(sample_stream(iter_source_frames(spec)))
stm = ShortTermMemory(capacity=32, seed=0)
start = time.perf_counter()
for f in frames:
    stm.admit(f)
print(kernel_backend, time.perf_counter() - start)
"""
    results = {}
    for backend in available_backends():
        env = dict(os.environ, STREAMMEM_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, "-c", snippet], env=env, capture_output=True, text=True, check=True
        )
        name, seconds = out.stdout.split()
        results[name] = float(seconds)
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=10_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled backend missing; timing the pure backend only")

    rows = bench_kernels(args.repeat)
    kernels = list(rows[0][1])
    width = max(len(k) for k in kernels)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{name:>12}" for name, _ in rows)
    if len(rows) == 2:
        header += f"  {'speedup':>8}"
    print()
    print(header)
    print("-" * len(header))
    for kernel in kernels:
        line = f"{kernel:<{width}}  " + "  ".join(
            f"{timings[kernel] * 1e6:>10.1f}us" for _, timings in rows
        )
        if len(rows) == 2:
            line += f"  {rows[0][1][kernel] / rows[1][1][kernel]:>7.2f}x"
        print(line)

    print()
    print(f"full ingest of {args.frames} frames (admit loop only):")
    ingest = bench_ingest(args.frames)
    for name, seconds in ingest.items():
        print(f"  {name:>8}: {seconds:.2f}s")
    if len(ingest) == 2 and "native" in ingest and "pure" in ingest:
        print(f"  speedup: {ingest['pure'] / ingest['native']:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
