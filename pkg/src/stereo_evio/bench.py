"""Micro-benchmarks: ZNCC scans, adaptive accumulation and IMU pre-integration."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import EventStream, US_PER_S
from .imu import ImuBias, ImuBuffer, preintegrate
from .mapping import BLOCK_SIZE, MAX_DISPARITY, zncc_fast_scan, zncc_naive_scan
from .representations import build_aa

MIN_REPS = 1000


@dataclass(frozen=True)
class Timing:
    name: str
    median_s: float
    reps: int

    def line(self):
        return f"{self.name:<28s} median {self.median_s * 1e3:10.4f} ms over {self.reps} reps"


def median_time(fn, reps, warmup=3):
    for _ in range(warmup):
        fn()
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    return float(np.median(times))


def zncc_inputs(rng, block=BLOCK_SIZE, search=MAX_DISPARITY):
    """A random patch and a strip wide enough for ``search`` candidates."""
    patch = rng.random((block, block))
    strip = rng.random((block, block + search - 1))
    return patch, strip, (0, search - 1)


def bench_zncc(reps=MIN_REPS, seed=0, block=BLOCK_SIZE, search=MAX_DISPARITY):
    """(naive, fast) median times for one full disparity scan."""
    patch, strip, rng_d = zncc_inputs(np.random.default_rng(seed), block, search)
    naive = median_time(lambda: zncc_naive_scan(patch, strip, rng_d), reps)
    fast = median_time(lambda: zncc_fast_scan(patch, strip, rng_d), reps)
    return (Timing(f"zncc naive {block}x{block}/{search}px", naive, reps),
            Timing(f"zncc fast {block}x{block}/{search}px", fast, reps))


def synthetic_events(n, width=640, height=480, span_us=10_000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, span_us, n))
    return EventStream(t, rng.integers(0, width, n), rng.integers(0, height, n),
                       rng.choice([-1, 1], n), width, height)


def bench_aa(reps=MIN_REPS, n_events=70_000, seed=0):
    ev = synthetic_events(n_events, seed=seed)
    return (Timing(f"aa build ({n_events} events)", median_time(lambda: build_aa(ev), reps), reps),)


def bench_preint(reps=MIN_REPS, n_samples=1000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples, dtype=np.int64) * (US_PER_S // 1000)
    buf = ImuBuffer(t, 0.1 * rng.standard_normal((n_samples, 3)),
                    rng.standard_normal((n_samples, 3)) + [0, 0, 9.81])
    return (Timing(f"preintegrate ({n_samples} samples)",
                   median_time(lambda: preintegrate(buf, ImuBias()), reps), reps),)


BENCHMARKS = {"zncc": bench_zncc, "aa": bench_aa, "preint": bench_preint}


def report(kind, reps=MIN_REPS, seed=0):
    if kind not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {kind!r}; choose from {sorted(BENCHMARKS)}")
    if reps < MIN_REPS:
        raise ValueError(f"at least {MIN_REPS} repetitions are required")
    timings = BENCHMARKS[kind](reps=reps, seed=seed)
    lines = [t.line() for t in timings]
    if kind == "zncc":
        naive, fast = timings
        lines.append(f"speedup (naive / fast)       {naive.median_s / fast.median_s:10.2f}x")
    return timings, "\n".join(lines) + "\n"
