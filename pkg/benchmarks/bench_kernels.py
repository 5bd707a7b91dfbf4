"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--seconds 10] [--repeat 3]

Inputs come from one generated recording at sigma=0.1.
"""
import argparse
import timeit

import numpy as np

from evspike import encoder, kernels, synthgen


def workloads(seconds: float):
    rec, gt = synthgen.generate(synthgen.GeneratorConfig(duration_s=seconds, noise_sigma=0.1, seed=1))
    x = rec.samples.astype(np.float64)
    pcm = encoder.to_pcm(rec)
    times = pcm.bin_times_us()
    mask = np.ones(times.size, bool)
    return {
        "delta_modulate": lambda k: k.delta_modulate(x, 0.2, -0.2),
        "evspd_scan": lambda k: k.evspd_scan(pcm.bins, pcm.bin_us, 5, 11, 1000.0),
        "refractory_gate": lambda k: k.refractory_gate(times, 1000.0, mask),
        "greedy_match": lambda k: k.greedy_match(times, gt.spike_times_us, 500.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=10.0, help="recording length")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is available")
    jobs = workloads(args.seconds)
    names = sorted(backends)
    print(f"{'kernel':<18}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for job, fn in jobs.items():
        best = {n: min(timeit.repeat(lambda: fn(backends[n]), number=1, repeat=args.repeat)) * 1e3
                for n in names}
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{job:<18}" + "".join(f"{best[n]:>16.2f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
