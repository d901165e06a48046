"""Benchmark the serial coding kernels: numba build vs numpy fallback.

Times the three hot paths (encode-side masked parameter pass + table
build + range encode; serial decode; CDF construction alone) on a
synthetic latent cube at a few sizes, and verifies byte equality between
the builds while at it.

Run:  python3 benchmarks/bench_coding.py [--sizes 8,16,32]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from roicodec import kernels
from roicodec.kernels import CodingWeights, build_cdf, decode_y, encode_y, quantize_mu_sigma


def make_setup(m, h, w, seed=0):
    rng = np.random.default_rng(seed)
    f1, f2 = 10 * m // 3, 8 * m // 3
    weights = CodingWeights(
        ctx_w=rng.standard_normal((2 * m, m, 5, 5)) * 0.12,
        ctx_b=rng.standard_normal(2 * m) * 0.1,
        f1_w=rng.standard_normal((f1, 4 * m)) * 0.12,
        f1_b=rng.standard_normal(f1) * 0.1,
        f2_w=rng.standard_normal((f2, f1)) * 0.12,
        f2_b=rng.standard_normal(f2) * 0.1,
        f3_w=rng.standard_normal((2 * m, f2)) * 0.12,
        f3_b=rng.standard_normal(2 * m) * 0.1,
    )
    weights.ctx_w[:, :, 2, 2:] = 0.0
    weights.ctx_w[:, :, 3:, :] = 0.0
    symbols = rng.integers(-4, 5, size=(m, h, w)).astype(np.int32)
    hyper = (rng.standard_normal((2 * m, h, w)) * 0.4).astype(np.float64)
    return weights, symbols, hyper


def timed(fn, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_size(m, h, w):
    weights, symbols, hyper = make_setup(m, h, w)
    rows = []
    outputs = {}
    for build in ("numba", "numpy"):
        if build == "numba" and kernels._NUMBA is None:
            continue
        os.environ["ROICODEC_NUMBA"] = "1" if build == "numba" else "0"
        if build == "numba":
            encode_y(symbols, hyper, weights)  # JIT warm-up
        t_enc, (data, _) = timed(lambda: encode_y(symbols, hyper, weights))
        t_dec, decoded = timed(lambda: decode_y(data, hyper, weights, symbols.shape))
        assert np.array_equal(decoded, symbols)
        outputs[build] = data
        rows.append((build, t_enc, t_dec))
    if len(outputs) == 2:
        assert outputs["numba"] == outputs["numpy"], "builds must be byte-identical"
    return rows


def bench_cdf(n=20000):
    rng = np.random.default_rng(3)
    mu = rng.uniform(-10, 10, n)
    sg = np.exp(rng.uniform(np.log(0.05), np.log(8), n))
    mu_fp, sg_fp = quantize_mu_sigma(mu, sg)
    t0 = time.perf_counter()
    for i in range(n):
        build_cdf(int(mu_fp[i]), int(sg_fp[i]))
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="8,16", help="comma-separated latent h=w sizes")
    args = parser.parse_args()
    print(f"{'latent':>12} {'build':>7} {'encode':>10} {'decode':>10} {'speedup(dec)':>14}")
    for hw in (int(s) for s in args.sizes.split(",")):
        m = 96  # toy-profile latent channels
        rows = bench_size(m, hw, hw)
        base_dec = next((r[2] for r in rows if r[0] == "numpy"), None)
        for build, t_enc, t_dec in rows:
            speed = f"{base_dec / t_dec:10.1f}x" if base_dec and build == "numba" else ""
            print(f"{m}x{hw}x{hw:<6} {build:>7} {t_enc:9.3f}s {t_dec:9.3f}s {speed:>14}")
    t = bench_cdf()
    print(f"\npure-python CDF build: {t * 1e6 / 20000:.1f} us/table (20k tables in {t:.2f}s)")


if __name__ == "__main__":
    main()
