"""Regenerate the fixed-point standard-normal CDF table shipped with the
package (src/roicodec/data/phi_table.npz).

The coding kernels never call libm for table construction; they look up
Phi in this integer table and interpolate with integer arithmetic, which
keeps CDF quantization a pure integer function of the fixed-point
Gaussian parameters. Table layout:

    phi[i] = round(Phi(-T + i/STEPS) * 2**32)   for i in 0..2*T*STEPS

with T = 12 and STEPS = 128. Values need uint64 (phi[-1] == 2**32).
"""

import os

import numpy as np
from scipy.stats import norm

T = 12
STEPS = 128


def build():
    grid = -T + np.arange(2 * T * STEPS + 1, dtype=np.float64) / STEPS
    phi = np.round(norm.cdf(grid) * (1 << 32)).astype(np.uint64)
    assert phi[0] == 0 and phi[-1] == (1 << 32)
    assert np.all(np.diff(phi.astype(np.int64)) >= 0)
    return phi


if __name__ == "__main__":
    out = os.path.join(os.path.dirname(__file__), "..", "src", "roicodec", "data", "phi_table.npz")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    np.savez_compressed(out, phi=build(), t=np.int64(T), steps=np.int64(STEPS))
    print(f"wrote {os.path.normpath(out)} ({build().size} entries)")
