"""Allan-variance noise characterization.

Generates a synthetic static gyro log with known white-noise density and
a slow bias walk, then recovers the parameters from the Allan deviation
curve.
"""

import math

import numpy as np

from mlio.allan import allan_variance


def main():
    rate = 100.0
    sigma_white = 0.02  # per-sample white noise
    n_true = sigma_white / math.sqrt(rate)
    rng = np.random.default_rng(2)
    n = int(rate * 600)  # 10 minutes
    samples = rng.normal(0.0, sigma_white, n)
    samples += np.cumsum(rng.normal(0.0, 2e-6, n))  # slow random walk

    res = allan_variance(samples, rate)
    print(f"true white-noise density : {n_true:.6f} /sqrt(Hz)")
    print(f"fitted                   : {res.white_noise_density:.6f} /sqrt(Hz) "
          f"({100 * abs(res.white_noise_density - n_true) / n_true:.1f}% off)")
    print(f"bias instability estimate: {res.bias_instability:.2e}")
    print("\ntau [s]    adev")
    for tau, adev in list(zip(res.tau, res.adev))[::8]:
        print(f"{tau:8.2f}  {adev:.3e}")


if __name__ == "__main__":
    main()
